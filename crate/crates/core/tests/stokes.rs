use std::f64::consts::PI;

use achopf_core::error::Error;
use achopf_core::linalg::C64;
use achopf_core::model::Mode;
use achopf_core::stokes::{solve_stokes_mode, stokes_sweep};

fn alpha() -> f64 {
    PI / 2f64.sqrt()
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[test]
fn closed_form_solution() {
    let mode = Mode::new(2, 3);
    let (a, b, mu) = (mode.a(alpha()), mode.b(), mode.mu(alpha()));
    let (f, g) = (c(0.3, -1.0), [c(1.0, 0.5), c(-2.0, 0.25)]);
    let s = solve_stokes_mode(mode, alpha(), f, g).unwrap();
    let p = f - (g[0] * a + g[1] * b) / mu;
    assert!((s.p - p).norm() < 1e-13);
    assert!((s.v1 - (g[0] + p * a) / mu).norm() < 1e-14);
    assert!((s.v2 - (g[1] + p * b) / mu).norm() < 1e-14);
    assert!(s.residual <= 1e-12);
}

#[test]
fn gradient_data_gives_pure_pressure() {
    for (j, k) in [(1, 1), (3, 7), (32, 32)] {
        let mode = Mode::new(j, k);
        let q = c(0.7, -0.2);
        let g = [q * -mode.a(alpha()), q * -mode.b()];
        let s = solve_stokes_mode(mode, alpha(), c(0.0, 0.0), g).unwrap();
        assert!(s.v1.norm() + s.v2.norm() < 1e-15 * q.norm() * mode.mu(alpha()).sqrt());
        assert!((s.p - q).norm() < 1e-14);
    }
}

#[test]
fn solenoidal_data_gives_zero_pressure() {
    for (j, k) in [(1, 2), (5, 1), (32, 17)] {
        let mode = Mode::new(j, k);
        let q = c(1.0, 0.5);
        let g = [q * mode.b(), q * -mode.a(alpha())];
        let s = solve_stokes_mode(mode, alpha(), c(0.0, 0.0), g).unwrap();
        assert!(s.p.norm() < 1e-14 * (g[0].norm() + g[1].norm()));
        let div = s.v1 * mode.a(alpha()) + s.v2 * mode.b();
        assert!(div.norm() < 1e-14);
    }
}

#[test]
fn zero_data_gives_zero_solution() {
    let s = solve_stokes_mode(Mode::new(4, 4), alpha(), c(0.0, 0.0), [c(0.0, 0.0); 2]).unwrap();
    assert_eq!((s.p, s.v1, s.v2), (c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)));
}

#[test]
fn degenerate_modes_are_rejected() {
    for mode in [Mode::new(0, 3), Mode::new(2, 0)] {
        let r = solve_stokes_mode(mode, alpha(), c(1.0, 0.0), [c(0.0, 0.0); 2]);
        assert!(matches!(r, Err(Error::InvalidParameter { name: "mode", .. })));
    }
}

#[test]
fn estimate_ratios_are_uniform_up_to_32() {
    let s = stokes_sweep(alpha(), 32, 3).unwrap();
    assert_eq!(s.modes, 32 * 32);
    assert!(s.max_residual <= 1e-12, "{s:?}");
    // |p| <= |f| + |g| / sqrt(mu) and sqrt(mu) |v| <= |g| / sqrt(mu) + |p|
    // give r1 <= 3 and r2 <= 3.
    assert!(s.max_r1 <= 3.0 && s.max_r2 <= 3.0, "{s:?}");
    let small = stokes_sweep(alpha(), 4, 3).unwrap();
    assert!(s.max_r1 <= 1.5 * small.max_r1 && s.max_r2 <= 1.5 * small.max_r2);
}
