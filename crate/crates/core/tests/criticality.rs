use std::f64::consts::PI;

use achopf_core::criticality::{
    critical_ac, critical_inc, default_eta_grid, default_rate_grid, eigenpair_branch,
    eps_convergence_study, oscillatory_threshold,
    salinity_window, scan_onset, RootOptions,
};
use achopf_core::linalg::C64;
use achopf_core::model::{assemble_mode, Mode, Operator, Params, Truncation};
use achopf_core::smalleig::{char_poly_roots, eigenvalues};

fn params() -> Params {
    Params::new(2.0, 0.3, 300f64.sqrt(), PI / 2f64.sqrt()).unwrap()
}

/// Largest real part of the incompressible block, via the polynomial route.
fn inc_abscissa(p: &Params, mode: Mode, r1: f64) -> f64 {
    let b = assemble_mode(p, mode, Operator::Inc, r1).unwrap();
    char_poly_roots(&b.m)
        .unwrap()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn bisect(mut f: impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    assert!(f(lo) < 0.0 && f(hi) > 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn incompressible_threshold_matches_polynomial_bisection() {
    let p = params();
    let t = Truncation::default();
    let inc = critical_inc(&p, &t).unwrap();
    assert_eq!(inc.mode, Mode::new(1, 1));
    let r = bisect(|r| inc_abscissa(&p, inc.mode, r), 1.0, 0.999 * inc.stationary_r1);
    assert!((r - inc.r1c).abs() < 1e-7 * inc.r1c, "{r} vs {}", inc.r1c);

    let b = assemble_mode(&p, inc.mode, Operator::Inc, inc.r1c).unwrap();
    let roots = char_poly_roots(&b.m).unwrap();
    let top = roots.iter().cloned().max_by(|x, y| x.im.total_cmp(&y.im)).unwrap();
    assert!((top.im - inc.a).abs() < 1e-9 * inc.a);
    assert!(top.re.abs() < 1e-9 * inc.a);

    // Every other mode is strictly stable at the threshold.
    for m in t.full_modes() {
        if m != inc.mode {
            assert!(inc_abscissa(&p, m, inc.r1c) < -1e-6, "mode {m:?}");
        }
    }
}

#[test]
fn transversality_matches_finite_difference() {
    let p = params();
    let inc = critical_inc(&p, &Truncation::default()).unwrap();
    let h = 1e-5 * inc.r1c;
    let lam = |r: f64| {
        let b = assemble_mode(&p, inc.mode, Operator::Inc, r).unwrap();
        let v = eigenvalues(&b.m).unwrap();
        *v.iter()
            .min_by(|x, y| {
                (**x - C64::new(0.0, inc.a))
                    .norm()
                    .total_cmp(&(**y - C64::new(0.0, inc.a)).norm())
            })
            .unwrap()
    };
    let fd = (lam(inc.r1c + h) - lam(inc.r1c - h)) / (2.0 * h);
    assert!((fd - inc.dlambda).norm() < 1e-6 * inc.dlambda.norm());
    assert!(inc.dlambda.re > 0.0);
}

#[test]
fn compressible_threshold_is_a_clean_crossing() {
    let p = params();
    let t = Truncation::default();
    let inc = critical_inc(&p, &t).unwrap();
    for eps in [0.1, 0.01, 0.003125] {
        let cp = critical_ac(&p, &t, eps, &inc, &RootOptions::default()).unwrap();
        assert!(cp.abscissa.abs() <= 1e-12, "eps {eps}: {}", cp.abscissa);
        let block = assemble_mode(&p, cp.mode, Operator::Ac { eps }, cp.r1c).unwrap();
        let bi = block.inner(&cp.u_plus, &cp.u_plus_adj);
        assert!((bi - C64::new(1.0, 0.0)).norm() < 1e-10);
        let resid = &block.m * &cp.u_plus - &cp.u_plus * cp.lambda();
        assert!(resid.norm() < 1e-9 * block.m.norm());
        assert!(cp.dlambda.re > 0.0);
        assert_eq!(cp.bracket, 0.1);
    }
}

#[test]
fn eps_corrections_are_second_order() {
    let p = params();
    let study =
        eps_convergence_study(&p, &Truncation::default(), &default_rate_grid(), &RootOptions::default())
            .unwrap();
    for (name, f) in [
        ("R1c", study.fit_r1c),
        ("a", study.fit_a),
        ("u+", study.fit_u_plus),
        ("u+*", study.fit_u_plus_adj),
        ("P", study.fit_projection),
    ] {
        assert!((1.8..=2.2).contains(&f.slope), "{name}: slope {}", f.slope);
        assert!(f.r2 >= 0.99, "{name}: r2 {}", f.r2);
    }
}

#[test]
fn salinity_window_lower_edge() {
    let p = params();
    let t = Truncation { j_max: 8, k_max: 8 };
    let w = salinity_window(&p, &t, 200.0, 400);
    let lo = w.lower.expect("window exists");
    let first = |r2: f64| {
        let q = Params { r2, ..p };
        let s = scan_onset(&q, &t).unwrap();
        s.oscillatory.is_some_and(|(r, _)| r < s.stationary.0)
    };
    assert!(!first(lo * (1.0 - 1e-6)));
    assert!(first(lo * (1.0 + 1e-6)));
    // At the edge either the frequency closes or the two onsets meet.
    let q = Params { r2: lo, ..p };
    let (r1sq, a2) = oscillatory_threshold(&q, Mode::new(1, 1)).unwrap();
    let s = scan_onset(&q, &t).unwrap();
    let meet = (r1sq.sqrt() - s.stationary.0).abs() < 1e-6 * s.stationary.0;
    assert!(a2.abs() < 1e-6 * r1sq || meet);
}

#[test]
fn critical_mode_on_truncation_edge_is_reported() {
    let p = params();
    let e = critical_inc(&p, &Truncation { j_max: 1, k_max: 4 }).unwrap_err();
    assert!(matches!(e, achopf_core::Error::Truncation(_)));
}

#[test]
fn eigenpair_branch_crosses_once_and_is_conjugate_closed() {
    let p = params();
    let t = Truncation::default();
    let inc = critical_inc(&p, &t).unwrap();
    let eta = default_eta_grid(inc.r1c, 0.05, 10);
    let start = C64::new(0.0, inc.a);
    let inc_branch = eigenpair_branch(&p, inc.mode, None, inc.r1c, start, &eta).unwrap();
    let eps = 0.025;
    let cp = critical_ac(&p, &t, eps, &inc, &RootOptions::default()).unwrap();
    let ac_branch = eigenpair_branch(&p, cp.mode, Some(eps), cp.r1c, cp.lambda(), &eta).unwrap();
    for (br, r1c) in [(&inc_branch, inc.r1c), (&ac_branch, cp.r1c)] {
        assert!(br.lambda[10].re.abs() <= 1e-12, "{}", br.lambda[10].re);
        let flips = br.lambda.windows(2).filter(|w| w[0].re.signum() != w[1].re.signum()).count();
        assert!(br.lambda[0].re < 0.0 && br.lambda[20].re > 0.0 && flips <= 2);
        // Either zero is hit exactly at the centre or the sign flips once.
        let strict = br.lambda.iter().filter(|z| z.re.abs() > 1e-12).collect::<Vec<_>>();
        assert_eq!(strict.windows(2).filter(|w| w[0].re.signum() != w[1].re.signum()).count(), 1);
        // The conjugate is an eigenvalue of the same block.
        for (&e, z) in br.eta.iter().zip(&br.lambda) {
            let op = br.eps.map_or(Operator::Inc, |eps| Operator::Ac { eps });
            let b = assemble_mode(&p, br.mode, op, r1c + e).unwrap();
            let v = eigenvalues(&b.m).unwrap();
            let d = v.iter().map(|x| (*x - z.conj()).norm()).fold(f64::INFINITY, f64::min);
            assert!(d <= 1e-10 * z.norm());
        }
    }
    // The two branches agree up to the eps^2 correction.
    for (x, y) in inc_branch.lambda.iter().zip(&ac_branch.lambda) {
        assert!((x - y).norm() < 50.0 * eps * eps * x.norm().max(1.0));
    }
}

#[test]
fn branch_rejects_bad_grids() {
    let p = params();
    let inc = critical_inc(&p, &Truncation::default()).unwrap();
    let s = C64::new(0.0, inc.a);
    assert!(eigenpair_branch(&p, inc.mode, None, inc.r1c, s, &[]).is_err());
    assert!(eigenpair_branch(&p, inc.mode, None, inc.r1c, s, &[0.1, 0.0]).is_err());
}

#[test]
fn threshold_matches_eigensolver_over_many_samples() {
    let mut checked = 0;
    for pr in [1.5, 2.0, 7.0, 10.0, 20.0] {
        for d in [0.01, 0.1, 0.3, 0.6, 0.9] {
            for (j, k, r2sq) in [(1, 1, 500.0), (2, 1, 3000.0)] {
                let p = Params::new(pr, d, f64::sqrt(r2sq), PI / 2f64.sqrt()).unwrap();
                let mode = Mode::new(j, k);
                let (r1sq, a2) = oscillatory_threshold(&p, mode).unwrap();
                if a2 <= 0.0 {
                    continue;
                }
                let b = assemble_mode(&p, mode, Operator::Inc, r1sq.sqrt()).unwrap();
                let top = eigenvalues(&b.m).unwrap()[0];
                assert!(top.re.abs() <= 1e-9 * a2.sqrt(), "Pr {pr} d {d}: {}", top.re);
                assert!((top.im * top.im - a2).abs() <= 1e-9 * a2);
                checked += 1;
            }
        }
    }
    assert!(checked >= 30, "only {checked} samples had an oscillatory pair");
}

#[test]
fn threshold_example_point() {
    let p = Params::new(2.0, 0.1, 2000f64.sqrt(), PI / 2f64.sqrt()).unwrap();
    let mode = Mode::new(1, 1);
    let (r1sq, a2) = oscillatory_threshold(&p, mode).unwrap();
    // Direct evaluation of the closed form.
    let mu = mode.mu(p.alpha);
    let q = mode.a(p.alpha).powi(2) / mu;
    let (s, t, u) = (p.pr * mu, mu, p.d * mu);
    let want = ((s + t + u) * (s * t + s * u + t * u) - s * t * u + p.pr * q * 2000.0 * (s + u))
        / (p.pr * q * (s + t));
    assert!((r1sq - want).abs() < 1e-12 * want);
    let b = assemble_mode(&p, mode, Operator::Inc, r1sq.sqrt()).unwrap();
    let top = eigenvalues(&b.m).unwrap()[0];
    assert!(top.re.abs() < 1e-9 * a2.sqrt() && (top.im.powi(2) - a2).abs() < 1e-9 * a2);
}
