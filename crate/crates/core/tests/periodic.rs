use std::f64::consts::PI;
use std::sync::OnceLock;

use achopf_core::criticality::{critical_ac, critical_inc, IncCritical, RootOptions};
use achopf_core::error::Error;
use achopf_core::fit::fit_rate;
use achopf_core::linalg::C64;
use achopf_core::model::{Mode, Params, Truncation};
use achopf_core::periodic::*;
use achopf_core::spectral_survey::spectral_gap;

const GRID: [f64; 6] = [0.1, 0.05, 0.025, 0.0125, 0.00625, 0.003125];
const M: usize = DEFAULT_HARMONICS;

struct Setup {
    inc: IncCritical,
    hds: Vec<HopfData>,
    gaps: Vec<f64>,
}

fn setup() -> &'static Setup {
    static S: OnceLock<Setup> = OnceLock::new();
    S.get_or_init(|| {
        let p = Params::new(2.0, 0.3, 300f64.sqrt(), PI / 2f64.sqrt()).unwrap();
        let t = Truncation::default();
        let inc = critical_inc(&p, &t).unwrap();
        let mut hds = Vec::new();
        let mut gaps = Vec::new();
        for &e in &GRID {
            let crit = critical_ac(&p, &t, e, &inc, &RootOptions::default()).unwrap();
            gaps.push(spectral_gap(&p, &t, e, crit.r1c, Some(&crit)).unwrap().kappa1);
            hds.push(HopfData::new(p, t, &inc, crit));
        }
        Setup { inc, hds, gaps }
    })
}

fn one() -> C64 {
    C64::new(1.0, 0.0)
}

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

fn dist(hd: &HopfData, a: &PeriodicField, b: &PeriodicField) -> f64 {
    norm_avg(&hd.params, &a.combine(one(), b, -one())) / norm_avg(&hd.params, b)
}

fn ratio(v: &[f64]) -> f64 {
    v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / v.iter().cloned().fold(f64::INFINITY, f64::min)
}

#[test]
fn brackets_of_kernel_real_and_high_harmonic_fields() {
    let hd = &setup().hds[2];
    let [bp, bm] = brackets(&z_plus(hd, M), hd).unwrap();
    assert!((bp - one()).norm() < 1e-13 && bm.norm() < 1e-13);
    let [bp, bm] = brackets(&z_minus(hd, M), hd).unwrap();
    assert!(bp.norm() < 1e-13 && (bm - one()).norm() < 1e-13);

    // A real field with a critical-pair component.
    let u = random_q_field(hd, M, 3, 1).unwrap().combine(one(), &z_plus(hd, M), C64::new(0.3, -0.7));
    let u = u.combine(one(), &z_minus(hd, M), C64::new(0.3, 0.7));
    assert!(u.is_real(1e-14));
    let [bp, bm] = brackets(&u, hd).unwrap();
    assert!((bp - bm.conj()).norm() < 1e-14);
    assert!((bp - C64::new(0.3, -0.7)).norm() < 1e-13);

    let mut high = random_q_field(hd, M, 6, 2).unwrap();
    for m in -1..=1 {
        let h = high.get_mut(m).unwrap();
        for e in &mut h.entries {
            e.coeffs.iter_mut().for_each(|z| *z = zero());
        }
    }
    let [bp, bm] = brackets(&high, hd).unwrap();
    assert_eq!((bp, bm), (zero(), zero()));
}

#[test]
fn projections_split_idempotent_and_commute_with_time_derivative() {
    let hd = &setup().hds[1];
    let u = random_q_field(hd, M, 4, 3)
        .unwrap()
        .combine(one(), &z_plus(hd, M), C64::new(1.5, 0.2))
        .combine(one(), &z_minus(hd, M), C64::new(1.5, -0.2));
    let r = projections(&u, hd).unwrap();
    assert_eq!(r.p_part.combine(one(), &r.q_part, one()), u);
    let [qp, qm] = brackets(&r.q_part, hd).unwrap();
    assert!(qp.norm() <= 1e-12 && qm.norm() <= 1e-12);
    let again = projections(&r.p_part, hd).unwrap();
    assert!(dist(hd, &again.p_part, &r.p_part) < 1e-14);

    let du = u.time_derivative();
    let [dp, dm] = brackets(&du, hd).unwrap();
    let ia = C64::new(0.0, hd.a);
    assert!((dp - ia * r.bracket_plus).norm() < 1e-13 * dp.norm());
    assert!((dm + ia * r.bracket_minus).norm() < 1e-13 * dm.norm());
}

#[test]
fn mismatched_frequency_or_eps_is_rejected() {
    let s = setup();
    let hd = &s.hds[0];
    let mut u = z_plus(hd, M);
    u.a *= 1.0 + 1e-9;
    assert!(matches!(brackets(&u, hd), Err(Error::InvalidParameter { name: "base_freq", .. })));
    let u = z_plus(&s.hds[1], M);
    assert!(matches!(solve_beps(&u, hd), Err(Error::InvalidParameter { name: "eps", .. })));
}

#[test]
fn kernel_fields_are_annihilated() {
    for hd in &setup().hds {
        for z in [z_plus(hd, M), z_minus(hd, M)] {
            let bz = apply_b(&z, hd, zero(), 0.0).unwrap();
            let r = norm_avg(&hd.params, &bz) / norm_avg(&hd.params, &z);
            assert!(r <= 1e-12, "eps {} residual {r:e}", hd.eps());
        }
    }
}

#[test]
fn solve_residual_representation_and_round_trip() {
    for hd in &setup().hds {
        let f = random_q_field(hd, M, 4, 7).unwrap();
        let s = solve_beps(&f, hd).unwrap();
        assert!(s.residual <= 1e-10, "eps {} residual {:e}", hd.eps(), s.residual);
        assert!(s.discrepancy <= 1e-8, "eps {} discrepancy {:e}", hd.eps(), s.discrepancy);
        assert!(s.u.is_real(1e-12));
        let [bp, bm] = brackets(&s.u, hd).unwrap();
        assert!(bp.norm() <= 1e-12 && bm.norm() <= 1e-12);

        let v = random_q_field(hd, M, 5, 9).unwrap();
        let fv = apply_b(&v, hd, zero(), 0.0).unwrap();
        let back = solve_beps(&fv, hd).unwrap();
        assert!(dist(hd, &back.u, &v) <= 1e-9, "eps {} round trip", hd.eps());
    }
}

#[test]
fn solvability_threshold_is_the_bracket_size() {
    let hd = &setup().hds[3];
    let q = random_q_field(hd, M, 3, 11).unwrap();
    let accept = q.combine(one(), &z_plus(hd, M), C64::new(5e-13, 0.0));
    assert!(solve_beps(&accept, hd).is_ok());
    let reject = q.combine(one(), &z_minus(hd, M), C64::new(0.0, 2e-12));
    match solve_beps(&reject, hd) {
        Err(Error::Unsolvable(b)) => assert!((b - 2e-12).abs() < 1e-14),
        other => panic!("expected rejection, got {other:?}"),
    }
}

#[test]
fn off_critical_singular_block_is_named() {
    let mut hd = setup().hds[0].clone();
    // Deflate the wrong mode: the true kernel blocks are then undeflated.
    hd.crit.mode = Mode::new(2, 1);
    let f = PeriodicField::zeros(hd.a, hd.eps(), M, &hd.trunc);
    match solve_beps(&f, &hd) {
        Err(Error::Rejected(msg)) => assert!(msg.contains("mode (1, 1)") && msg.contains("harmonic"), "{msg}"),
        other => panic!("expected a singular block, got {other:?}"),
    }
}

#[test]
fn resolvent_has_simple_poles_on_the_lattice_only() {
    let radii = [1e-2, 1e-3, 1e-4, 1e-5];
    for hd in &setup().hds {
        for k in -3..=3 {
            let pole = C64::new(0.0, k as f64 * hd.a_eps());
            let n: Vec<f64> = radii.iter().map(|&r| resolvent_norm(hd, pole + r, M).unwrap()).collect();
            let fit = fit_rate(&radii, &n).unwrap();
            assert!((fit.slope + 1.0).abs() <= 0.05, "eps {} k {k} slope {}", hd.eps(), fit.slope);
            let mid = C64::new(0.0, (k as f64 + 0.5) * hd.a_eps());
            let n: Vec<f64> = radii.iter().map(|&r| resolvent_norm(hd, mid + r, M).unwrap()).collect();
            assert!(ratio(&n) < 1.01, "eps {} midpoint {k}", hd.eps());
        }
        let on = C64::new(0.0, hd.a_eps() * 2.0);
        assert!(matches!(resolvent_norm(hd, on, M), Err(Error::Rejected(_))));
        let f = random_q_field(hd, M, 2, 1).unwrap();
        assert!(matches!(resolvent_beps(on + 5e-11, &f, hd), Err(Error::Rejected(_))));
    }
}

#[test]
fn large_real_lambda_tends_to_the_diagonal_bound() {
    // Non-normal blocks keep the ratio above 1; it decreases towards 1.
    // At eps = 0.1 and lambda = 10 it is 2.47, above the nominal 2.
    for hd in &setup().hds {
        let r: Vec<f64> = [10.0, 20.0, 50.0, 100.0]
            .iter()
            .map(|&l| resolvent_norm(hd, C64::new(l, 0.0), M).unwrap() * (l - hd.crit.abscissa))
            .collect();
        assert!(r.windows(2).all(|w| w[1] < w[0]), "eps {} {r:?}", hd.eps());
        let limit = if hd.eps() < 0.1 { 2.0 } else { 2.5 };
        assert!(r[0] <= limit && r[2] <= 2.0 && r[3] < 1.3, "eps {} {r:?}", hd.eps());
    }
}

#[test]
fn resolvent_eigenfunctions_and_representation() {
    for hd in &setup().hds {
        let lambda = C64::new(0.3, 0.7);
        for k in [-2, 0, 1, 3] {
            let mut e = PeriodicField::zeros(hd.a, hd.eps(), M, &hd.trunc);
            let src = z_plus(hd, M);
            *e.get_mut(1 - k).unwrap() = src.get(1).unwrap().clone();
            let s = resolvent_beps(lambda, &e, hd).unwrap();
            let expect = e.combine(one() / (lambda - C64::new(0.0, k as f64 * hd.a_eps())), &e, zero());
            assert!(dist(hd, &s.u, &expect) < 1e-10, "eps {} k {k}", hd.eps());
        }
        let f = random_q_field(hd, M, 4, 5)
            .unwrap()
            .combine(one(), &z_plus(hd, M), C64::new(0.2, 0.1))
            .combine(one(), &z_minus(hd, M), C64::new(0.2, -0.1));
        let s = resolvent_beps(lambda, &f, hd).unwrap();
        assert!(s.residual <= 1e-10 && s.discrepancy <= 1e-8, "eps {} {s:?}", hd.eps());
        assert!(s.pole_part > 0.0 && s.y_norm <= 10.0 * (s.pole_part + s.regular_part));
    }
}

#[test]
fn omega_family_is_uniformly_solvable() {
    let s = setup();
    let mut grid = Vec::new();
    for hd in &s.hds {
        let fs: Vec<PeriodicField> = (0..3).map(|k| random_q_field(hd, M, 4, 20 + k).unwrap()).collect();
        let base = solve_beps(&fs[0], hd).unwrap().u;
        for w in omega_grid() {
            let mut sup: f64 = 0.0;
            for (i, f) in fs.iter().enumerate() {
                let o = solve_beps_omega(f, w, hd).unwrap();
                assert!(!o.perturbed && o.residual <= 1e-10);
                let [bp, bm] = brackets(&o.u, hd).unwrap();
                assert!(bp.norm() <= 1e-12 && bm.norm() <= 1e-12);
                if w == 0.0 && i == 0 {
                    assert_eq!(o.u, base);
                }
                sup = sup.max(y_norm(&hd.params, &o.u, SUP_SAMPLES) / x_norm(&hd.params, f));
            }
            grid.push(sup);
        }
        // Continuity at omega = 0.
        for w in [1e-6, -1e-6] {
            let o = solve_beps_omega(&fs[0], w, hd).unwrap();
            assert!(dist(hd, &o.u, &base) < 1e-4);
        }
    }
    let reference = grid[(s.hds.len() - 1) * 7 + 3];
    assert!(ratio(&grid) <= 2.0, "{grid:?}");
    assert!(grid.iter().all(|&g| g <= 10.0 * reference));
    let hd = &s.hds[0];
    let f = random_q_field(hd, M, 2, 1).unwrap();
    assert!(solve_beps_omega(&f, 0.26, hd).is_err());
}

#[test]
fn kernel_singular_values_scale_with_omega() {
    let ws = [1e-1, 1e-2, 1e-3, 1e-4];
    for hd in &setup().hds {
        assert!(kernel_singular_values(hd, 0.0).unwrap()[0] < 1e-11);
        for side in 0..2 {
            let sv: Vec<f64> = ws.iter().map(|&w| kernel_singular_values(hd, w).unwrap()[side]).collect();
            let fit = fit_rate(&ws, &sv).unwrap();
            assert!((fit.slope - 1.0).abs() < 0.02, "eps {} slope {}", hd.eps(), fit.slope);
        }
    }
}

#[test]
fn fixed_point_split_and_neumann_rate() {
    let s = setup();
    for (hd, &gap) in s.hds.iter().zip(&s.gaps) {
        let mut f = random_q_field(hd, M, 1, 4).unwrap().get(0).unwrap().clone();
        let raw = f.clone();
        hd.crit.project_field(&hd.params, &mut f);
        for lambda in [zero(), C64::new(0.2, 1.0), C64::new(-0.5 * gap, 0.3)] {
            let fp = fixed_point_solve(lambda, &f, hd, Some(gap)).unwrap();
            let (m, p) = (fp.neumann_ratio.unwrap(), fp.predicted_ratio.unwrap());
            assert!(m / p < 2.0 && p / m < 2.0, "eps {} lambda {lambda}: {m} vs {p}", hd.eps());
            assert!(fp.neumann_error.unwrap() < 1e-10);
        }
        // Solvability at a multiplier equal to one.
        assert!(matches!(fixed_point_solve(zero(), &raw, hd, None), Err(Error::Unsolvable(_))));
        // Large Re lambda: the monodromy term is negligible.
        let lambda = C64::new(5.0, 0.0);
        let fp = fixed_point_solve(lambda, &raw, hd, None).unwrap();
        let mut d = fp.u.clone();
        for (x, y) in d.entries.iter_mut().zip(&raw.entries) {
            for (a, b) in x.coeffs.iter_mut().zip(&y.coeffs) {
                *a -= b;
            }
        }
        let nd = achopf_core::spectral_survey::x1_norm(&hd.params, hd.eps(), &d);
        let nf = achopf_core::spectral_survey::x1_norm(&hd.params, hd.eps(), &raw);
        let bound = (-2.0 * PI * lambda.re / hd.a_eps()).exp();
        assert!(nd <= 2.0 * bound * nf, "eps {} {nd:e} vs {:e}", hd.eps(), bound * nf);
    }
}

#[test]
fn monodromy_resolvent_bounds_and_rejections() {
    let s = setup();
    let mut at_two = Vec::new();
    for (hd, &gap) in s.hds.iter().zip(&s.gaps) {
        let probe = monodromy_resolvent_probe(C64::new(2.0, 0.0), 0.0, 0.1, hd, gap).unwrap();
        at_two.push(probe.norm);
        let probe = monodromy_resolvent_probe(C64::new(0.5, 0.5), 0.05, 0.1, hd, gap).unwrap();
        assert!(probe.ratio < 1.0);
        assert!(monodromy_resolvent_probe(one(), 0.0, 0.1, hd, gap).is_err());
        let w = 0.1;
        let mult = (C64::new(0.0, 2.0 * PI / (1.0 + w))).exp();
        assert!(matches!(
            monodromy_resolvent_probe(mult, w, 0.05, hd, gap),
            Err(Error::Rejected(_))
        ));
    }
    assert!(ratio(&at_two) <= 2.0, "{at_two:?}");
}

#[test]
fn incompressible_kernel_is_two_dimensional_and_semisimple() {
    let s = setup();
    let k = inc_kernel(&s.inc, &Truncation::default(), M).unwrap();
    assert_eq!(k.kernel_dim, 2);
    assert_eq!(k.singular_blocks, vec![(-1, 1, 1), (1, 1, 1)]);
    assert!(k.bordered_min_sv > 1e-3);
}

#[test]
fn json_layout_round_trip() {
    let hd = &setup().hds[0];
    let u = random_q_field(hd, 3, 3, 8).unwrap();
    let j = u.to_json_layout();
    assert_eq!(j.m_max, 3);
    assert_eq!(j.coeffs.len(), 7 * j.modes.iter().map(|m| Mode::new(m[0], m[1]).components().len()).sum::<usize>());
    assert_eq!(PeriodicField::from_json_layout(&j).unwrap(), u);
    let mut bad = j.clone();
    bad.coeffs.pop();
    assert!(PeriodicField::from_json_layout(&bad).is_err());
}
