use std::f64::consts::PI;

use achopf_core::criticality::{critical_ac, critical_inc, CriticalPoint, RootOptions};
use achopf_core::fit::fit_rate;
use achopf_core::linalg::C64;
use achopf_core::model::{assemble_mode, Component, Field, Mode, ModeKind, Operator, Params, Truncation};
use achopf_core::smalleig::eigenvalues;
use achopf_core::spectral_survey::{
    inc_spectral_gap, poincare_constant, probe_fields, resolve, resolvent_near_pole,
    resolvent_probe_highfreq, resolvent_probe_lowfreq, spectral_gap,
};

const GRID: [f64; 5] = [0.1, 0.05, 0.025, 0.0125, 0.00625];

fn params() -> Params {
    Params::new(2.0, 0.3, 300f64.sqrt(), PI / 2f64.sqrt()).unwrap()
}

fn criticals(p: &Params, t: &Truncation) -> Vec<CriticalPoint> {
    let inc = critical_inc(p, t).unwrap();
    GRID.iter()
        .map(|&e| critical_ac(p, t, e, &inc, &RootOptions::default()).unwrap())
        .collect()
}

fn ratio(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
    max / min
}

/// Largest real part of `l^2 + s l + s / eps^2` with `s = Pr mu`.
fn acoustic_pair_re(s: f64, eps: f64) -> f64 {
    let disc = s * s - 4.0 * s / (eps * eps);
    if disc < 0.0 {
        -s / 2.0
    } else {
        (-s + disc.sqrt()) / 2.0
    }
}

#[test]
fn gap_without_buoyancy_matches_decoupled_spectrum() {
    let p = Params::new(2.0, 0.3, 0.0, PI / 2f64.sqrt()).unwrap();
    let t = Truncation { j_max: 6, k_max: 6 };
    for eps in [0.3, 0.1, 0.02] {
        let want = t
            .modes()
            .iter()
            .map(|m| {
                let mu = m.mu(p.alpha);
                let s = p.pr * mu;
                let top = match m.kind() {
                    ModeKind::Full => (-mu).max(-p.d * mu).max(-s).max(acoustic_pair_re(s, eps)),
                    ModeKind::Acoustic => acoustic_pair_re(s, eps),
                    ModeKind::Scalar => (-mu).max(-p.d * mu),
                    ModeKind::Null => f64::NEG_INFINITY,
                };
                -top
            })
            .fold(f64::INFINITY, f64::min);
        let g = spectral_gap(&p, &t, eps, 0.0, None).unwrap();
        assert!((g.kappa1 - want).abs() < 1e-9 * want, "eps {eps}: {} vs {want}", g.kappa1);
        // The slowest decay is the salt scalar mode.
        assert!((g.kappa1 - p.d * PI * PI).abs() < 1e-9);
        assert_eq!(g.slowest_mode, Mode::new(0, 1));
    }
}

#[test]
fn poincare_constant_is_the_smallest_symbol() {
    let t = Truncation::default();
    let p = params();
    assert!((poincare_constant(&p, &t) - PI / 2f64.sqrt()).abs() < 1e-14);
    let q = Params { alpha: 4.0, ..p };
    assert!((poincare_constant(&q, &t) - PI).abs() < 1e-14);
    let small = Truncation { j_max: 3, k_max: 3 };
    assert!(poincare_constant(&p, &t) <= poincare_constant(&p, &small));
}

#[test]
fn gap_is_uniform_and_close_to_incompressible() {
    let p = params();
    let t = Truncation::default();
    let inc = critical_inc(&p, &t).unwrap();
    let ginc = inc_spectral_gap(&p, &t, inc.r1c, Some((inc.mode, inc.u_plus.clone()))).unwrap();
    assert_eq!(ginc.excluded, 2);
    let mut kappas = Vec::new();
    let mut acoustic = Vec::new();
    for cp in criticals(&p, &t) {
        let g = spectral_gap(&p, &t, cp.eps, cp.r1c, Some(&cp)).unwrap();
        assert_eq!(g.excluded, 2);
        assert!(g.kappa1 > 0.0);
        assert!(g.kappa1 <= 2.0 * ginc.kappa1 && ginc.kappa1 <= 2.0 * g.kappa1);
        kappas.push(g.kappa1);
        acoustic.push(-g.acoustic_abscissa.unwrap());
    }
    assert!(ratio(&kappas) <= 2.0, "{kappas:?}");
    assert!(acoustic.iter().all(|&c| c > 0.0));
    assert!(ratio(&acoustic) <= 2.0, "{acoustic:?}");
}

#[test]
fn acoustic_frequency_scales_like_inverse_eps() {
    let p = params();
    let mode = Mode::new(1, 0);
    let im: Vec<f64> = GRID
        .iter()
        .map(|&eps| {
            let b = assemble_mode(&p, mode, Operator::Ac { eps }, 0.0).unwrap();
            eigenvalues(&b.m).unwrap()[0].im.abs()
        })
        .collect();
    let f = fit_rate(&GRID, &im).unwrap();
    assert!((f.slope + 1.0).abs() <= 0.05, "slope {}", f.slope);
}

#[test]
fn high_frequency_ratio_is_uniform_and_velocity_decays() {
    let p = params();
    let t = Truncation::default();
    let fields = probe_fields(&t, p.alpha, Mode::new(1, 1), 7);
    let gammas: Vec<f64> = (0..=40).map(|i| 10f64.powf(i as f64 / 20.0)).collect();
    let re = -0.5 * p.d * PI * PI;
    for f in &fields {
        let mut sups = Vec::new();
        for cp in criticals(&p, &t) {
            let probes = resolvent_probe_highfreq(&p, &t, cp.eps, cp.r1c, re, &gammas, f).unwrap();
            let sup = probes.iter().map(|q| q.ratio_high).fold(0.0, f64::max);
            assert!(sup.is_finite());
            sups.push(sup);
        }
        let mut sorted = sups.clone();
        sorted.sort_by(f64::total_cmp);
        assert!(sorted[4] <= 2.0 * sorted[2], "{sups:?}");
    }

    // Past the acoustic resonances of the truncation (gamma ~ sqrt(Pr mu)
    // < 90) the velocity falls off like 1/gamma.
    let hi: Vec<f64> = (0..=10).map(|i| 10f64.powf(2.0 + i as f64 / 10.0)).collect();
    for cp in criticals(&p, &t) {
        for f in &fields {
            let w: Vec<f64> = hi
                .iter()
                .map(|&g| {
                    let u = resolve(&p, cp.eps, cp.r1c, C64::new(re, g / cp.eps), f).unwrap();
                    velocity_norm(&p, &u)
                })
                .collect();
            let fit = fit_rate(&hi, &w).unwrap();
            assert!((fit.slope + 1.0).abs() <= 0.1, "eps {}: slope {}", cp.eps, fit.slope);
        }
    }
}

fn velocity_norm(p: &Params, u: &Field) -> f64 {
    u.entries
        .iter()
        .map(|e| {
            let nu = e.mode.basis_norm(p.alpha);
            e.mode
                .components()
                .iter()
                .zip(&e.coeffs)
                .filter(|(c, _)| matches!(c, Component::W1 | Component::W2))
                .map(|(_, z)| nu * z.norm_sqr())
                .sum::<f64>()
        })
        .sum::<f64>()
        .sqrt()
}

#[test]
fn zero_forcing_gives_zero_solution() {
    let p = params();
    let t = Truncation { j_max: 3, k_max: 3 };
    let u = resolve(&p, 0.05, 30.0, C64::new(-1.0, 40.0), &Field::zeros(&t)).unwrap();
    assert!(u.entries.iter().all(|e| e.coeffs.iter().all(|z| *z == C64::new(0.0, 0.0))));
}

#[test]
fn low_frequency_ratio_is_uniform_on_projected_forcing() {
    let p = params();
    let t = Truncation::default();
    let lambdas = [
        C64::new(1.0, 0.0),
        C64::new(2.0, 0.0),
        C64::new(1.0, 2.0),
        C64::new(0.5, 5.0),
        C64::new(-0.5 * p.d * PI * PI, 3.0),
        C64::new(0.0, 8.0),
        C64::new(0.0, -8.0),
    ];
    let fields = probe_fields(&t, p.alpha, Mode::new(1, 1), 11);
    let cps = criticals(&p, &t);
    for f in &fields {
        let sups: Vec<f64> = cps
            .iter()
            .map(|cp| {
                resolvent_probe_lowfreq(&p, &t, cp, &lambdas, 1.0, f)
                    .unwrap()
                    .iter()
                    .map(|q| q.ratio_u)
                    .fold(0.0, f64::max)
            })
            .collect();
        assert!(sups.iter().all(|s| s.is_finite()));
        assert!(ratio(&sups) <= 2.0, "{sups:?}");
    }
    // |lambda| beyond c0 / eps is outside the region.
    let e = resolvent_probe_lowfreq(&p, &t, &cps[0], &[C64::new(0.0, 20.0)], 1.0, &fields[0]);
    assert!(e.is_err());
}

#[test]
fn projection_removes_the_critical_pole() {
    let p = params();
    let t = Truncation::default();
    let f = &probe_fields(&t, p.alpha, Mode::new(1, 1), 3)[0];
    let deltas = [1e-2, 1e-3, 1e-4, 1e-5];
    for cp in criticals(&p, &t) {
        let probes = resolvent_near_pole(&p, &cp, &deltas, f).unwrap();
        let un: Vec<f64> = probes.iter().map(|q| q.unprojected).collect();
        let pr: Vec<f64> = probes.iter().map(|q| q.projected).collect();
        let fit = fit_rate(&deltas, &un).unwrap();
        assert!((fit.slope + 1.0).abs() <= 0.05, "eps {}: slope {}", cp.eps, fit.slope);
        assert!(ratio(&pr) <= 1.01, "eps {}: {pr:?}", cp.eps);
    }
}
