//! Units of work shared by the subcommands and the acceptance suite.
//! Each returns its tables and named checks.

use std::f64::consts::PI;

use achopf_core::criticality::{
    default_eta_grid, eigenpair_branch, eps_convergence_study, oscillatory_threshold, stationary_threshold,
};
use achopf_core::dynamics::Estimate;
use achopf_core::linalg::{CMat, CVec, C64, ONE, ZERO};
use achopf_core::model::{assemble_mode, Mode, ModeMatrix, Operator, Params};
use achopf_core::par;
use achopf_core::periodic::{
    apply_b, brackets, norm_avg, random_q_field, resolvent_norm, solve_beps, solve_beps_omega, x_norm, y_norm,
    z_minus, z_plus, HopfData, PeriodicField, SUP_SAMPLES,
};
use achopf_core::smalleig::{eig_dense, eigenvalues};
use achopf_core::spectral_survey::{probe_fields, resolvent_probe_highfreq, resolvent_probe_lowfreq};
use achopf_core::stokes::stokes_sweep;
use serde_json::json;

use crate::context::{CliError, Context, Run};
use crate::output::{short, Cell, Check, Section, Table};
use crate::rates::fit_series;
use crate::svg::{Chart, Series};

type Res = Result<Section, CliError>;

pub fn ratio(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
    max / min
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn max_of(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, f64::max)
}

fn min_of(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(f64::INFINITY, f64::min)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

// Threshold oracle: (Pr, d, mode, R2^2) samples.
const ORACLE_PR: [f64; 6] = [1.5, 2.0, 5.0, 7.0, 10.0, 20.0];
const ORACLE_D: [f64; 5] = [0.01, 0.1, 0.3, 0.6, 0.9];
const ORACLE_MODES: [(u32, u32, f64); 3] = [(1, 1, 500.0), (2, 1, 3000.0), (1, 2, 5000.0)];
pub const ORACLE_MIN_SAMPLES: usize = 50;

/// Real part and frequency of the complex pair of an incompressible block.
fn inc_pair(p: &Params, mode: Mode, r1: f64) -> Option<(f64, f64)> {
    let b = assemble_mode(p, mode, Operator::Inc, r1).ok()?;
    let v = eigenvalues(&b.m).ok()?;
    let top = v.into_iter().max_by(|x, y| x.im.abs().total_cmp(&y.im.abs()))?;
    (top.im.abs() > 0.0).then_some((top.re, top.im.abs()))
}

/// Bisection on the real part of the complex pair around `r1`.
fn detected_crossing(p: &Params, mode: Mode, r1: f64) -> Option<(f64, f64)> {
    let g = |r: f64| inc_pair(p, mode, r).map(|x| x.0);
    let (mut lo, mut hi) = (r1 * (1.0 - 1e-3), r1 * (1.0 + 1e-3));
    let (glo, ghi) = (g(lo)?, g(hi)?);
    if glo.signum() == ghi.signum() {
        return None;
    }
    let s = glo.signum();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let gm = g(mid)?;
        if gm.signum() == s {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let r = 0.5 * (lo + hi);
    Some((r, inc_pair(p, mode, r)?.1))
}

pub fn threshold_oracle(run: &Run) -> Res {
    let alpha = run.params.alpha;
    let mut samples = Vec::new();
    for pr in ORACLE_PR {
        for d in ORACLE_D {
            for (j, k, r2sq) in ORACLE_MODES {
                samples.push((pr, d, j, k, r2sq));
            }
        }
    }
    let rows = par::map(&samples, |&(pr, d, j, k, r2sq)| {
        let p = Params::new(pr, d, r2sq.sqrt(), alpha).ok()?;
        let mode = Mode::new(j, k);
        let (r1sq, a2) = oscillatory_threshold(&p, mode)?;
        if a2 <= 0.0 {
            return None;
        }
        let r1c = r1sq.sqrt();
        let (r, im) = detected_crossing(&p, mode, r1c).unwrap_or((f64::NAN, f64::NAN));
        Some((pr, d, j, k, r2sq, r1c, r, a2, im))
    });
    let mut t = Table::new(
        "threshold_oracle",
        &["pr", "d", "j", "k", "r2sq", "r1c_closed_form", "r1c_crossing", "rel_err", "a2", "a2_rel_err"],
    );
    let mut worst: f64 = 0.0;
    let mut worst_a: f64 = 0.0;
    let mut n = 0;
    for (pr, d, j, k, r2sq, r1c, r, a2, im) in rows.into_iter().flatten() {
        let e = rel(r, r1c);
        let ea = rel(im * im, a2);
        worst = if e.is_nan() { f64::INFINITY } else { worst.max(e) };
        worst_a = if ea.is_nan() { f64::INFINITY } else { worst_a.max(ea) };
        n += 1;
        t.push(vec![pr.into(), d.into(), j.into(), k.into(), r2sq.into(), r1c.into(), r.into(), e.into(), a2.into(), ea.into()]);
    }
    Ok(Section {
        tables: vec![t],
        checks: vec![
            Check::at_least("oracle samples", n as f64, ORACLE_MIN_SAMPLES as f64),
            Check::at_most("oracle threshold relative error", worst, 1e-9),
            Check::at_most("oracle frequency relative error", worst_a, 1e-9),
        ],
        ..Section::default()
    })
}

pub fn classical_limit(run: &Run) -> Res {
    let p = Params::new(run.params.pr, run.params.d, 0.0, PI / 2f64.sqrt())
        .context(|| "classical-limit parameters".into())?;
    let want = 27.0 * PI.powi(4) / 4.0;
    let mut t = Table::new("classical_limit", &["j", "k", "r1sq_stationary"]);
    let mut best = (f64::INFINITY, 0);
    for j in 1..=run.trunc.j_max {
        let r = stationary_threshold(&p, Mode::new(j, 1)).unwrap_or(f64::INFINITY);
        if r < best.0 {
            best = (r, j);
        }
        t.push(vec![j.into(), 1u32.into(), r.into()]);
    }
    let mut c = Check::at_most("classical stationary threshold vs 27 pi^4 / 4", rel(best.0, want), 1e-9);
    c.detail = format!("min over j at j = {}: {} vs {}, relative error {}", best.1, best.0, want, short(c.value));
    let mut data = serde_json::Map::new();
    data.insert("classical_limit".into(), json!({"min_r1sq": best.0, "j": best.1, "expected": want}));
    Ok(Section {
        tables: vec![t],
        checks: vec![c],
        data,
        ..Section::default()
    })
}

fn nearest_eigenvalue(p: &Params, mode: Mode, op: Operator, r1: f64, target: C64) -> Result<C64, CliError> {
    let b = assemble_mode(p, mode, op, r1).context(|| format!("block ({}, {})", mode.j, mode.k))?;
    let v = eigenvalues(&b.m).context(|| "eigenvalues".into())?;
    Ok(v.into_iter()
        .min_by(|x, y| (*x - target).norm().total_cmp(&(*y - target).norm()))
        .expect("non-empty block"))
}

/// Projection-formula `d lambda / d R1` against a centred difference.
pub fn transversality(run: &Run) -> Res {
    let p = &run.params;
    let inc = run.inc()?;
    let crits = run.crits()?;
    let mut cases = vec![("inc", 0.0, inc.mode, Operator::Inc, inc.r1c, inc.a, inc.dlambda, 0.0)];
    for c in crits {
        cases.push(("ac", c.eps, c.mode, Operator::Ac { eps: c.eps }, c.r1c, c.a, c.dlambda, c.abscissa));
    }
    let mut t = Table::new(
        "critical",
        &["system", "eps", "j", "k", "r1c", "a", "abscissa", "dlambda", "dlambda_fd", "rel_err"],
    );
    let (mut worst, mut min_re, mut max_abs) = (0.0f64, f64::INFINITY, 0.0f64);
    for (name, eps, mode, op, r1c, a, dl, absc) in cases {
        let h = 1e-5 * r1c;
        let target = C64::new(absc, a);
        let fd = (nearest_eigenvalue(p, mode, op, r1c + h, target)? - nearest_eigenvalue(p, mode, op, r1c - h, target)?)
            / (2.0 * h);
        let e = (fd - dl).norm() / dl.norm();
        worst = worst.max(e);
        min_re = min_re.min(dl.re);
        max_abs = max_abs.max(absc.abs());
        t.push(vec![
            name.into(),
            eps.into(),
            mode.j.into(),
            mode.k.into(),
            r1c.into(),
            a.into(),
            absc.into(),
            dl.into(),
            fd.into(),
            e.into(),
        ]);
    }
    let mut re = Check::flag("transversality Re dlambda > 0", min_re > 0.0, format!("min Re = {}", short(min_re)));
    re.value = min_re;
    re.limit = 0.0;
    Ok(Section {
        tables: vec![t],
        checks: vec![
            Check::at_most("transversality vs finite difference", worst, 1e-6),
            re,
            Check::at_most("critical abscissa", max_abs, run.cfg.tolerances.root),
        ],
        ..Section::default()
    })
}

/// `max |W M - A^H W| / max |W M|` for one block and its adjoint.
fn adjoint_defect(m: &ModeMatrix, a: &ModeMatrix) -> f64 {
    let w = CMat::from_diagonal(&CVec::from_iterator(m.weights.len(), m.weights.iter().map(|&x| C64::new(x, 0.0))));
    let wm = &w * &m.m;
    let e = &wm - a.m.adjoint() * &w;
    let scale = wm.iter().fold(0.0f64, |s, z| s.max(z.norm()));
    e.iter().fold(0.0f64, |s, z| s.max(z.norm())) / scale
}

/// `max |(u_j, v_k) - delta_jk|` for W-unit eigenvectors `u_j` of `M` and
/// adjoint eigenvectors `v_k` scaled to `(u_k, v_k) = 1`.
fn biorthogonality(m: &ModeMatrix, a: &ModeMatrix) -> Result<f64, CliError> {
    let sm = eig_dense(&m.m).context(|| "eigenvectors".into())?;
    let sa = eig_dense(&a.m).context(|| "adjoint eigenvectors".into())?;
    let n = sm.len();
    let us: Vec<CVec> = sm.right.iter().map(|u| u / C64::new(m.norm(u), 0.0)).collect();
    let vs: Vec<CVec> = (0..n)
        .map(|i| {
            let k = sa.nearest(sm.values[i].conj()).expect("non-empty block");
            let v = &sa.right[k];
            v / m.inner(&us[i], v).conj()
        })
        .collect();
    let mut worst: f64 = 0.0;
    for (i, u) in us.iter().enumerate() {
        for (k, v) in vs.iter().enumerate() {
            let want = if i == k { ONE } else { ZERO };
            worst = worst.max((m.inner(u, v) - want).norm());
        }
    }
    Ok(worst)
}

pub fn structure(run: &Run) -> Res {
    let p = &run.params;
    let inc = run.inc()?;
    let hopf = run.hopf()?;
    let modes = run.trunc.modes();
    let m = run.harmonics();
    let mut t = Table::new("structure", &["system", "eps", "adjoint_identity", "biorthogonality", "bz_plus", "bz_minus"]);
    let blocks = |op: Operator, adj: Operator, r1: f64| -> Result<f64, CliError> {
        let d = par::try_map(&modes, |&mode| -> achopf_core::Result<f64> {
            Ok(adjoint_defect(&assemble_mode(p, mode, op, r1)?, &assemble_mode(p, mode, adj, r1)?))
        })
        .context(|| "adjoint blocks".into())?;
        Ok(max_of(d))
    };
    let crit_biorth = |mode: Mode, op: Operator, adj: Operator, r1: f64| -> Result<f64, CliError> {
        let b = assemble_mode(p, mode, op, r1).context(|| "critical block".into())?;
        let a = assemble_mode(p, mode, adj, r1).context(|| "critical adjoint block".into())?;
        biorthogonality(&b, &a)
    };
    let ad0 = blocks(Operator::Inc, Operator::IncAdjoint, inc.r1c)?;
    let bi0 = crit_biorth(inc.mode, Operator::Inc, Operator::IncAdjoint, inc.r1c)?;
    t.push(vec!["inc".into(), 0.0.into(), ad0.into(), bi0.into(), f64::NAN.into(), f64::NAN.into()]);
    let (mut ad, mut bi, mut bz) = (ad0, bi0, 0.0f64);
    for hd in hopf {
        let c = &hd.crit;
        let (op, adj) = (Operator::Ac { eps: c.eps }, Operator::AcAdjoint { eps: c.eps });
        let a = blocks(op, adj, c.r1c)?;
        let b = crit_biorth(c.mode, op, adj, c.r1c)?;
        let mut r = [0.0; 2];
        for (i, z) in [z_plus(hd, m), z_minus(hd, m)].iter().enumerate() {
            let bzv = apply_b(z, hd, ZERO, 0.0).context(|| format!("B z at eps = {}", c.eps))?;
            r[i] = norm_avg(p, &bzv) / norm_avg(p, z);
        }
        ad = ad.max(a);
        bi = bi.max(b);
        bz = bz.max(r[0]).max(r[1]);
        t.push(vec!["ac".into(), c.eps.into(), a.into(), b.into(), r[0].into(), r[1].into()]);
    }
    Ok(Section {
        tables: vec![t],
        checks: vec![
            Check::at_most("weighted adjoint identity (entrywise, relative)", ad, 1e-13),
            Check::at_most("biorthogonality", bi, 1e-12),
            Check::at_most("B z residual", bz, 1e-12),
        ],
        ..Section::default()
    })
}

pub fn rates(run: &Run) -> Res {
    let study = eps_convergence_study(&run.params, &run.trunc, run.eps_grid(), &run.cfg.root_options())
        .context(|| "eps convergence study".into())?;
    let mut t = Table::new(
        "sweep_eps",
        &["eps", "R1c_eps", "a_eps", "err_R1c", "err_a", "err_uplus", "err_uplus_adj", "err_projection"],
    );
    for r in &study.rows {
        t.push(vec![
            r.eps.into(),
            r.r1c.into(),
            r.a.into(),
            r.err_r1c.into(),
            r.err_a.into(),
            r.err_u_plus.into(),
            r.err_u_plus_adj.into(),
            r.err_projection.into(),
        ]);
    }
    let x: Vec<f64> = study.rows.iter().map(|r| r.eps).collect();
    type Pick = fn(&achopf_core::criticality::ConvergenceRow) -> f64;
    let series: [(&str, Pick, bool); 5] = [
        ("err_R1c", |r| r.err_r1c, true),
        ("err_a", |r| r.err_a, true),
        ("err_uplus", |r| r.err_u_plus, true),
        ("err_uplus_adj", |r| r.err_u_plus_adj, true),
        ("err_projection", |r| r.err_projection, false),
    ];
    let mut ft = Table::new("sweep_eps_fits", &["quantity", "slope", "intercept", "r2", "points", "convergent"]);
    let mut sec = Section::default();
    let mut fits = serde_json::Map::new();
    let mut chart = Chart {
        name: "sweep_eps".into(),
        title: "eps corrections".into(),
        x_label: "eps".into(),
        y_label: "error".into(),
        log_x: true,
        log_y: true,
        series: Vec::new(),
    };
    for (name, pick, checked) in series {
        let y: Vec<f64> = study.rows.iter().map(pick).collect();
        chart.series.push(Series {
            label: name.into(),
            points: x.iter().cloned().zip(y.iter().cloned()).collect(),
        });
        match fit_series(&x, &y) {
            Ok(f) => {
                if let Some(w) = f.warning(name) {
                    sec.warnings.push(w);
                }
                ft.push(vec![
                    name.into(),
                    f.fit.slope.into(),
                    f.fit.intercept.into(),
                    f.fit.r2.into(),
                    f.fit.points.into(),
                    f.convergent.into(),
                ]);
                fits.insert(name.into(), serde_json::to_value(&f).expect("serializable fit"));
                if checked {
                    let ok = (1.8..=2.2).contains(&f.fit.slope);
                    let mut c = Check::flag(
                        &format!("{name} slope"),
                        ok,
                        format!("{} in [1.8, 2.2]", short(f.fit.slope)),
                    );
                    c.value = f.fit.slope;
                    c.limit = 2.0;
                    sec.checks.push(c);
                    sec.checks.push(Check::at_least(&format!("{name} r2"), f.fit.r2, 0.99));
                }
            }
            Err(e) => {
                sec.warnings.push(format!("{name}: {e}"));
                if checked {
                    sec.checks.push(Check::flag(&format!("{name} slope"), false, e.to_string()));
                }
            }
        }
    }
    sec.data.insert("rate_fits".into(), serde_json::Value::Object(fits));
    sec.data
        .insert("incompressible".into(), json!({"r1c": study.r1c_inc, "a": study.a_inc}));
    sec.tables = vec![t, ft];
    sec.charts.push(chart);
    Ok(sec)
}

pub fn branch(run: &Run) -> Res {
    let p = &run.params;
    let inc = run.inc()?;
    let crits = run.crits()?;
    let g = &run.cfg.grid;
    let mut cases = vec![(None, inc.mode, inc.r1c, C64::new(0.0, inc.a))];
    for c in crits {
        cases.push((Some(c.eps), c.mode, c.r1c, c.lambda()));
    }
    let mut t = Table::new("branch", &["system", "eps", "eta", "lambda"]);
    let mut sec = Section::default();
    let mut all_single = true;
    let mut detail = Vec::new();
    for (eps, mode, r1c, start) in cases {
        let eta = default_eta_grid(r1c, g.eta_frac, g.eta_points);
        let br = eigenpair_branch(p, mode, eps, r1c, start, &eta)
            .context(|| format!("eigenpair branch at eps = {}", eps.unwrap_or(0.0)))?;
        for (e, l) in br.eta.iter().zip(&br.lambda) {
            t.push(vec![if eps.is_some() { "ac" } else { "inc" }.into(), eps.unwrap_or(0.0).into(), (*e).into(), (*l).into()]);
        }
        let scale = br.lambda.iter().fold(0.0f64, |s, z| s.max(z.norm()));
        let signs: Vec<f64> = br
            .lambda
            .iter()
            .filter(|z| z.re.abs() > 1e-10 * scale)
            .map(|z| z.re.signum())
            .collect();
        let flips = signs.windows(2).filter(|w| w[0] != w[1]).count();
        let single = flips == 1 && signs.first() == Some(&-1.0);
        all_single &= single;
        detail.push(format!("{}:{flips}", eps.map_or("inc".to_string(), |e| format!("{e}"))));
    }
    sec.checks.push(Check::flag(
        "branch crosses once from stable to unstable",
        all_single,
        format!("sign changes {}", detail.join(" ")),
    ));
    sec.tables.push(t);
    Ok(sec)
}

pub fn gap(run: &Run) -> Res {
    let (g0, gs) = run.gaps()?;
    let mut t = Table::new("gap", &["system", "eps", "kappa1", "slowest_j", "slowest_k", "acoustic_abscissa"]);
    t.push(vec![
        "inc".into(),
        0.0.into(),
        g0.kappa1.into(),
        g0.slowest_mode.j.into(),
        g0.slowest_mode.k.into(),
        f64::NAN.into(),
    ]);
    for g in gs {
        t.push(vec![
            "ac".into(),
            g.eps.unwrap_or(0.0).into(),
            g.kappa1.into(),
            g.slowest_mode.j.into(),
            g.slowest_mode.k.into(),
            g.acoustic_abscissa.unwrap_or(f64::NAN).into(),
        ]);
    }
    let k: Vec<f64> = gs.iter().map(|g| g.kappa1).collect();
    let chart = Chart {
        name: "gap".into(),
        title: "spectral gap".into(),
        x_label: "eps".into(),
        y_label: "kappa1".into(),
        log_x: true,
        log_y: false,
        series: vec![Series {
            label: "kappa1".into(),
            points: gs.iter().map(|g| (g.eps.unwrap_or(0.0), g.kappa1)).collect(),
        }],
    };
    Ok(Section {
        tables: vec![t],
        checks: vec![
            Check::at_least("gap positive (min kappa1)", min_of(k.iter().cloned()), f64::MIN_POSITIVE),
            Check::at_most("gap max/min over eps", ratio(&k), 2.0),
        ],
        charts: vec![chart],
        ..Section::default()
    })
}

pub fn decay(run: &Run) -> Res {
    let st = run.study()?;
    let mut t = Table::new(
        "decay",
        &["eps", "beta", "gap", "kappa1", "kappa_fit", "rate_ratio", "c_fit", "c_energy", "c_oscillation"],
    );
    for s in st {
        let d = &s.decay;
        t.push(vec![
            s.eps.into(),
            s.beta.into(),
            s.gap.into(),
            d.kappa1.into(),
            d.kappa_fit.into(),
            (d.kappa_fit / d.kappa1).into(),
            d.c_fit.into(),
            d.c_energy.into(),
            d.c_oscillation.into(),
        ]);
    }
    let rate = min_of(st.iter().map(|s| s.decay.kappa_fit / s.decay.kappa1));
    let c: Vec<f64> = st.iter().map(|s| s.decay.c_fit).collect();
    Ok(Section {
        tables: vec![t],
        checks: vec![
            Check::at_least("decay rate / kappa1", rate, 0.95),
            Check::at_most("decay prefactor max/min", ratio(&c), 2.0),
        ],
        ..Section::default()
    })
}

pub fn energy(run: &Run) -> Res {
    let st = run.study()?;
    let mut cols = vec!["eps", "continuity", "lower_slack", "upper_slack", "e1_constant"];
    cols.extend(Estimate::ALL.iter().map(|e| e.name()));
    cols.extend(["c_energy", "c_oscillation"]);
    let mut t = Table::new("energy", &cols);
    for s in st {
        let mut row: Vec<Cell> = vec![
            s.eps.into(),
            s.continuity.into(),
            s.sandwich.lower_slack.into(),
            s.sandwich.upper_slack.into(),
            s.sandwich.e1_constant.into(),
        ];
        row.extend(s.checks.iter().map(|c| Cell::from(c.c_star)));
        row.extend([s.decay.c_energy.into(), s.decay.c_oscillation.into()]);
        t.push(row);
    }
    let mut checks = vec![
        Check::at_most("continuity identity", max_of(st.iter().map(|s| s.continuity)), 1e-12),
        Check::at_least(
            "sandwich slack",
            min_of(st.iter().flat_map(|s| [s.sandwich.lower_slack, s.sandwich.upper_slack])),
            0.0,
        ),
    ];
    let e1 = max_of(st.iter().map(|s| s.sandwich.e1_constant));
    checks.push(Check::flag("sandwich constant finite", e1.is_finite(), format!("max {}", short(e1))));
    for (i, e) in Estimate::ALL.iter().enumerate() {
        let c: Vec<f64> = st.iter().map(|s| s.checks[i].c_star).collect();
        let finite = c.iter().all(|x| x.is_finite() && *x > 0.0);
        let r = if finite { ratio(&c) } else { f64::INFINITY };
        checks.push(Check::at_most(&format!("C* {} max/min", e.name()), r, 2.0));
    }
    let osc: Vec<f64> = st.iter().map(|s| s.decay.c_oscillation).collect();
    checks.push(Check::at_most("oscillation integral constant max/min", ratio(&osc), 2.0));
    Ok(Section {
        tables: vec![t],
        checks,
        ..Section::default()
    })
}

fn low_frequency_lambdas(p: &Params) -> [C64; 7] {
    [
        C64::new(1.0, 0.0),
        C64::new(2.0, 0.0),
        C64::new(1.0, 2.0),
        C64::new(0.5, 5.0),
        C64::new(-0.5 * p.d * PI * PI, 3.0),
        C64::new(0.0, 8.0),
        C64::new(0.0, -8.0),
    ]
}

pub fn probes(run: &Run) -> Res {
    let p = &run.params;
    let t = &run.trunc;
    let inc = run.inc()?;
    let crits = run.crits()?;
    let gammas = run.cfg.gammas();
    let re = -0.5 * p.d * PI * PI;
    let lambdas = low_frequency_lambdas(p);
    let mut table = Table::new("probes", &["kind", "field", "eps", "sup_ratio"]);
    let mut checks = Vec::new();
    let hi_fields = probe_fields(t, p.alpha, inc.mode, run.seed() + 7);
    for (i, f) in hi_fields.iter().enumerate() {
        let sups = par::try_map(crits, |c| {
            resolvent_probe_highfreq(p, t, c.eps, c.r1c, re, &gammas, f)
                .map(|v| v.iter().map(|q| q.ratio_high).fold(0.0, f64::max))
                .context(|| format!("high-frequency probe at eps = {}", c.eps))
        })?;
        for (c, s) in crits.iter().zip(&sups) {
            table.push(vec!["high".into(), i.into(), c.eps.into(), (*s).into()]);
        }
        let finite = sups.iter().all(|s| s.is_finite());
        let r = if finite { max_of(sups.iter().cloned()) / median(&sups) } else { f64::INFINITY };
        checks.push(Check::at_most(&format!("high-frequency max/median (field {i})"), r, 2.0));
    }
    let lo_fields = probe_fields(t, p.alpha, inc.mode, run.seed() + 11);
    for (i, f) in lo_fields.iter().enumerate() {
        let sups = par::try_map(crits, |c| {
            resolvent_probe_lowfreq(p, t, c, &lambdas, run.cfg.probe.c0, f)
                .map(|v| v.iter().map(|q| q.ratio_u).fold(0.0, f64::max))
                .context(|| format!("low-frequency probe at eps = {}", c.eps))
        })?;
        for (c, s) in crits.iter().zip(&sups) {
            table.push(vec!["low".into(), i.into(), c.eps.into(), (*s).into()]);
        }
        let finite = sups.iter().all(|s| s.is_finite());
        let r = if finite { ratio(&sups) } else { f64::INFINITY };
        checks.push(Check::at_most(&format!("low-frequency max/min (field {i})"), r, 2.0));
    }
    Ok(Section {
        tables: vec![table],
        checks,
        ..Section::default()
    })
}

pub const POLE_RADII: [f64; 4] = [1e-2, 1e-3, 1e-4, 1e-5];

pub fn poles(run: &Run) -> Res {
    let hopf = run.hopf()?;
    let m = run.harmonics();
    let mut t = Table::new("poles", &["eps", "k", "exponent", "r2"]);
    let mut worst: f64 = 0.0;
    for hd in hopf {
        for k in [-1, 0, 1] {
            let pole = C64::new(0.0, k as f64 * hd.a_eps());
            let n = POLE_RADII
                .iter()
                .map(|&r| resolvent_norm(hd, pole + r, m))
                .collect::<achopf_core::Result<Vec<f64>>>()
                .context(|| format!("resolvent norm at eps = {}", hd.eps()))?;
            let (exp, r2) = match fit_series(&POLE_RADII, &n) {
                Ok(f) => (-f.fit.slope, f.fit.r2),
                Err(_) => (f64::NAN, f64::NAN),
            };
            worst = if exp.is_nan() { f64::INFINITY } else { worst.max((exp - 1.0).abs()) };
            t.push(vec![hd.eps().into(), k.into(), exp.into(), r2.into()]);
        }
    }
    Ok(Section {
        tables: vec![t],
        checks: vec![Check::at_most("pole exponent |p - 1|", worst, 0.05)],
        ..Section::default()
    })
}

fn dist(p: &Params, a: &PeriodicField, b: &PeriodicField) -> f64 {
    norm_avg(p, &a.combine(ONE, b, -ONE)) / norm_avg(p, b)
}

/// Whether `solve_beps` accepts `q + c z` for each amplitude `c`.
fn acceptance_pattern(hd: &HopfData, q: &PeriodicField, z: &PeriodicField, amps: &[C64]) -> Vec<bool> {
    amps.iter().map(|&c| solve_beps(&q.combine(ONE, z, c), hd).is_ok()).collect()
}

pub const THRESHOLD_PROBES: [f64; 4] = [0.5e-12, 0.99e-12, 1.01e-12, 2e-12];

pub fn periodic_solvability(run: &Run) -> Res {
    let p = &run.params;
    let hopf = run.hopf()?;
    let m = run.harmonics();
    let s = run.seed();
    let mut t = Table::new(
        "periodic",
        &["eps", "residual", "discrepancy", "round_trip", "threshold_exact"],
    );
    let (mut res, mut disc, mut trip, mut exact) = (0.0f64, 0.0f64, 0.0f64, true);
    for hd in hopf {
        let ctx = || format!("periodic solve at eps = {}", hd.eps());
        let f = random_q_field(hd, m, 4, s + 7).context(ctx)?;
        let sol = solve_beps(&f, hd).context(ctx)?;
        let v = random_q_field(hd, m, 5, s + 9).context(ctx)?;
        let back = solve_beps(&apply_b(&v, hd, ZERO, 0.0).context(ctx)?, hd).context(ctx)?;
        let rt = dist(p, &back.u, &v);
        let q = random_q_field(hd, m, 3, s + 11).context(ctx)?;
        let want: Vec<bool> = THRESHOLD_PROBES.iter().map(|&a| a <= 1e-12).collect();
        let mut ok = true;
        for (z, unit) in [(z_plus(hd, m), ONE), (z_minus(hd, m), C64::new(0.0, 1.0))] {
            let amps: Vec<C64> = THRESHOLD_PROBES.iter().map(|&a| unit * a).collect();
            ok &= acceptance_pattern(hd, &q, &z, &amps) == want;
        }
        res = res.max(sol.residual);
        disc = disc.max(sol.discrepancy);
        trip = trip.max(rt);
        exact &= ok;
        t.push(vec![hd.eps().into(), sol.residual.into(), sol.discrepancy.into(), rt.into(), ok.into()]);
    }
    Ok(Section {
        tables: vec![t],
        checks: vec![
            Check::at_most("periodic solve residual", res, 1e-10),
            Check::at_most("diagonal vs representation discrepancy", disc, 1e-8),
            Check::at_most("round trip", trip, 1e-9),
            Check::flag(
                "solvability rejection exactly above 1e-12",
                exact,
                format!("brackets {THRESHOLD_PROBES:?} accepted iff <= 1e-12"),
            ),
        ],
        ..Section::default()
    })
}

pub fn omega_uniformity(run: &Run) -> Res {
    let p = &run.params;
    let hopf = run.hopf()?;
    let m = run.harmonics();
    let omegas = &run.cfg.grid.omega;
    let mut t = Table::new("omega", &["eps", "omega", "sup_ratio", "residual"]);
    let mut grid = Vec::new();
    let mut res: f64 = 0.0;
    let mut chart = Chart {
        name: "omega".into(),
        title: "Y over X ratio".into(),
        x_label: "omega".into(),
        y_label: "sup |||u||| / |||F|||".into(),
        log_x: false,
        log_y: false,
        series: Vec::new(),
    };
    for hd in hopf {
        let ctx = || format!("omega solve at eps = {}", hd.eps());
        let fs = (0..3)
            .map(|k| random_q_field(hd, m, 4, run.seed() + 20 + k))
            .collect::<achopf_core::Result<Vec<_>>>()
            .context(ctx)?;
        let xs: Vec<f64> = fs.iter().map(|f| x_norm(p, f)).collect();
        let row = par::try_map(omegas, |&w| -> Result<(f64, f64), CliError> {
            let mut sup: f64 = 0.0;
            let mut r: f64 = 0.0;
            for (f, x) in fs.iter().zip(&xs) {
                let o = solve_beps_omega(f, w, hd).context(ctx)?;
                let [bp, bm] = brackets(&o.u, hd).context(ctx)?;
                r = r.max(o.residual).max(bp.norm()).max(bm.norm());
                sup = sup.max(y_norm(p, &o.u, SUP_SAMPLES) / x);
            }
            Ok((sup, r))
        })?;
        let mut pts = Vec::new();
        for (&w, &(sup, r)) in omegas.iter().zip(&row) {
            t.push(vec![hd.eps().into(), w.into(), sup.into(), r.into()]);
            grid.push((hd.eps(), w, sup));
            res = res.max(r);
            pts.push((w, sup));
        }
        chart.series.push(Series {
            label: format!("eps {}", hd.eps()),
            points: pts,
        });
    }
    let eps_min = min_of(hopf.iter().map(|h| h.eps()));
    let w0 = omegas
        .iter()
        .cloned()
        .min_by(|a, b| a.abs().total_cmp(&b.abs()))
        .expect("non-empty omega grid");
    let reference = grid
        .iter()
        .find(|g| g.0 == eps_min && g.1 == w0)
        .map_or(f64::NAN, |g| g.2);
    let vals: Vec<f64> = grid.iter().map(|g| g.2).collect();
    Ok(Section {
        tables: vec![t],
        checks: vec![
            Check::at_most("omega solve residual and brackets", res, 1e-10),
            Check::at_most("omega sup ratio max/min", ratio(&vals), 2.0),
            Check::at_most("omega sup ratio / reference", max_of(vals.iter().cloned()) / reference, 10.0),
        ],
        charts: vec![chart],
        ..Section::default()
    })
}

pub const STOKES_SIZES: [u32; 4] = [4, 8, 16, 32];

pub fn stokes(run: &Run) -> Res {
    let alpha = run.params.alpha;
    let mut t = Table::new(
        "stokes",
        &["n_max", "modes", "max_residual", "max_r1", "max_r2", "worst_r1_j", "worst_r1_k", "worst_r2_j", "worst_r2_k"],
    );
    let mut sweeps = Vec::new();
    for n in STOKES_SIZES {
        let s = stokes_sweep(alpha, n, run.seed() + 3).context(|| format!("Stokes sweep to {n}"))?;
        t.push(vec![
            n.into(),
            s.modes.into(),
            s.max_residual.into(),
            s.max_r1.into(),
            s.max_r2.into(),
            s.worst_r1_mode.j.into(),
            s.worst_r1_mode.k.into(),
            s.worst_r2_mode.j.into(),
            s.worst_r2_mode.k.into(),
        ]);
        sweeps.push(s);
    }
    let (first, last) = (&sweeps[0], &sweeps[sweeps.len() - 1]);
    let growth = (last.max_r1 / first.max_r1).max(last.max_r2 / first.max_r2);
    Ok(Section {
        tables: vec![t],
        checks: vec![
            Check::at_most("Stokes residual", max_of(sweeps.iter().map(|s| s.max_residual)), 1e-12),
            Check::at_most(
                "Stokes estimate ratios",
                max_of(sweeps.iter().flat_map(|s| [s.max_r1, s.max_r2])),
                3.0,
            ),
            Check::at_most("Stokes ratio growth from 4 to 32", growth, 1.5),
        ],
        ..Section::default()
    })
}
