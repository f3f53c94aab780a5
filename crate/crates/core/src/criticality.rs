//! Oscillatory onset for the incompressible and the compressible blocks.
//!
//! For the incompressible system each full mode has a cubic
//! characteristic polynomial `l^3 + A l^2 + B l + C` with
//! `s = Pr mu`, `t = mu`, `u = d mu`, `q = a^2 / mu`:
//!
//! ```text
//! A = s + t + u
//! B = st + su + tu - Pr q (R1^2 - R2^2)
//! C = stu - Pr q (u R1^2 - t R2^2)
//! ```
//!
//! A purely imaginary pair `+-i a` appears where `A B = C` with `a^2 = B`,
//! a real zero root where `C = 0`. The compressible threshold is located
//! by root-finding on the spectral abscissa near the incompressible one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_rate, RateFit};
use crate::linalg::{spectral_norm, weighted_dot, CMat, CVec, C64};
use crate::model::{
    assemble_mode, embed_inc, Field, Mode, ModeKind, Operator, Params, Space, Truncation,
};
use crate::par;
use crate::smalleig::{eig_dense, eigenvalues};

/// `(R1^2, a^2)` where the mode's cubic has a purely imaginary pair, or
/// `None` when that happens at no positive `R1^2`.
pub fn oscillatory_threshold(p: &Params, mode: Mode) -> Option<(f64, f64)> {
    if mode.kind() != ModeKind::Full {
        return None;
    }
    let mu = mode.mu(p.alpha);
    let q = mode.a(p.alpha).powi(2) / mu;
    let (s, t, u) = (p.pr * mu, mu, p.d * mu);
    let r2sq = p.r2 * p.r2;
    let num = (s + t + u) * (s * t + s * u + t * u) - s * t * u + p.pr * q * r2sq * (s + u);
    let r1sq = num / (p.pr * q * (s + t));
    let a2 = s * t + s * u + t * u - p.pr * q * (r1sq - r2sq);
    (r1sq > 0.0).then_some((r1sq, a2))
}

/// `R1^2` at which the mode gains a zero eigenvalue.
pub fn stationary_threshold(p: &Params, mode: Mode) -> Option<f64> {
    if mode.kind() != ModeKind::Full {
        return None;
    }
    let mu = mode.mu(p.alpha);
    let a2 = mode.a(p.alpha).powi(2);
    Some(mu.powi(3) / a2 + p.r2 * p.r2 / p.d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnsetScan {
    /// Lowest oscillatory threshold with `a^2 > 0`, and its mode.
    pub oscillatory: Option<(f64, Mode)>,
    /// Lowest stationary threshold and its mode.
    pub stationary: (f64, Mode),
    /// Runner-up oscillatory threshold, for the degeneracy test.
    pub second_oscillatory: Option<f64>,
}

pub fn scan_onset(p: &Params, trunc: &Truncation) -> Result<OnsetScan> {
    let modes = trunc.full_modes();
    if modes.is_empty() {
        return Err(Error::Truncation("no full modes".into()));
    }
    let rows = par::map(&modes, |&m| {
        let osc = oscillatory_threshold(p, m)
            .filter(|&(_, a2)| a2 > 0.0)
            .map(|(r, _)| r.sqrt());
        let st = stationary_threshold(p, m).map(f64::sqrt).unwrap_or(f64::INFINITY);
        (m, osc, st)
    });
    let mut osc: Vec<(f64, Mode)> = rows
        .iter()
        .filter_map(|&(m, o, _)| o.map(|r| (r, m)))
        .collect();
    osc.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let stationary = rows
        .iter()
        .map(|&(m, _, s)| (s, m))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .expect("non-empty");
    Ok(OnsetScan {
        oscillatory: osc.first().copied(),
        stationary,
        second_oscillatory: osc.get(1).map(|x| x.0),
    })
}

/// Critical data of the incompressible problem.
#[derive(Debug, Clone, PartialEq)]
pub struct IncCritical {
    pub params: Params,
    pub mode: Mode,
    pub r1c: f64,
    /// Hopf frequency.
    pub a: f64,
    /// Right eigenvector on `(w2, theta, psi)`, gauged to `theta = 1`.
    pub u_plus: CVec,
    /// Adjoint eigenvector with `(u_plus, u_plus_adj) = 1`.
    pub u_plus_adj: CVec,
    /// `d lambda / d R1` along the critical branch.
    pub dlambda: C64,
    pub stationary_r1: f64,
}

impl IncCritical {
    /// `u_+` lifted to five components.
    pub fn u_plus_full(&self) -> CVec {
        embed_inc(&self.params, self.mode, &self.u_plus, C64::new(0.0, self.a), false)
    }

    pub fn u_plus_adj_full(&self) -> CVec {
        // The adjoint vector belongs to the conjugate eigenvalue.
        embed_inc(&self.params, self.mode, &self.u_plus_adj, C64::new(0.0, -self.a), true)
    }
}

const THETA: usize = 3;

fn gauge(v: &CVec, idx: usize) -> Result<CVec> {
    let g = v[idx];
    if g.norm() < 1e-12 * v.norm() {
        return Err(Error::Singular("eigenvector gauge component vanishes"));
    }
    Ok(v / g)
}

/// Eigenpair of `block` nearest to `target`, with the matching adjoint
/// eigenvector rescaled to biorthonormality.
fn critical_pair(
    block: &crate::model::ModeMatrix,
    adj: &crate::model::ModeMatrix,
    target: C64,
    gauge_idx: usize,
) -> Result<(C64, CVec, CVec)> {
    let sys = eig_dense(&block.m)?;
    let i = sys.nearest(target).expect("non-empty block");
    let lam = sys.values[i];
    let u = gauge(&sys.right[i], gauge_idx)?;
    let asys = eig_dense(&adj.m)?;
    let ia = asys.nearest(lam.conj()).expect("non-empty block");
    let v = asys.right[ia].clone();
    let s = block.inner(&u, &v);
    if s.norm() < 1e-14 {
        return Err(Error::Singular("critical eigenvalue is defective"));
    }
    Ok((lam, u.clone(), v / s.conj()))
}

pub fn critical_inc(p: &Params, trunc: &Truncation) -> Result<IncCritical> {
    if !p.hopf_admissible() {
        return Err(Error::NoHopf(format!(
            "need Pr > 1 and 0 < d < 1 (Pr = {}, d = {})",
            p.pr, p.d
        )));
    }
    let scan = scan_onset(p, trunc)?;
    let Some((r1c, mode)) = scan.oscillatory else {
        return Err(Error::NoHopf("no mode has an oscillatory threshold".into()));
    };
    if r1c >= scan.stationary.0 {
        return Err(Error::NoHopf(format!(
            "stationary onset {} precedes oscillatory onset {}",
            scan.stationary.0, r1c
        )));
    }
    if let Some(r) = scan.second_oscillatory {
        if (r - r1c).abs() <= 1e-9 * r1c {
            return Err(Error::NoHopf("two modes reach the threshold together".into()));
        }
    }
    if mode.j >= trunc.j_max || mode.k >= trunc.k_max {
        return Err(Error::Truncation(format!(
            "critical mode ({}, {}) sits on the truncation edge",
            mode.j, mode.k
        )));
    }
    let (_, a2) = oscillatory_threshold(p, mode).expect("scan found it");
    let a = a2.sqrt();
    let block = assemble_mode(p, mode, Operator::Inc, r1c)?;
    let adj = assemble_mode(p, mode, Operator::IncAdjoint, r1c)?;
    // theta sits at index 1 of (w2, theta, psi).
    let (lam, u, v) = critical_pair(&block, &adj, C64::new(0.0, a), 1)?;
    if (lam - C64::new(0.0, a)).norm() > 1e-8 * a.max(1.0) {
        return Err(Error::NoHopf(format!("block eigenvalue {lam} misses i{a}")));
    }
    let k = assemble_mode(p, mode, Operator::K { space: Space::Incompressible }, r1c)?;
    let dlambda = -block.inner(&(&k.m * &u), &v);
    Ok(IncCritical {
        params: *p,
        mode,
        r1c,
        a,
        u_plus: u,
        u_plus_adj: v,
        dlambda,
        stationary_r1: scan.stationary.0,
    })
}

/// Largest real part over all compressible mode blocks.
pub fn spectral_abscissa(p: &Params, modes: &[Mode], eps: f64, r1: f64) -> Result<f64> {
    let vals = par::try_map(modes, |&m| -> Result<f64> {
        let b = assemble_mode(p, m, Operator::Ac { eps }, r1)?;
        Ok(eigenvalues(&b.m)?
            .first()
            .map_or(f64::NEG_INFINITY, |z| z.re))
    })?;
    Ok(vals.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RootOptions {
    /// Initial half-width of the bracket relative to the incompressible
    /// threshold.
    pub rel_bracket: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for RootOptions {
    fn default() -> Self {
        Self {
            rel_bracket: 0.1,
            tol: 1e-12,
            max_iter: 200,
        }
    }
}

/// Root of `g` in `[lo, hi]` with `g(lo) < 0 < g(hi)`: secant steps with
/// the Illinois down-weighting, bisection when a step leaves the bracket.
pub fn bracketed_root(
    mut g: impl FnMut(f64) -> Result<f64>,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(f64, f64)> {
    let mut glo = g(lo)?;
    let mut ghi = g(hi)?;
    if !(glo < 0.0 && ghi > 0.0) {
        return Err(Error::NoBracket { lo, hi });
    }
    let mut side = 0i8;
    let mut best = if glo.abs() < ghi.abs() { (lo, glo) } else { (hi, ghi) };
    for it in 0..max_iter {
        let mut x = hi - ghi * (hi - lo) / (ghi - glo);
        if !(x > lo && x < hi) || it % 8 == 7 {
            x = 0.5 * (lo + hi);
        }
        let gx = g(x)?;
        if gx.abs() < best.1.abs() {
            best = (x, gx);
        }
        if gx.abs() <= tol {
            return Ok((x, gx));
        }
        if gx < 0.0 {
            lo = x;
            glo = gx;
            if side == -1 {
                ghi *= 0.5;
            }
            side = -1;
        } else {
            hi = x;
            ghi = gx;
            if side == 1 {
                glo *= 0.5;
            }
            side = 1;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi.abs() {
            return Ok(best);
        }
    }
    Err(Error::Stagnation(best.1.abs()))
}

/// Critical data of the compressible problem at one `eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticalPoint {
    pub eps: f64,
    pub mode: Mode,
    pub r1c: f64,
    pub a: f64,
    /// Five-component eigenvector, gauged to `theta = 1`.
    pub u_plus: CVec,
    /// Adjoint eigenvector with `(u_plus, u_plus_adj)_eps = 1`.
    pub u_plus_adj: CVec,
    /// Spectral abscissa at the returned threshold.
    pub abscissa: f64,
    pub dlambda: C64,
    /// Relative bracket half-width that finally contained the root.
    pub bracket: f64,
}

impl CriticalPoint {
    pub fn lambda(&self) -> C64 {
        C64::new(self.abscissa, self.a)
    }

    pub fn u_minus(&self) -> CVec {
        self.u_plus.map(|z| z.conj())
    }

    pub fn u_minus_adj(&self) -> CVec {
        self.u_plus_adj.map(|z| z.conj())
    }

    /// Inner-product weights of the critical block.
    pub fn weights(&self, p: &Params) -> Vec<f64> {
        let nu = self.mode.basis_norm(p.alpha);
        self.mode
            .components()
            .iter()
            .map(|&c| p.component_weight(self.eps, c) * nu)
            .collect()
    }

    /// `[(v, u_+*), (v, u_-*)]` for a coefficient vector of the critical mode.
    pub fn brackets(&self, p: &Params, v: &CVec) -> [C64; 2] {
        let w = self.weights(p);
        [
            weighted_dot(v.as_slice(), self.u_plus_adj.as_slice(), &w),
            weighted_dot(v.as_slice(), self.u_minus_adj().as_slice(), &w),
        ]
    }

    /// Remove the critical-pair component of `v` in place.
    pub fn project_out(&self, p: &Params, v: &mut CVec) {
        let [bp, bm] = self.brackets(p, v);
        *v -= &self.u_plus * bp + self.u_minus() * bm;
    }

    /// `Q` applied to a whole field.
    pub fn project_field(&self, p: &Params, f: &mut Field) {
        if let Some(e) = f.mode_mut(self.mode) {
            let mut v = CVec::from_vec(e.coeffs.clone());
            self.project_out(p, &mut v);
            e.coeffs = v.iter().cloned().collect();
        }
    }
}

pub fn critical_ac(
    p: &Params,
    trunc: &Truncation,
    eps: f64,
    inc: &IncCritical,
    opts: &RootOptions,
) -> Result<CriticalPoint> {
    let modes = trunc.modes();
    let g = |r: f64| spectral_abscissa(p, &modes, eps, r);
    let mut rel = opts.rel_bracket;
    let (r1c, _) = loop {
        let lo = inc.r1c * (1.0 - rel);
        let hi = inc.r1c * (1.0 + rel);
        match bracketed_root(g, lo, hi, opts.tol, opts.max_iter) {
            Err(Error::NoBracket { .. }) if rel < 0.8 => rel = (rel * 2.0).min(0.9),
            other => break other?,
        }
    };
    let block = assemble_mode(p, inc.mode, Operator::Ac { eps }, r1c)?;
    let adj = assemble_mode(p, inc.mode, Operator::AcAdjoint { eps }, r1c)?;
    let (lam, u, v) = critical_pair(&block, &adj, C64::new(0.0, inc.a), THETA)?;
    let abscissa = spectral_abscissa(p, &modes, eps, r1c)?;
    if (abscissa - lam.re).abs() > 1e-9 * lam.norm().max(1.0) {
        return Err(Error::NoHopf(format!(
            "the abscissa at eps = {eps} is not attained on mode ({}, {})",
            inc.mode.j, inc.mode.k
        )));
    }
    let k = assemble_mode(p, inc.mode, Operator::K { space: Space::Compressible }, r1c)?;
    let dlambda = -block.inner(&(&k.m * &u), &v);
    Ok(CriticalPoint {
        eps,
        mode: inc.mode,
        r1c,
        a: lam.im,
        u_plus: u,
        u_plus_adj: v,
        abscissa: lam.re,
        dlambda,
        bracket: rel,
    })
}

/// `lambda_+(eta)` along `R1 = r1c + eta`, continued from `start` at the
/// grid point nearest `eta = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub mode: Mode,
    pub eps: Option<f64>,
    pub eta: Vec<f64>,
    pub lambda: Vec<C64>,
}

/// `2 * count + 1` points spanning `+-frac * r1c`.
pub fn default_eta_grid(r1c: f64, frac: f64, count: usize) -> Vec<f64> {
    let n = count as f64;
    (0..=2 * count)
        .map(|i| frac * r1c * (i as f64 - n) / n)
        .collect()
}

/// Nearest-eigenvalue continuation. Fails when the runner-up is within
/// twice the distance of the chosen eigenvalue, where the choice would
/// be ambiguous.
pub fn eigenpair_branch(
    p: &Params,
    mode: Mode,
    eps: Option<f64>,
    r1c: f64,
    start: C64,
    eta: &[f64],
) -> Result<Branch> {
    if eta.is_empty() || eta.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter {
            name: "eta grid",
            reason: "must be non-empty and increasing".into(),
        });
    }
    let op = eps.map_or(Operator::Inc, |eps| Operator::Ac { eps });
    let step = |prev: C64, e: f64| -> Result<C64> {
        let b = assemble_mode(p, mode, op, r1c + e)?;
        let mut v = eigenvalues(&b.m)?;
        v.sort_by(|x, y| (*x - prev).norm().total_cmp(&(*y - prev).norm()));
        let d1 = (v[0] - prev).norm();
        if v.len() > 1 && (v[1] - prev).norm() <= 2.0 * d1 && d1 > 0.0 {
            return Err(Error::Rejected(format!(
                "branch collision near eta = {e}; refine the grid"
            )));
        }
        Ok(v[0])
    };
    let i0 = (0..eta.len())
        .min_by(|&i, &j| eta[i].abs().total_cmp(&eta[j].abs()))
        .unwrap();
    let mut lambda = vec![C64::new(0.0, 0.0); eta.len()];
    lambda[i0] = step(start, eta[i0])?;
    for i in i0 + 1..eta.len() {
        lambda[i] = step(lambda[i - 1], eta[i])?;
    }
    for i in (0..i0).rev() {
        lambda[i] = step(lambda[i + 1], eta[i])?;
    }
    Ok(Branch {
        mode,
        eps,
        eta: eta.to_vec(),
        lambda,
    })
}

/// Matrix of the spectral projection onto the critical pair in plain
/// coefficient coordinates: `x -> sum (x, v)_W u` over `u_+` and `u_-`.
fn pair_projection(u: &CVec, v: &CVec, w: &[f64]) -> CMat {
    let wv = CVec::from_iterator(v.len(), v.iter().zip(w).map(|(z, c)| z * *c));
    let p = u * wv.adjoint();
    let pc = p.map(|z| z.conj());
    p + pc
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub eps: f64,
    pub r1c: f64,
    pub a: f64,
    pub err_r1c: f64,
    pub err_a: f64,
    pub err_u_plus: f64,
    pub err_u_plus_adj: f64,
    pub err_projection: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsConvergence {
    pub r1c_inc: f64,
    pub a_inc: f64,
    pub rows: Vec<ConvergenceRow>,
    pub fit_r1c: RateFit,
    pub fit_a: RateFit,
    pub fit_u_plus: RateFit,
    pub fit_u_plus_adj: RateFit,
    pub fit_projection: RateFit,
}

pub fn default_rate_grid() -> Vec<f64> {
    (0..6).map(|i| 0.1 * 0.5f64.powi(i)).collect()
}

pub fn eps_convergence_study(
    p: &Params,
    trunc: &Truncation,
    eps_grid: &[f64],
    opts: &RootOptions,
) -> Result<EpsConvergence> {
    let inc = critical_inc(p, trunc)?;
    let u0 = inc.u_plus_full();
    let v0 = inc.u_plus_adj_full();
    let nu = inc.mode.basis_norm(p.alpha);
    let w0: Vec<f64> = crate::model::Mode::components(inc.mode)
        .iter()
        .map(|&c| if c.is_fluid() { p.component_weight(1.0, c) * nu } else { 0.0 })
        .collect();
    let p0 = pair_projection(&u0, &v0, &w0);
    // Each eps is an independent root-find; the mode scans inside run
    // sequentially per eps when nested under this map.
    let rows = par::try_map(eps_grid, |&eps| -> Result<ConvergenceRow> {
        let cp = critical_ac(p, trunc, eps, &inc, opts)?;
        let block = assemble_mode(p, inc.mode, Operator::Ac { eps }, cp.r1c)?;
        let pe = pair_projection(&cp.u_plus, &cp.u_plus_adj, &block.weights);
        Ok(ConvergenceRow {
            eps,
            r1c: cp.r1c,
            a: cp.a,
            err_r1c: (cp.r1c - inc.r1c).abs(),
            err_a: (cp.a - inc.a).abs(),
            err_u_plus: (&cp.u_plus - &u0).norm(),
            err_u_plus_adj: (&cp.u_plus_adj - &v0).norm(),
            err_projection: spectral_norm(&(pe - &p0)),
        })
    })?;
    let h: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let col = |f: fn(&ConvergenceRow) -> f64| -> Vec<f64> { rows.iter().map(f).collect() };
    Ok(EpsConvergence {
        r1c_inc: inc.r1c,
        a_inc: inc.a,
        fit_r1c: fit_rate(&h, &col(|r| r.err_r1c))?,
        fit_a: fit_rate(&h, &col(|r| r.err_a))?,
        fit_u_plus: fit_rate(&h, &col(|r| r.err_u_plus))?,
        fit_u_plus_adj: fit_rate(&h, &col(|r| r.err_u_plus_adj))?,
        fit_projection: fit_rate(&h, &col(|r| r.err_projection))?,
        rows,
    })
}

/// Range of `R2` over which oscillatory onset comes first with `a^2 > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SalinityWindow {
    pub lower: Option<f64>,
    /// `None` when the window is still open at the end of the search.
    pub upper: Option<f64>,
    pub search_max: f64,
}

fn oscillation_first(p: &Params, trunc: &Truncation) -> bool {
    match scan_onset(p, trunc) {
        Ok(s) => s.oscillatory.is_some_and(|(r, _)| r < s.stationary.0),
        Err(_) => false,
    }
}

pub fn salinity_window(base: &Params, trunc: &Truncation, r2_max: f64, samples: usize) -> SalinityWindow {
    let with = |r2: f64| Params { r2, ..*base };
    let test = |r2: f64| oscillation_first(&with(r2), trunc);
    let grid: Vec<f64> = (0..=samples).map(|i| r2_max * i as f64 / samples as f64).collect();
    let flags = par::map(&grid, |&r| test(r));
    let refine = |mut lo: f64, mut hi: f64, lo_flag: bool| {
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if test(mid) == lo_flag {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let Some(first) = flags.iter().position(|&f| f) else {
        return SalinityWindow {
            lower: None,
            upper: None,
            search_max: r2_max,
        };
    };
    let lower = if first == 0 {
        Some(0.0)
    } else {
        Some(refine(grid[first - 1], grid[first], false))
    };
    let upper = flags[first..]
        .iter()
        .position(|&f| !f)
        .map(|off| refine(grid[first + off - 1], grid[first + off], true));
    SalinityWindow {
        lower,
        upper,
        search_max: r2_max,
    }
}
