//! Time-periodic fields of period `2 pi / a` as truncated Fourier series in
//! time, and the periodic operator `B u = beta du/dt - M u` with
//! `beta = a^eps / a`, which is diagonal in (harmonic, mode).
//!
//! Harmonic `m` of `B` is the block `i m a^eps - M`. The blocks `(+-1,
//! critical mode)` are singular with kernels `u_+-`; they are solved on the
//! complement of the kernel by a bordered system.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::criticality::{CriticalPoint, IncCritical};
use crate::dynamics::ModeFlow;
use crate::error::{Error, Result};
use crate::linalg::{phi1, solve, weighted_dot, CMat, CVec, C64, I, ONE, ZERO};
use crate::model::{assemble_mode, mode_norms, Component, Field, Mode, ModeMatrix, ModeVector, Operator, Params, Truncation};
use crate::par;

pub const DEFAULT_HARMONICS: usize = 16;
/// Largest bracket `|[F]_+-|` accepted as solvable.
pub const SOLVABILITY_TOL: f64 = 1e-12;
/// Distance to `i k a^eps` below which a resolvent point is a pole.
pub const POLE_TOL: f64 = 1e-10;
/// Relative smallest singular value below which a block is singular.
const SINGULAR_TOL: f64 = 1e-13;

pub fn omega_grid() -> Vec<f64> {
    vec![-0.25, -0.1, -0.01, 0.0, 0.01, 0.1, 0.25]
}

/// Critical data for the periodic problem at one eps.
#[derive(Debug, Clone)]
pub struct HopfData {
    pub params: Params,
    pub trunc: Truncation,
    pub crit: CriticalPoint,
    /// Base frequency, the incompressible Hopf frequency.
    pub a: f64,
}

impl HopfData {
    pub fn new(params: Params, trunc: Truncation, inc: &IncCritical, crit: CriticalPoint) -> Self {
        Self {
            params,
            trunc,
            crit,
            a: inc.a,
        }
    }

    pub fn eps(&self) -> f64 {
        self.crit.eps
    }

    pub fn a_eps(&self) -> f64 {
        self.crit.a
    }

    pub fn beta(&self) -> f64 {
        self.crit.a / self.a
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.a
    }

    fn block(&self, mode: Mode) -> Result<ModeMatrix> {
        assemble_mode(&self.params, mode, Operator::Ac { eps: self.eps() }, self.crit.r1c)
    }

    fn check(&self, u: &PeriodicField) -> Result<()> {
        if (u.a - self.a).abs() > 1e-14 * self.a {
            return Err(Error::InvalidParameter {
                name: "base_freq",
                reason: format!("field has a = {}, critical data has a = {}", u.a, self.a),
            });
        }
        if (u.eps - self.eps()).abs() > 1e-14 * self.eps() {
            return Err(Error::InvalidParameter {
                name: "eps",
                reason: format!("field has eps = {}, critical data has eps = {}", u.eps, self.eps()),
            });
        }
        if u.harmonics.len() % 2 == 0 || u.m_max() < 1 {
            return Err(Error::InvalidParameter {
                name: "M",
                reason: "need harmonics -M..M with M >= 1".into(),
            });
        }
        let modes = self.trunc.modes();
        for h in &u.harmonics {
            if h.entries.len() != modes.len() || h.entries.iter().zip(&modes).any(|(e, m)| e.mode != *m) {
                return Err(Error::InvalidParameter {
                    name: "field",
                    reason: "modes differ from the truncation of the critical data".into(),
                });
            }
        }
        Ok(())
    }

    /// Projector onto span{u_+, u_-} along the adjoint pair, as a matrix.
    fn projector(&self) -> CMat {
        let w = self.crit.weights(&self.params);
        let mut p = CMat::zeros(w.len(), w.len());
        for (u, v) in [
            (self.crit.u_plus.clone(), self.crit.u_plus_adj.clone()),
            (self.crit.u_minus(), self.crit.u_minus_adj()),
        ] {
            let wv = CVec::from_fn(w.len(), |i, _| v[i] * w[i]);
            p += &u * wv.adjoint();
        }
        p
    }
}

/// Harmonics `-M..M` of a periodic field; `harmonics[m + M]` is the
/// coefficient of `e^{i m a t}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicField {
    pub a: f64,
    pub eps: f64,
    pub harmonics: Vec<Field>,
}

impl PeriodicField {
    pub fn zeros(a: f64, eps: f64, m_max: usize, trunc: &Truncation) -> Self {
        Self {
            a,
            eps,
            harmonics: vec![Field::zeros(trunc); 2 * m_max + 1],
        }
    }

    pub fn m_max(&self) -> usize {
        self.harmonics.len() / 2
    }

    pub fn orders(&self) -> impl Iterator<Item = i32> {
        let m = self.m_max() as i32;
        -m..=m
    }

    pub fn get(&self, m: i32) -> Option<&Field> {
        let k = m + self.m_max() as i32;
        if k < 0 {
            return None;
        }
        self.harmonics.get(k as usize)
    }

    pub fn get_mut(&mut self, m: i32) -> Option<&mut Field> {
        let k = m + self.m_max() as i32;
        if k < 0 {
            return None;
        }
        self.harmonics.get_mut(k as usize)
    }

    /// Value at time `t`.
    pub fn at(&self, t: f64) -> Field {
        let mut out = self.harmonics[0].clone();
        for e in &mut out.entries {
            e.coeffs.iter_mut().for_each(|z| *z = ZERO);
        }
        for (h, m) in self.harmonics.iter().zip(self.orders()) {
            let ph = (I * (m as f64 * self.a * t)).exp();
            for (o, e) in out.entries.iter_mut().zip(&h.entries) {
                for (z, c) in o.coeffs.iter_mut().zip(&e.coeffs) {
                    *z += c * ph;
                }
            }
        }
        out
    }

    /// `coeffs(-m) = conj coeffs(m)` within `tol` times the largest entry.
    pub fn is_real(&self, tol: f64) -> bool {
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        self.orders().all(|m| {
            let (x, y) = (self.get(m).unwrap(), self.get(-m).unwrap());
            x.entries.iter().zip(&y.entries).all(|(a, b)| {
                a.coeffs.iter().zip(&b.coeffs).all(|(p, q)| (p - q.conj()).norm() <= tol * scale)
            })
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.harmonics
            .iter()
            .flat_map(|h| h.entries.iter().flat_map(|e| e.coeffs.iter()))
            .fold(0.0, |acc, z| acc.max(z.norm()))
    }

    /// Largest `|m|` carrying a nonzero coefficient.
    pub fn support(&self) -> Option<usize> {
        self.orders()
            .filter(|&m| {
                self.get(m)
                    .unwrap()
                    .entries
                    .iter()
                    .any(|e| e.coeffs.iter().any(|z| *z != ZERO))
            })
            .map(|m| m.unsigned_abs() as usize)
            .max()
    }

    /// `x a + y b` entrywise.
    pub fn combine(&self, x: C64, other: &Self, y: C64) -> Self {
        let mut out = self.clone();
        for (h, g) in out.harmonics.iter_mut().zip(&other.harmonics) {
            for (e, f) in h.entries.iter_mut().zip(&g.entries) {
                for (z, w) in e.coeffs.iter_mut().zip(&f.coeffs) {
                    *z = x * *z + y * w;
                }
            }
        }
        out
    }

    /// `du/dt`, harmonic `m` multiplied by `i m a`.
    pub fn time_derivative(&self) -> Self {
        let mut out = self.clone();
        let orders: Vec<i32> = self.orders().collect();
        for (h, m) in out.harmonics.iter_mut().zip(orders) {
            let s = I * (m as f64 * self.a);
            for e in &mut h.entries {
                e.coeffs.iter_mut().for_each(|z| *z *= s);
            }
        }
        out
    }

    pub fn to_json_layout(&self) -> PeriodicFieldJson {
        let modes: Vec<[u32; 2]> = self.harmonics[0].entries.iter().map(|e| [e.mode.j, e.mode.k]).collect();
        let coeffs = self
            .harmonics
            .iter()
            .flat_map(|h| h.entries.iter().flat_map(|e| e.coeffs.iter()))
            .map(|z| [z.re, z.im])
            .collect();
        PeriodicFieldJson {
            a: self.a,
            eps: self.eps,
            m_max: self.m_max(),
            modes,
            coeffs,
        }
    }

    pub fn from_json_layout(j: &PeriodicFieldJson) -> Result<Self> {
        let modes: Vec<Mode> = j.modes.iter().map(|m| Mode::new(m[0], m[1])).collect();
        let per: usize = modes.iter().map(|m| m.components().len()).sum();
        if j.coeffs.len() != per * (2 * j.m_max + 1) {
            return Err(Error::InvalidParameter {
                name: "coeffs",
                reason: format!("expected {} pairs, found {}", per * (2 * j.m_max + 1), j.coeffs.len()),
            });
        }
        let mut it = j.coeffs.iter().map(|c| C64::new(c[0], c[1]));
        let harmonics = (0..2 * j.m_max + 1)
            .map(|_| Field {
                entries: modes
                    .iter()
                    .map(|&mode| ModeVector {
                        mode,
                        coeffs: it.by_ref().take(mode.components().len()).collect(),
                    })
                    .collect(),
            })
            .collect();
        Ok(Self {
            a: j.a,
            eps: j.eps,
            harmonics,
        })
    }
}

/// Serialized layout: `coeffs` is row-major over (harmonic m = -M..M, mode
/// in `modes` order, component in the mode's component order), each entry
/// a `[re, im]` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicFieldJson {
    pub a: f64,
    pub eps: f64,
    #[serde(rename = "M")]
    pub m_max: usize,
    pub modes: Vec<[u32; 2]>,
    pub coeffs: Vec<[f64; 2]>,
}

/// `<u, v>_eps`, the time average of `(u(t), v(t))_eps`.
pub fn inner_avg(p: &Params, u: &PeriodicField, v: &PeriodicField) -> C64 {
    u.harmonics
        .iter()
        .zip(&v.harmonics)
        .map(|(x, y)| crate::model::inner(p, u.eps, x, y))
        .sum()
}

pub fn norm_avg(p: &Params, u: &PeriodicField) -> f64 {
    inner_avg(p, u, u).re.max(0.0).sqrt()
}

/// `|||F|||_{eps,X_a}`: the time integral over one period of
/// `eps^2 |f|^2 + |F|^2_{(X1)*} + eps^6 |grad f|^2 + eps^2 |F|^2`.
pub fn x_norm(p: &Params, f: &PeriodicField) -> f64 {
    let e2 = f.eps * f.eps;
    let mut acc = 0.0;
    for h in &f.harmonics {
        for e in &h.entries {
            let nu = e.mode.basis_norm(p.alpha);
            let mu = e.mode.mu(p.alpha);
            let mn = mode_norms(p, f.eps, e);
            acc += mn.fluid_dual2;
            for (&c, z) in e.mode.components().iter().zip(&e.coeffs) {
                let s = nu * z.norm_sqr();
                if c == Component::Phi {
                    acc += e2 * s + e2 * e2 * e2 * mu * s;
                } else {
                    acc += e2 * s;
                }
            }
        }
    }
    (2.0 * PI / f.a * acc).sqrt()
}

/// `|||u|||_{eps,Y_a}`. The supremum over time is taken on `samples`
/// equally spaced times; the integral is exact by Parseval.
pub fn y_norm(p: &Params, u: &PeriodicField, samples: usize) -> f64 {
    let eps = u.eps;
    let e2 = eps * eps;
    let mut sup: f64 = 0.0;
    let period = 2.0 * PI / u.a;
    for s in 0..samples.max(1) {
        let t = period * s as f64 / samples.max(1) as f64;
        let v = u.at(t);
        sup = sup.max(crate::spectral_survey::x1_norm(p, eps, &v).powi(2));
    }
    let mut acc = 0.0;
    for (h, m) in u.harmonics.iter().zip(u.orders()) {
        let dt2 = (m as f64 * u.a).powi(2);
        for e in &h.entries {
            let nu = e.mode.basis_norm(p.alpha);
            let mu = e.mode.mu(p.alpha);
            let mn = mode_norms(p, eps, e);
            acc += mn.grad2 + e2 * dt2 * mn.eps2;
            for (&c, z) in e.mode.components().iter().zip(&e.coeffs) {
                let s = nu * z.norm_sqr();
                if c.is_fluid() {
                    acc += e2 * mu * mu * s;
                } else {
                    acc += e2 * e2 * e2 * mu * dt2 * s;
                }
            }
        }
    }
    (sup + period * acc).sqrt()
}

/// `z_+ = e^{i a t} u_+`.
pub fn z_plus(hd: &HopfData, m_max: usize) -> PeriodicField {
    kernel_field(hd, m_max, 1, &hd.crit.u_plus)
}

/// `z_- = e^{-i a t} u_-`.
pub fn z_minus(hd: &HopfData, m_max: usize) -> PeriodicField {
    kernel_field(hd, m_max, -1, &hd.crit.u_minus())
}

fn kernel_field(hd: &HopfData, m_max: usize, m: i32, v: &CVec) -> PeriodicField {
    let mut z = PeriodicField::zeros(hd.a, hd.eps(), m_max, &hd.trunc);
    let e = z.get_mut(m).unwrap().mode_mut(hd.crit.mode).unwrap();
    e.coeffs = v.iter().cloned().collect();
    z
}

/// `[u]_+ = <u, z_+*>` and `[u]_- = <u, z_-*>`. Only harmonics `+1` and
/// `-1` of the critical mode contribute.
pub fn brackets(u: &PeriodicField, hd: &HopfData) -> Result<[C64; 2]> {
    hd.check(u)?;
    let pick = |m: i32| CVec::from_vec(u.get(m).unwrap().mode(hd.crit.mode).unwrap().coeffs.clone());
    let w = hd.crit.weights(&hd.params);
    Ok([
        weighted_dot(pick(1).as_slice(), hd.crit.u_plus_adj.as_slice(), &w),
        weighted_dot(pick(-1).as_slice(), hd.crit.u_minus_adj().as_slice(), &w),
    ])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionReport {
    pub bracket_plus: C64,
    pub bracket_minus: C64,
    pub p_part: PeriodicField,
    pub q_part: PeriodicField,
}

pub fn projections(u: &PeriodicField, hd: &HopfData) -> Result<ProjectionReport> {
    let [bp, bm] = brackets(u, hd)?;
    let m = u.m_max();
    let p_part = z_plus(hd, m).combine(bp, &z_minus(hd, m), bm);
    let q_part = u.combine(ONE, &p_part, -ONE);
    Ok(ProjectionReport {
        bracket_plus: bp,
        bracket_minus: bm,
        p_part,
        q_part,
    })
}

fn mode_index(hd: &HopfData, mode: Mode) -> usize {
    hd.trunc.modes().iter().position(|&m| m == mode).unwrap()
}

fn column(f: &PeriodicField, m: i32, idx: usize) -> CVec {
    CVec::from_vec(f.get(m).unwrap().entries[idx].coeffs.clone())
}

/// Apply a per-(harmonic, mode) map and reassemble the field.
fn map_blocks<F>(hd: &HopfData, f: &PeriodicField, op: F) -> Result<PeriodicField>
where
    F: Fn(i32, &ModeMatrix, CVec) -> Result<CVec> + Sync + Send,
{
    let modes = hd.trunc.modes();
    let idx: Vec<usize> = (0..modes.len()).collect();
    let orders: Vec<i32> = f.orders().collect();
    let cols = par::try_map(&idx, |&i| -> Result<Vec<CVec>> {
        let block = hd.block(modes[i])?;
        orders.iter().map(|&m| op(m, &block, column(f, m, i))).collect()
    })?;
    let mut out = f.clone();
    for (i, col) in cols.into_iter().enumerate() {
        for (k, v) in col.into_iter().enumerate() {
            out.harmonics[k].entries[i].coeffs = v.iter().cloned().collect();
        }
    }
    Ok(out)
}

/// The shifted block `(lambda + i m a^eps (1 + omega)) - M`.
fn shifted(block: &ModeMatrix, shift: C64) -> CMat {
    let n = block.dim();
    CMat::identity(n, n) * shift - &block.m
}

fn harmonic_shift(hd: &HopfData, m: i32, lambda: C64, omega: f64) -> C64 {
    lambda + I * (m as f64 * hd.a_eps() * (1.0 + omega))
}

/// `(lambda + B(omega)) u` with `B(omega) = beta (1 + omega) d/dt - M`.
pub fn apply_b(u: &PeriodicField, hd: &HopfData, lambda: C64, omega: f64) -> Result<PeriodicField> {
    hd.check(u)?;
    map_blocks(hd, u, |m, block, v| Ok(shifted(block, harmonic_shift(hd, m, lambda, omega)) * v))
}

fn singular_values(a: &CMat) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    a.clone().svd(false, false).singular_values.iter().cloned().collect()
}

/// Smallest singular value in the block's weighted norm.
fn weighted_min_sv(a: &CMat, w: &[f64]) -> f64 {
    let s = CMat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * (w[i] / w[j]).sqrt());
    singular_values(&s).into_iter().fold(f64::INFINITY, f64::min)
}

/// Solve a regular block, reporting the offending (m, mode) when singular.
fn regular_solve(a: &CMat, b: CVec, m: i32, mode: Mode) -> Result<CVec> {
    let sv = singular_values(a);
    let top = sv.iter().cloned().fold(0.0, f64::max);
    let low = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(low > SINGULAR_TOL * top.max(1.0)) {
        return Err(Error::Rejected(format!(
            "singular block at harmonic {m}, mode ({}, {}): smallest singular value {low:e}",
            mode.j, mode.k
        )));
    }
    solve(a, &b)
}

/// Solve `a x + s u = b`, `(x, v)_w = 0`: the inverse of `a` on the
/// complement of its kernel `u`, with the kernel coefficient fixed to 0.
fn bordered_solve(a: &CMat, u: &CVec, v: &CVec, w: &[f64], b: &CVec) -> Result<CVec> {
    let n = a.nrows();
    let mut big = CMat::zeros(n + 1, n + 1);
    big.view_mut((0, 0), (n, n)).copy_from(a);
    for i in 0..n {
        big[(i, n)] = u[i];
        big[(n, i)] = (v[i] * w[i]).conj();
    }
    let mut rhs = CVec::zeros(n + 1);
    rhs.rows_mut(0, n).copy_from(b);
    let x = solve(&big, &rhs)?;
    Ok(x.rows(0, n).into_owned())
}

fn check_solvable(f: &PeriodicField, hd: &HopfData) -> Result<()> {
    let [bp, bm] = brackets(f, hd)?;
    let worst = bp.norm().max(bm.norm());
    if worst > SOLVABILITY_TOL {
        return Err(Error::Unsolvable(worst));
    }
    Ok(())
}

/// Harmonic-diagonal solve of `(lambda + B(omega)) u = f`, deflating the
/// kernel blocks when `deflate` is set.
fn diagonal_solve(hd: &HopfData, f: &PeriodicField, lambda: C64, omega: f64, deflate: bool) -> Result<PeriodicField> {
    let crit = &hd.crit;
    let w = crit.weights(&hd.params);
    map_blocks(hd, f, |m, block, v| {
        let a = shifted(block, harmonic_shift(hd, m, lambda, omega));
        if deflate && block.mode == crit.mode && (m == 1 || m == -1) {
            let (u, ua) = if m == 1 {
                (crit.u_plus.clone(), crit.u_plus_adj.clone())
            } else {
                (crit.u_minus(), crit.u_minus_adj())
            };
            bordered_solve(&a, &u, &ua, &w, &v)
        } else {
            regular_solve(&a, v, m, block.mode)
        }
    })
}

fn relative_residual(hd: &HopfData, u: &PeriodicField, f: &PeriodicField, lambda: C64, omega: f64) -> Result<f64> {
    let bu = apply_b(u, hd, lambda, omega)?;
    let r = norm_avg(&hd.params, &bu.combine(ONE, f, -ONE));
    let s = norm_avg(&hd.params, f);
    Ok(if s == 0.0 { r } else { r / s })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicSolve {
    pub u: PeriodicField,
    /// `<B u - F>` over `<F>` in the averaged eps norm.
    pub residual: f64,
    /// Largest relative difference between the diagonal solution and the
    /// Duhamel/monodromy representation at the sample times.
    pub discrepancy: f64,
}

/// Number of sample times used in the representation cross-check.
pub const REPRESENTATION_SAMPLES: usize = 8;

/// Solve `B u = F` in `Q Y_a` for `F` with vanishing brackets.
pub fn solve_beps(f: &PeriodicField, hd: &HopfData) -> Result<PeriodicSolve> {
    hd.check(f)?;
    check_solvable(f, hd)?;
    let u = diagonal_solve(hd, f, ZERO, 0.0, true)?;
    let residual = relative_residual(hd, &u, f, ZERO, 0.0)?;
    let discrepancy = representation_discrepancy(hd, f, &u, ZERO)?;
    Ok(PeriodicSolve { u, residual, discrepancy })
}

/// `[(I - c V) Q + P]^{-1}` applied to `Q g`, plus `P g / (1 - c)` when
/// `1 - c` is not zero; `cv` is `c V` on the critical mode.
fn fixed_point_critical(hd: &HopfData, cv: &CMat, c: C64, g: &CVec) -> Result<CVec> {
    let n = cv.nrows();
    let pm = hd.projector();
    let id = CMat::identity(n, n);
    let pg = &pm * g;
    let qg = g - &pg;
    let a = (&id - cv) * (&id - &pm) + &pm;
    let xq = solve(&a, &qg)?;
    let denom = ONE - c;
    if denom.norm() < POLE_TOL {
        let scale = g.norm().max(1.0);
        if pg.norm() > 1e-9 * scale {
            return Err(Error::Unsolvable(pg.norm()));
        }
        Ok(xq)
    } else {
        Ok(xq + pg / denom)
    }
}

/// Monodromy `exp(T (M - lambda) / beta)` of one mode as a matrix.
fn monodromy(flow: &ModeFlow, t: f64) -> CMat {
    let n = flow.dim();
    let mut v = CMat::zeros(n, n);
    for j in 0..n {
        let mut e = CVec::zeros(n);
        e[j] = ONE;
        v.set_column(j, &flow.propagate(&e, t));
    }
    v
}

fn shifted_flow(block: &ModeMatrix, lambda: C64, beta: f64) -> Result<ModeFlow> {
    let mut b = block.clone();
    let n = b.dim();
    b.m -= CMat::identity(n, n) * lambda;
    ModeFlow::new(&b, beta)
}

/// Evaluate the representation
/// `u(t) = e^{-lambda t/beta} V(t) u(0) + beta^{-1} int_0^t e^{-lambda (t-s)/beta} V(t-s) F(s) ds`
/// with `u(0)` from the fixed-point equation over one period, at the
/// given times. At `lambda = 0` the correction `beta^{-1} P(s F(s))` is
/// added so that the result lies in `Q Y_a`.
pub fn representation(hd: &HopfData, f: &PeriodicField, lambda: C64, times: &[f64]) -> Result<Vec<Field>> {
    hd.check(f)?;
    let modes = hd.trunc.modes();
    let idx: Vec<usize> = (0..modes.len()).collect();
    let beta = hd.beta();
    let period = hd.period();
    let c = (-2.0 * PI * lambda / hd.a_eps()).exp();
    let on_pole = (ONE - c).norm() < POLE_TOL;
    let per_mode = par::try_map(&idx, |&i| -> Result<Vec<CVec>> {
        let block = hd.block(modes[i])?;
        let flow = shifted_flow(&block, lambda, beta)?;
        let forcing: Vec<(i32, CVec)> = f
            .orders()
            .map(|m| (m, column(f, m, i)))
            .filter(|(_, v)| v.iter().any(|z| *z != ZERO))
            .collect();
        let zero = CVec::zeros(block.dim());
        let g = flow.evolve(&zero, &forcing, hd.a, period).0;
        let v = monodromy(&flow, period);
        let x0 = if block.mode == hd.crit.mode {
            fixed_point_critical(hd, &v, c, &g)?
        } else {
            let n = block.dim();
            regular_solve(&(CMat::identity(n, n) - &v), g, 0, block.mode)?
        };
        Ok(times.iter().map(|&t| flow.evolve(&x0, &forcing, hd.a, t).0).collect())
    })?;
    let crit_idx = mode_index(hd, hd.crit.mode);
    let correction = if on_pole { Some(secular_brackets(hd, f)) } else { None };
    Ok(times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let mut out = f.harmonics[0].clone();
            for (i, e) in out.entries.iter_mut().enumerate() {
                let mut v = per_mode[i][k].clone();
                if i == crit_idx {
                    if let Some([sp, sm]) = correction {
                        let ph = (I * (hd.a * t)).exp();
                        v += (&hd.crit.u_plus * (sp * ph) + hd.crit.u_minus() * (sm * ph.conj())) * C64::new(1.0 / beta, 0.0);
                    }
                }
                e.coeffs = v.iter().cloned().collect();
            }
            out
        })
        .collect())
}

/// `[s F(s)]_+-` in closed form: harmonic `m` contributes
/// `(F_m, u_+-*) / (i (m -+ 1) a)`, or `pi / a` times it on resonance.
fn secular_brackets(hd: &HopfData, f: &PeriodicField) -> [C64; 2] {
    let w = hd.crit.weights(&hd.params);
    let idx = mode_index(hd, hd.crit.mode);
    let mut out = [ZERO; 2];
    for (k, (adj, shift)) in [(hd.crit.u_plus_adj.clone(), 1), (hd.crit.u_minus_adj(), -1)].into_iter().enumerate() {
        for m in f.orders() {
            let b = weighted_dot(column(f, m, idx).as_slice(), adj.as_slice(), &w);
            let d = m - shift;
            out[k] += if d == 0 {
                b * (PI / hd.a)
            } else {
                b / (I * (d as f64 * hd.a))
            };
        }
    }
    out
}

fn representation_discrepancy(hd: &HopfData, f: &PeriodicField, u: &PeriodicField, lambda: C64) -> Result<f64> {
    let times: Vec<f64> = (0..REPRESENTATION_SAMPLES)
        .map(|k| hd.period() * k as f64 / REPRESENTATION_SAMPLES as f64)
        .collect();
    let rep = representation(hd, f, lambda, &times)?;
    let (mut diff, mut scale) = (0.0f64, 0.0f64);
    for (r, &t) in rep.iter().zip(&times) {
        let d = u.at(t);
        let mut e = d.clone();
        for (x, y) in e.entries.iter_mut().zip(&r.entries) {
            for (p, q) in x.coeffs.iter_mut().zip(&y.coeffs) {
                *p -= q;
            }
        }
        diff = diff.max(crate::model::norms(&hd.params, hd.eps(), &e).n_eps);
        scale = scale.max(crate::model::norms(&hd.params, hd.eps(), &d).n_eps);
    }
    Ok(if scale == 0.0 { diff } else { diff / scale })
}

fn nearest_pole(hd: &HopfData, lambda: C64) -> (i64, f64) {
    let k = (lambda.im / hd.a_eps()).round() as i64;
    (k, (lambda - I * (k as f64 * hd.a_eps())).norm())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolventSolve {
    pub u: PeriodicField,
    pub residual: f64,
    pub discrepancy: f64,
    /// `(|[g]_+| + |[g]_-|) / |1 - e^{-2 pi lambda / a^eps}|` with
    /// `g(s) = e^{-lambda (T - s) / beta} F(s)`.
    pub pole_part: f64,
    /// `|||F|||_{eps,X_a}`.
    pub regular_part: f64,
    /// `|||u|||_{eps,Y_a}`.
    pub y_norm: f64,
}

/// Samples used for the supremum in `|||.|||_{eps,Y_a}`.
pub const SUP_SAMPLES: usize = 128;

/// `(lambda + B)^{-1} F` by harmonic-diagonal inversion.
pub fn resolvent_beps(lambda: C64, f: &PeriodicField, hd: &HopfData) -> Result<ResolventSolve> {
    hd.check(f)?;
    let (k, dist) = nearest_pole(hd, lambda);
    if dist < POLE_TOL {
        return Err(Error::Rejected(format!("lambda is the pole {k} i a^eps")));
    }
    let u = diagonal_solve(hd, f, lambda, 0.0, false)?;
    let residual = relative_residual(hd, &u, f, lambda, 0.0)?;
    let discrepancy = representation_discrepancy(hd, f, &u, lambda)?;
    let beta = hd.beta();
    let period = hd.period();
    let w = hd.crit.weights(&hd.params);
    let idx = mode_index(hd, hd.crit.mode);
    let z0 = lambda * period / beta;
    let mut pole = 0.0;
    for (adj, shift) in [(hd.crit.u_plus_adj.clone(), 1), (hd.crit.u_minus_adj(), -1)] {
        let mut b = ZERO;
        for m in f.orders() {
            let fm = weighted_dot(column(f, m, idx).as_slice(), adj.as_slice(), &w);
            let z = z0 + I * ((m - shift) as f64 * hd.a * period);
            b += fm * (-z0).exp() * phi1(z);
        }
        pole += b.norm();
    }
    let denom = (ONE - (-2.0 * PI * lambda / hd.a_eps()).exp()).norm();
    Ok(ResolventSolve {
        y_norm: y_norm(&hd.params, &u, SUP_SAMPLES),
        u,
        residual,
        discrepancy,
        pole_part: pole / denom,
        regular_part: x_norm(&hd.params, f),
    })
}

/// Operator norm of `(lambda + B)^{-1}` on harmonics `-M..M` in the
/// averaged eps norm: the largest weighted block inverse norm.
pub fn resolvent_norm(hd: &HopfData, lambda: C64, m_max: usize) -> Result<f64> {
    let (k, dist) = nearest_pole(hd, lambda);
    if dist < POLE_TOL {
        return Err(Error::Rejected(format!("lambda is the pole {k} i a^eps")));
    }
    let modes = hd.trunc.modes();
    let m = m_max as i32;
    let norms = par::try_map(&modes, |&mode| -> Result<f64> {
        let block = hd.block(mode)?;
        let mut top: f64 = 0.0;
        for h in -m..=m {
            let a = shifted(&block, harmonic_shift(hd, h, lambda, 0.0));
            top = top.max(1.0 / weighted_min_sv(&a, &block.weights));
        }
        Ok(top)
    })?;
    Ok(norms.into_iter().fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmegaSolve {
    pub u: PeriodicField,
    /// The frequency actually used; differs from the request by 1e-9 when
    /// an accidental resonance was met.
    pub omega: f64,
    pub perturbed: bool,
    pub residual: f64,
}

/// Solve `B(omega) u = F` in `Q Y_a`, `B(omega) = beta (1 + omega) d/dt - M`.
pub fn solve_beps_omega(f: &PeriodicField, omega: f64, hd: &HopfData) -> Result<OmegaSolve> {
    hd.check(f)?;
    if !(omega.abs() <= 0.25) {
        return Err(Error::InvalidParameter {
            name: "omega",
            reason: format!("|omega| must not exceed 1/4, got {omega}"),
        });
    }
    check_solvable(f, hd)?;
    let deflate = omega == 0.0;
    let (u, used, perturbed) = match diagonal_solve(hd, f, ZERO, omega, deflate) {
        Ok(u) => (u, omega, false),
        Err(Error::Rejected(_)) if !deflate => {
            let w = omega + 1e-9;
            (diagonal_solve(hd, f, ZERO, w, false)?, w, true)
        }
        Err(e) => return Err(e),
    };
    let residual = relative_residual(hd, &u, f, ZERO, used)?;
    Ok(OmegaSolve {
        u,
        omega: used,
        perturbed,
        residual,
    })
}

/// Weighted smallest singular values of the `(+1, critical)` and
/// `(-1, critical)` blocks of `B(omega)`.
pub fn kernel_singular_values(hd: &HopfData, omega: f64) -> Result<[f64; 2]> {
    let block = hd.block(hd.crit.mode)?;
    let w = hd.crit.weights(&hd.params);
    let sv = |m: i32| weighted_min_sv(&shifted(&block, harmonic_shift(hd, m, ZERO, omega)), &w);
    Ok([sv(1), sv(-1)])
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub u: Field,
    /// Ratio of successive Neumann terms `|(c V Q)^k Q F|`, taken at the
    /// last term above roundoff.
    pub neumann_ratio: Option<f64>,
    /// `e^{-2 pi (Re lambda + kappa1) / a^eps}`.
    pub predicted_ratio: Option<f64>,
    /// Difference between the Neumann partial sum and the direct solve,
    /// relative to the solution.
    pub neumann_error: Option<f64>,
}

/// Solve `(I - e^{-2 pi lambda / a^eps} V(2 pi / a)) u = F`. The
/// critical-pair part is divided by `1 - e^{-2 pi lambda / a^eps}`, the
/// rest is a per-mode linear solve. `kappa1` is the spectral gap of `M`;
/// when given and `Re lambda > -kappa1`, the Neumann series is summed
/// as a check.
pub fn fixed_point_solve(lambda: C64, f: &Field, hd: &HopfData, kappa1: Option<f64>) -> Result<FixedPoint> {
    let modes = hd.trunc.modes();
    if f.entries.len() != modes.len() || f.entries.iter().zip(&modes).any(|(e, m)| e.mode != *m) {
        return Err(Error::InvalidParameter {
            name: "field",
            reason: "modes differ from the truncation of the critical data".into(),
        });
    }
    let beta = hd.beta();
    let period = hd.period();
    let c = (-2.0 * PI * lambda / hd.a_eps()).exp();
    let pm = hd.projector();
    struct Out {
        x: CVec,
        cv: CMat,
    }
    let idx: Vec<usize> = (0..modes.len()).collect();
    let outs = par::try_map(&idx, |&i| -> Result<Out> {
        let block = hd.block(modes[i])?;
        let cv = monodromy(&shifted_flow(&block, lambda, beta)?, period);
        let g = CVec::from_vec(f.entries[i].coeffs.clone());
        let x = if block.mode == hd.crit.mode {
            fixed_point_critical(hd, &cv, c, &g)?
        } else {
            let n = block.dim();
            regular_solve(&(CMat::identity(n, n) - &cv), g, 0, block.mode)?
        };
        Ok(Out { x, cv })
    })?;
    let mut u = f.clone();
    for (e, o) in u.entries.iter_mut().zip(&outs) {
        e.coeffs = o.x.iter().cloned().collect();
    }
    let (mut neumann_ratio, mut predicted_ratio, mut neumann_error) = (None, None, None);
    if let Some(k1) = kappa1 {
        predicted_ratio = Some((-2.0 * PI * (lambda.re + k1) / hd.a_eps()).exp());
        if lambda.re > -k1 {
            let crit_idx = mode_index(hd, hd.crit.mode);
            let n = pm.nrows();
            let q = CMat::identity(n, n) - &pm;
            let mut term: Vec<CVec> = f.entries.iter().map(|e| CVec::from_vec(e.coeffs.clone())).collect();
            term[crit_idx] = &q * &term[crit_idx];
            let mut sum = term.clone();
            let size = |t: &[CVec]| -> f64 {
                let mut fld = f.clone();
                for (e, v) in fld.entries.iter_mut().zip(t) {
                    e.coeffs = v.iter().cloned().collect();
                }
                crate::spectral_survey::x1_norm(&hd.params, hd.eps(), &fld)
            };
            let t0 = size(&term);
            let mut prev = t0;
            for _ in 0..200 {
                for (i, t) in term.iter_mut().enumerate() {
                    *t = &outs[i].cv * &*t;
                    if i == crit_idx {
                        *t = &q * &*t;
                    }
                }
                for (s, t) in sum.iter_mut().zip(&term) {
                    *s += t;
                }
                let now = size(&term);
                if now <= 1e-11 * t0 || now == 0.0 {
                    break;
                }
                neumann_ratio = Some(now / prev);
                prev = now;
            }
            // The P part of the solution is outside the Neumann sum.
            let mut diff = u.clone();
            for (i, (e, s)) in diff.entries.iter_mut().zip(&sum).enumerate() {
                let mut v = CVec::from_vec(e.coeffs.clone());
                if i == crit_idx {
                    v = &q * v;
                }
                e.coeffs = (v - s).iter().cloned().collect();
            }
            let scale = crate::spectral_survey::x1_norm(&hd.params, hd.eps(), &u);
            neumann_error = Some(crate::spectral_survey::x1_norm(&hd.params, hd.eps(), &diff) / scale.max(f64::MIN_POSITIVE));
        }
    }
    Ok(FixedPoint {
        u,
        neumann_ratio,
        predicted_ratio,
        neumann_error,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonodromyProbe {
    /// `max_modes |(mu - V_omega(2 pi / a))^{-1}|` in the weighted norm.
    pub norm: f64,
    /// `1 / r + 1 / |mu|`.
    pub reference: f64,
    pub ratio: f64,
    pub worst_mode: Mode,
}

/// Per-mode inverse norms of `mu - V_omega(2 pi / a)`, where `V_omega` is
/// the semigroup of `beta (1 + omega) du/dt = M u`. `kappa1` is the gap of
/// `M`; `r` is the exclusion radius around the critical multipliers.
pub fn monodromy_resolvent_probe(mu: C64, omega: f64, r: f64, hd: &HopfData, kappa1: f64) -> Result<MonodromyProbe> {
    if !(omega.abs() <= 0.25) {
        return Err(Error::InvalidParameter {
            name: "omega",
            reason: format!("|omega| must not exceed 1/4, got {omega}"),
        });
    }
    if !(r > 0.0) {
        return Err(Error::InvalidParameter {
            name: "r",
            reason: "must be positive".into(),
        });
    }
    if (mu - ONE).norm() < r {
        return Err(Error::Rejected(format!("|mu - 1| = {:e} < r", (mu - ONE).norm())));
    }
    for s in [1.0, -1.0] {
        let e = (I * (s * 2.0 * PI / (1.0 + omega))).exp();
        if (mu - e).norm() < r {
            return Err(Error::Rejected(format!("mu is within r of the critical multiplier {e}")));
        }
    }
    let beta = hd.beta() * (1.0 + omega);
    let floor = (-0.75 * kappa1 / beta * hd.period()).exp();
    if mu.norm() < floor {
        return Err(Error::Rejected(format!("|mu| = {} is below {floor:e}", mu.norm())));
    }
    let modes = hd.trunc.modes();
    let period = hd.period();
    let norms = par::try_map(&modes, |&mode| -> Result<(f64, Mode)> {
        let block = hd.block(mode)?;
        let v = monodromy(&ModeFlow::new(&block, beta)?, period);
        let n = block.dim();
        let a = CMat::identity(n, n) * mu - v;
        let low = weighted_min_sv(&a, &block.weights);
        if !(low > SINGULAR_TOL) {
            return Err(Error::Rejected(format!(
                "mu is a monodromy eigenvalue of mode ({}, {})",
                mode.j, mode.k
            )));
        }
        Ok((1.0 / low, mode))
    })?;
    let (norm, worst_mode) = norms
        .into_iter()
        .fold((0.0, Mode::new(0, 1)), |acc, x| if x.0 > acc.0 { x } else { acc });
    let reference = 1.0 / r + 1.0 / mu.norm();
    Ok(MonodromyProbe {
        norm,
        reference,
        ratio: norm / reference,
        worst_mode,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncKernel {
    /// Dimension of the kernel of `d/dt - M_inc` on harmonics `-M..M`.
    pub kernel_dim: usize,
    /// (harmonic, j, k) of each rank-deficient block.
    pub singular_blocks: Vec<(i32, u32, u32)>,
    /// Smallest singular value of the bordered kernel blocks; positive
    /// exactly when the kernel meets the range trivially.
    pub bordered_min_sv: f64,
}

/// Rank structure of the incompressible periodic operator at its onset.
pub fn inc_kernel(inc: &IncCritical, trunc: &Truncation, m_max: usize) -> Result<IncKernel> {
    let p = &inc.params;
    let modes = trunc.modes();
    let m = m_max as i32;
    let per_mode = par::try_map(&modes, |&mode| -> Result<Vec<(i32, usize, f64)>> {
        let block = assemble_mode(p, mode, Operator::Inc, inc.r1c)?;
        let mut out = Vec::new();
        for h in -m..=m {
            let a = shifted(&block, I * (h as f64 * inc.a));
            let sv = singular_values(&a);
            let top = sv.iter().cloned().fold(0.0, f64::max).max(1.0);
            let deficit = sv.iter().filter(|&&s| s <= 1e-10 * top).count();
            if deficit > 0 {
                let mut bmin = f64::INFINITY;
                if mode == inc.mode && (h == 1 || h == -1) {
                    let (u, v) = if h == 1 {
                        (inc.u_plus.clone(), inc.u_plus_adj.clone())
                    } else {
                        (inc.u_plus.map(|z| z.conj()), inc.u_plus_adj.map(|z| z.conj()))
                    };
                    let n = a.nrows();
                    let mut big = CMat::zeros(n + 1, n + 1);
                    big.view_mut((0, 0), (n, n)).copy_from(&a);
                    for i in 0..n {
                        big[(i, n)] = u[i];
                        big[(n, i)] = (v[i] * block.weights[i]).conj();
                    }
                    bmin = singular_values(&big).into_iter().fold(f64::INFINITY, f64::min);
                }
                out.push((h, deficit, bmin));
            }
        }
        Ok(out)
    })?;
    let mut kernel_dim = 0;
    let mut singular_blocks = Vec::new();
    let mut bordered_min_sv = f64::INFINITY;
    for (mode, blocks) in modes.iter().zip(per_mode) {
        for (h, deficit, bmin) in blocks {
            kernel_dim += deficit;
            singular_blocks.push((h, mode.j, mode.k));
            bordered_min_sv = bordered_min_sv.min(bmin);
        }
    }
    Ok(IncKernel {
        kernel_dim,
        singular_blocks,
        bordered_min_sv,
    })
}

/// A field of `Q X_a` with seeded random coefficients on harmonics
/// `-support..support`, real in time, decaying like `1 / (1 + mu)` in
/// space.
pub fn random_q_field(hd: &HopfData, m_max: usize, support: usize, seed: u64) -> Result<PeriodicField> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut f = PeriodicField::zeros(hd.a, hd.eps(), m_max, &hd.trunc);
    let s = support.min(m_max) as i32;
    for m in 0..=s {
        let mut h = Field::zeros(&hd.trunc);
        for e in &mut h.entries {
            let scale = 1.0 / (1.0 + e.mode.mu(hd.params.alpha));
            for z in &mut e.coeffs {
                *z = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * scale;
                if m == 0 {
                    z.im = 0.0;
                }
            }
        }
        let conj = Field {
            entries: h
                .entries
                .iter()
                .map(|e| ModeVector {
                    mode: e.mode,
                    coeffs: e.coeffs.iter().map(|z| z.conj()).collect(),
                })
                .collect(),
        };
        *f.get_mut(m).unwrap() = h;
        if m > 0 {
            *f.get_mut(-m).unwrap() = conj;
        }
    }
    Ok(projections(&f, hd)?.q_part)
}
