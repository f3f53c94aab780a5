//! Linearized flow mode by mode: propagators, Duhamel solutions with
//! time-harmonic forcing, energy functionals and their estimates, and
//! decay on the complement of the critical pair.
//!
//! Time is scaled by `beta`: the solutions satisfy `beta u' = M u + F(t)`
//! with `M` the compressible generator at the given `eps` and `r1`.

use serde::{Deserialize, Serialize};

use crate::criticality::CriticalPoint;
use crate::error::{Error, Result};
use crate::linalg::{phi1, CMat, CVec, C64, I, ZERO};
use crate::model::{assemble_mode, Component, Field, Mode, ModeMatrix, ModeVector, Operator, Params};
use crate::par;
use crate::smalleig::eig_dense;

/// Eigendecomposition is used below this condition number.
const COND_LIMIT: f64 = 1e8;

/// `F(t) = sum_m F_m e^{i m omega t}`. Every harmonic lives on the same
/// truncation as the state it forces.
#[derive(Debug, Clone, PartialEq)]
pub struct Forcing {
    pub omega: f64,
    pub harmonics: Vec<(i32, Field)>,
}

impl Forcing {
    pub fn none() -> Self {
        Self {
            omega: 0.0,
            harmonics: Vec::new(),
        }
    }

    pub fn constant(f: Field) -> Self {
        Self {
            omega: 0.0,
            harmonics: vec![(0, f)],
        }
    }

    /// Same forcing seen from a clock started at `t0`.
    pub fn shifted(&self, t0: f64) -> Self {
        let harmonics = self
            .harmonics
            .iter()
            .map(|(m, f)| {
                let ph = (I * (*m as f64 * self.omega * t0)).exp();
                let mut g = f.clone();
                for e in &mut g.entries {
                    e.coeffs.iter_mut().for_each(|z| *z *= ph);
                }
                (*m, g)
            })
            .collect();
        Self {
            omega: self.omega,
            harmonics,
        }
    }

    /// Forcing harmonics restricted to entry `idx`.
    fn entry(&self, idx: usize) -> Vec<(i32, CVec)> {
        self.harmonics
            .iter()
            .map(|(m, f)| (*m, CVec::from_vec(f.entries[idx].coeffs.clone())))
            .collect()
    }

    /// Value at time `t` on a template truncation.
    pub fn at(&self, t: f64, template: &Field) -> Field {
        let mut out = template.clone();
        for (i, e) in out.entries.iter_mut().enumerate() {
            e.coeffs.iter_mut().for_each(|z| *z = ZERO);
            for (m, f) in &self.harmonics {
                let ph = (I * (*m as f64 * self.omega * t)).exp();
                for (z, g) in e.coeffs.iter_mut().zip(&f.entries[i].coeffs) {
                    *z += g * ph;
                }
            }
        }
        out
    }

    fn check(&self, template: &Field) -> Result<()> {
        for (_, f) in &self.harmonics {
            let same = f.entries.len() == template.entries.len()
                && f.entries.iter().zip(&template.entries).all(|(x, y)| x.mode == y.mode);
            if !same {
                return Err(Error::InvalidParameter {
                    name: "forcing",
                    reason: "truncation differs from the initial state".into(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Rep {
    Eigen {
        values: Vec<C64>,
        x: CMat,
        xinv: CMat,
    },
    Dense,
}

/// Propagator of one mode for `u' = N u + g(t)` with `N = M / beta`.
#[derive(Debug, Clone)]
pub struct ModeFlow {
    pub mode: Mode,
    pub beta: f64,
    n: CMat,
    rep: Rep,
    /// Largest eigenvalue condition number of the block.
    pub condition: f64,
}

impl ModeFlow {
    pub fn new(block: &ModeMatrix, beta: f64) -> Result<Self> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::InvalidParameter {
                name: "beta",
                reason: "must be positive".into(),
            });
        }
        let n = &block.m / C64::new(beta, 0.0);
        let sys = eig_dense(&n)?;
        let condition = sys.max_condition();
        let rep = if condition < COND_LIMIT && !sys.is_empty() {
            let dim = sys.len();
            let x = CMat::from_fn(dim, dim, |i, j| sys.right[j][i]);
            let xinv = CMat::from_fn(dim, dim, |i, j| sys.dual(i)[j].conj());
            Rep::Eigen {
                values: sys.values.clone(),
                x,
                xinv,
            }
        } else {
            Rep::Dense
        };
        Ok(Self {
            mode: block.mode,
            beta,
            n,
            rep,
            condition,
        })
    }

    pub fn dim(&self) -> usize {
        self.n.nrows()
    }

    pub fn uses_eigenbasis(&self) -> bool {
        matches!(self.rep, Rep::Eigen { .. })
    }

    /// `exp(t N) u0`.
    pub fn propagate(&self, u0: &CVec, t: f64) -> CVec {
        if t == 0.0 {
            return u0.clone();
        }
        self.evolve(u0, &[], 0.0, t).0
    }

    /// State and time derivative at `t` for `u' = N u + beta^{-1} sum_m
    /// F_m e^{i m omega t}`, together with a flag set when a harmonic sits
    /// on an eigenvalue and the secular term is active.
    pub fn evolve(&self, u0: &CVec, forcing: &[(i32, CVec)], omega: f64, t: f64) -> (CVec, CVec, bool) {
        let inv_beta = C64::new(1.0 / self.beta, 0.0);
        match &self.rep {
            Rep::Eigen { values, x, xinv } => {
                let c0 = xinv * u0;
                let mut c = CVec::from_fn(c0.len(), |i, _| c0[i] * (values[i] * t).exp());
                let mut resonant = false;
                let mut g_now = CVec::zeros(c0.len());
                for (m, f) in forcing {
                    let s = I * (*m as f64 * omega);
                    let g = (xinv * f) * inv_beta;
                    let es = (s * t).exp();
                    for i in 0..c.len() {
                        if g[i] == ZERO {
                            continue;
                        }
                        let z = values[i] - s;
                        if z.norm() <= 1e-10 * values[i].norm().max(1.0) {
                            resonant = true;
                        }
                        // int_0^t e^{(t-s') nu} e^{s s'} ds'
                        let h = es * phi1(z * t) * t;
                        c[i] += g[i] * h;
                    }
                    g_now += f * (inv_beta * es);
                }
                // The rate is taken from the equation at the computed state, so
                // it carries no eigenvector conditioning.
                let u = x * c;
                let du = &self.n * &u + g_now;
                (u, du, resonant)
            }
            Rep::Dense => {
                let mut u = (&self.n * C64::new(t, 0.0)).exp() * u0;
                let mut resonant = false;
                let dim = self.dim();
                let mut g_now = CVec::zeros(dim);
                for (m, f) in forcing {
                    let s = I * (*m as f64 * omega);
                    let mut aug = CMat::zeros(dim + 1, dim + 1);
                    aug.view_mut((0, 0), (dim, dim)).copy_from(&self.n);
                    for i in 0..dim {
                        aug[(i, dim)] = f[i] * inv_beta;
                    }
                    aug[(dim, dim)] = s;
                    let e = (aug * C64::new(t, 0.0)).exp();
                    for i in 0..dim {
                        u[i] += e[(i, dim)];
                    }
                    g_now += f * (inv_beta * (s * t).exp());
                    let sys = eig_dense(&self.n).ok();
                    if let Some(sys) = sys {
                        if sys.values.iter().any(|v| (v - s).norm() <= 1e-10 * v.norm().max(1.0)) {
                            resonant = true;
                        }
                    }
                }
                let du = &self.n * &u + g_now;
                (u, du, resonant)
            }
        }
    }

    /// `int_0^T e^{2 kappa s} |u(s)|_W^2 ds` for the free flow from `u0`,
    /// with `W = diag(w)`.
    pub fn weighted_integral(&self, u0: &CVec, w: &[f64], kappa: f64, t_end: f64) -> f64 {
        let wm = CMat::from_diagonal(&CVec::from_iterator(w.len(), w.iter().map(|&x| C64::new(x, 0.0))));
        match &self.rep {
            Rep::Eigen { values, x, xinv } => {
                let c = xinv * u0;
                let g = x.adjoint() * &wm * x;
                let mut acc = ZERO;
                for i in 0..c.len() {
                    for l in 0..c.len() {
                        let z = values[i].conj() + values[l] + 2.0 * kappa;
                        acc += c[i].conj() * c[l] * g[(i, l)] * phi1(z * t_end) * t_end;
                    }
                }
                acc.re
            }
            Rep::Dense => {
                // The Gramian G = int_0^T e^{A^H s} W e^{A s} ds solves
                // A^H G + G A = e^{A^H T} W e^{A T} - W.
                let dim = self.dim();
                let a = &self.n + CMat::identity(dim, dim) * C64::new(kappa, 0.0);
                let e = (&a * C64::new(t_end, 0.0)).exp();
                let rhs = e.adjoint() * &wm * &e - &wm;
                let ah = a.adjoint();
                let id = CMat::identity(dim, dim);
                let kron = id.kronecker(&ah) + a.transpose().kronecker(&id);
                let vec = CVec::from_iterator(dim * dim, rhs.iter().cloned());
                let Ok(g) = crate::linalg::solve(&kron, &vec) else {
                    return f64::NAN;
                };
                let gram = CMat::from_iterator(dim, dim, g.iter().cloned());
                (u0.adjoint() * gram * u0)[(0, 0)].re
            }
        }
    }
}

/// `exp(t M) u0` for an assembled block.
pub fn propagate_mode(block: &ModeMatrix, u0: &CVec, t: f64) -> Result<CVec> {
    if t < 0.0 {
        return Err(Error::InvalidParameter {
            name: "t",
            reason: "must be nonnegative".into(),
        });
    }
    Ok(ModeFlow::new(block, 1.0)?.propagate(u0, t))
}

/// `n` Chebyshev–Lobatto points on `[0, t_end]`, clustered at both ends.
pub fn chebyshev_times(t_end: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![0.0; n.min(1)];
    }
    (0..n)
        .map(|i| 0.5 * t_end * (1.0 - (std::f64::consts::PI * i as f64 / (n - 1) as f64).cos()))
        .collect()
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub eps: f64,
    pub r1: f64,
    pub beta: f64,
    pub times: Vec<f64>,
    pub states: Vec<Field>,
    /// Time derivatives, from the closed form rather than differencing.
    pub rates: Vec<Field>,
    pub forcing: Forcing,
    /// Modes on which a forcing harmonic is resonant.
    pub resonant: Vec<Mode>,
}

impl Trajectory {
    pub fn snapshot(&self, k: usize) -> Snapshot {
        Snapshot {
            t: self.times[k],
            u: self.states[k].clone(),
            du: self.rates[k].clone(),
            f: self.forcing.at(self.times[k], &self.states[k]),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// State, rate and forcing at one instant.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    pub u: Field,
    pub du: Field,
    pub f: Field,
}

pub fn flows(p: &Params, eps: f64, r1: f64, beta: f64, modes: &[Mode]) -> Result<Vec<ModeFlow>> {
    par::try_map(modes, |&m| {
        let b = assemble_mode(p, m, Operator::Ac { eps }, r1)?;
        ModeFlow::new(&b, beta)
    })
}

/// Exact solution of `beta u' = M u + F(t)`, `u(0) = u0`, sampled at `times`.
pub fn solve_ivp(
    p: &Params,
    eps: f64,
    r1: f64,
    beta: f64,
    u0: &Field,
    forcing: &Forcing,
    times: &[f64],
) -> Result<Trajectory> {
    forcing.check(u0)?;
    if times.iter().any(|&t| !(t >= 0.0 && t.is_finite())) {
        return Err(Error::InvalidParameter {
            name: "times",
            reason: "must be finite and nonnegative".into(),
        });
    }
    let modes: Vec<Mode> = u0.entries.iter().map(|e| e.mode).collect();
    let fl = flows(p, eps, r1, beta, &modes)?;
    let idx: Vec<usize> = (0..modes.len()).collect();
    let per_mode = par::map(&idx, |&i| {
        let u = CVec::from_vec(u0.entries[i].coeffs.clone());
        let h = forcing.entry(i);
        let mut res = false;
        let out: Vec<(CVec, CVec)> = times
            .iter()
            .map(|&t| {
                let (x, dx, r) = fl[i].evolve(&u, &h, forcing.omega, t);
                res |= r;
                (x, dx)
            })
            .collect();
        (out, res)
    });
    let mut states = Vec::with_capacity(times.len());
    let mut rates = Vec::with_capacity(times.len());
    for k in 0..times.len() {
        let build = |pick: &dyn Fn(&(CVec, CVec)) -> CVec| Field {
            entries: modes
                .iter()
                .zip(&per_mode)
                .map(|(&mode, (v, _))| ModeVector {
                    mode,
                    coeffs: pick(&v[k]).iter().cloned().collect(),
                })
                .collect(),
        };
        states.push(build(&|s| s.0.clone()));
        rates.push(build(&|s| s.1.clone()));
    }
    let resonant = modes
        .iter()
        .zip(&per_mode)
        .filter(|(_, (_, r))| *r)
        .map(|(&m, _)| m)
        .collect();
    Ok(Trajectory {
        eps,
        r1,
        beta,
        times: times.to_vec(),
        states,
        rates,
        forcing: forcing.clone(),
        resonant,
    })
}

/// `Q u`, after checking the critical data is biorthonormal.
pub fn project_q(p: &Params, crit: &CriticalPoint, u: &Field) -> Result<Field> {
    let w = crit.weights(p);
    let s = crate::linalg::weighted_dot(crit.u_plus.as_slice(), crit.u_plus_adj.as_slice(), &w);
    if (s - C64::new(1.0, 0.0)).norm() > 1e-10 {
        return Err(Error::Rejected(format!(
            "critical data not normalized: (u+, u+*) = {s}"
        )));
    }
    let mut out = u.clone();
    crit.project_field(p, &mut out);
    Ok(out)
}

/// Constants of the energy functional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyConfig {
    pub beta: f64,
    /// Weight of the tangential energy.
    pub c0: f64,
    /// Weight of the pressure-corrected dissipation, `beta / 16`.
    pub c1: f64,
    /// Weight of the normal pressure gradient.
    pub c2: f64,
    /// Weight of the elliptic estimate.
    pub c3: f64,
    /// Coefficient of the `eps^4 |d_t d_x phi|^2` terms.
    pub c_dt: f64,
    pub kappa: f64,
}

impl EnergyConfig {
    pub fn new(beta: f64, kappa: f64) -> Self {
        Self {
            beta,
            c0: 1e-2,
            c1: beta / 16.0,
            c2: 1e-2,
            c3: 1e-2,
            c_dt: 0.125,
            kappa,
        }
    }
}

/// Every quadratic quantity the functionals and estimates need, summed
/// over modes. Names ending in `_dt` are exact time derivatives.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct Pieces {
    pub n_eps: f64,
    pub n_eps_dt: f64,
    pub n_x1: f64,
    pub n_x1_dt: f64,
    pub n_grad: f64,
    pub d: f64,
    pub d_dt: f64,
    pub d_x1: f64,
    /// `Re (phi, div w)`.
    pub cpl: f64,
    pub cpl_dt: f64,
    pub phi: f64,
    pub phi_x1: f64,
    pub phi_x2: f64,
    pub phi_x2_dt: f64,
    pub phi_grad: f64,
    pub dphi_x1: f64,
    pub dphi_x2: f64,
    pub dphi_grad: f64,
    pub dphi_h1: f64,
    pub div_w: f64,
    pub fluid: f64,
    pub scalars: f64,
    pub fluid_hess: f64,
    pub n_eps_rate: f64,
    pub rate_w: f64,
    pub rate_fluid: f64,
    pub f_u: f64,
    pub f_x1_phi: f64,
    pub f_phi: f64,
    pub f_phi_x1: f64,
    pub f_phi_x2: f64,
    pub f_phi_grad: f64,
    pub f_phi_h1: f64,
    pub f_fluid: f64,
    pub f_g: f64,
    pub f_eps: f64,
    pub f_dual: f64,
    /// Largest per-mode residual of `beta eps^2 phi' + div w - eps^2 f`,
    /// relative to the largest of its terms over all modes.
    pub continuity_residual: f64,
}

struct View {
    c: [C64; 5],
}

impl View {
    fn of(v: &ModeVector) -> Self {
        let mut c = [ZERO; 5];
        for (&k, z) in v.mode.components().iter().zip(&v.coeffs) {
            c[k as usize] = *z;
        }
        Self { c }
    }
}

pub fn pieces(p: &Params, eps: f64, beta: f64, s: &Snapshot) -> Pieces {
    let e2 = eps * eps;
    let wt = [e2, 1.0 / p.pr, 1.0 / p.pr, 1.0, 1.0];
    let dk = [0.0, 1.0, 1.0, 1.0, p.d];
    let mut o = Pieces::default();
    let mut cont_scale: f64 = 0.0;
    for ((u, du), f) in s.u.entries.iter().zip(&s.du.entries).zip(&s.f.entries) {
        let mode = u.mode;
        let nu = mode.basis_norm(p.alpha);
        let mu = mode.mu(p.alpha);
        let a = mode.a(p.alpha);
        let b = mode.b();
        let (a2, b2) = (a * a, b * b);
        let (x, dx, fx) = (View::of(u), View::of(du), View::of(f));
        for i in 0..5 {
            let sq = nu * x.c[i].norm_sqr();
            let cr = nu * (x.c[i] * dx.c[i].conj()).re;
            let wq = wt[i] * sq;
            o.n_eps += wq;
            o.n_eps_dt += 2.0 * wt[i] * cr;
            o.n_x1 += a2 * wq;
            o.n_x1_dt += 2.0 * a2 * wt[i] * cr;
            o.n_grad += mu * wq;
            o.n_eps_rate += wt[i] * nu * dx.c[i].norm_sqr();
            o.f_u += wt[i] * nu * (fx.c[i] * x.c[i].conj()).re;
            o.f_eps += wt[i] * nu * fx.c[i].norm_sqr();
            if i > 0 {
                o.d += dk[i] * mu * sq;
                o.d_dt += 2.0 * dk[i] * mu * cr;
                o.d_x1 += dk[i] * mu * a2 * sq;
                o.fluid += sq;
                o.fluid_hess += mu * mu * sq;
                o.rate_fluid += nu * dx.c[i].norm_sqr();
                o.f_fluid += nu * fx.c[i].norm_sqr();
                o.f_dual += wt[i] * nu * fx.c[i].norm_sqr() / mu;
            }
            if i == 1 || i == 2 {
                o.rate_w += nu * dx.c[i].norm_sqr();
                o.f_g += nu * fx.c[i].norm_sqr();
            }
            if i >= 3 {
                o.scalars += sq;
            }
        }
        let (phi, dphi, fphi) = (x.c[0], dx.c[0], fx.c[0]);
        let div = x.c[1] * a + x.c[2] * b;
        let ddiv = dx.c[1] * a + dx.c[2] * b;
        o.cpl += nu * (phi * div.conj()).re;
        o.cpl_dt += nu * (dphi * div.conj() + phi * ddiv.conj()).re;
        let ps = nu * phi.norm_sqr();
        o.phi += ps;
        o.phi_x1 += a2 * ps;
        o.phi_x2 += b2 * ps;
        o.phi_x2_dt += 2.0 * b2 * nu * (phi * dphi.conj()).re;
        o.phi_grad += mu * ps;
        let dps = nu * dphi.norm_sqr();
        o.dphi_x1 += a2 * dps;
        o.dphi_x2 += b2 * dps;
        o.dphi_grad += mu * dps;
        o.dphi_h1 += (1.0 + mu) * dps;
        o.div_w += nu * div.norm_sqr();
        let fps = nu * fphi.norm_sqr();
        o.f_x1_phi += a2 * nu * (fphi * phi.conj()).re;
        o.f_phi += fps;
        o.f_phi_x1 += a2 * fps;
        o.f_phi_x2 += b2 * fps;
        o.f_phi_grad += mu * fps;
        o.f_phi_h1 += (1.0 + mu) * fps;
        if mode.components().contains(&Component::Phi) {
            // Scaled by the largest summand: near the solenoidal limit the
            // divergence is a small difference of large terms.
            let lhs = dphi * (beta * e2) + div - fphi * e2;
            cont_scale = cont_scale
                .max((dphi * (beta * e2)).norm())
                .max((x.c[1] * a).norm())
                .max((x.c[2] * b).norm())
                .max((fphi * e2).norm());
            o.continuity_residual = o.continuity_residual.max(lhs.norm());
        }
    }
    if cont_scale > 0.0 {
        o.continuity_residual /= cont_scale;
    }
    o
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Functionals {
    pub e1: f64,
    pub e: f64,
    pub d: f64,
    pub d1: f64,
    pub d2: f64,
    /// `Re (phi, div w)`.
    pub coupling: f64,
}

pub fn functionals(pc: &Pieces, eps: f64, cfg: &EnergyConfig) -> Functionals {
    let e2 = eps * eps;
    let b = cfg.beta;
    let e1 = b * pc.n_eps + cfg.c1 * e2 * (pc.d - 2.0 * pc.cpl);
    let e = e1 + cfg.c0 * b * e2 * pc.n_x1 + cfg.c2 * b * e2 * e2 * pc.phi_x2;
    let common = pc.d + e2 * pc.d_x1 + b * b * e2 * pc.n_eps_rate;
    Functionals {
        e1,
        e,
        d: pc.d,
        d1: common + b * b * e2.powi(3) * pc.dphi_x1,
        d2: common + e2 * pc.phi_x2 + b * b * e2.powi(3) * pc.dphi_grad,
        coupling: pc.cpl,
    }
}

/// Energy functional and its exact time derivative.
pub fn energy_with_rate(pc: &Pieces, eps: f64, cfg: &EnergyConfig) -> (f64, f64) {
    let e2 = eps * eps;
    let b = cfg.beta;
    let e = functionals(pc, eps, cfg).e;
    let de = b * pc.n_eps_dt
        + cfg.c1 * e2 * (pc.d_dt - 2.0 * pc.cpl_dt)
        + cfg.c0 * b * e2 * pc.n_x1_dt
        + cfg.c2 * b * e2 * e2 * pc.phi_x2_dt;
    (e, de)
}

/// Dissipation produced by the weighted sum of the individual estimates:
/// `D + c0 eps^2 D(d_x1 u) + c1 beta^2 eps^2 |||u'|||^2 + c2 eps^2 |d_x2 phi|^2
/// + c3 eps^2 (|grad phi|^2 + |d_x^2 u|^2)` plus the `d_t d_x phi` terms.
/// It controls every term of `|||d_x u|||^2 + beta^2 eps^2 |||u'|||^2 +
/// eps^2 |d_x^2 u|^2 + beta^2 eps^6 |d_x d_t phi|^2` up to a fixed factor.
pub fn dissipation(pc: &Pieces, eps: f64, cfg: &EnergyConfig) -> f64 {
    let e2 = eps * eps;
    let b2 = cfg.beta * cfg.beta;
    pc.d + cfg.c0 * e2 * pc.d_x1
        + cfg.c1 * b2 * e2 * pc.n_eps_rate
        + cfg.c2 * e2 * pc.phi_x2
        + cfg.c3 * e2 * (pc.phi_grad + pc.fluid_hess)
        + cfg.c_dt * b2 * e2 * e2 * e2 * (cfg.c0 * pc.dphi_x1 + cfg.c2 * pc.dphi_x2)
}

/// The a priori estimates checked along trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Estimate {
    /// `beta d/dt |||u|||^2 + D <= 2 Re (F, u) + C (|theta|^2 + |psi|^2)`.
    Basic,
    /// The same for `d_x1 u`, with the `d_t d_x1 phi` term on the left.
    Tangential,
    /// Pressure-corrected dissipation against `|||d_t u|||^2`.
    TimeDerivative,
    /// Normal pressure gradient.
    NormalGradient,
    /// Elliptic regularity of the stationary problem.
    Elliptic,
    /// Sum of the above with the pairing terms kept.
    Assembled,
    /// The closed form with dual and forcing norms on the right.
    Closed,
}

impl Estimate {
    pub const ALL: [Estimate; 7] = [
        Estimate::Basic,
        Estimate::Tangential,
        Estimate::TimeDerivative,
        Estimate::NormalGradient,
        Estimate::Elliptic,
        Estimate::Assembled,
        Estimate::Closed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimate::Basic => "basic",
            Estimate::Tangential => "tangential",
            Estimate::TimeDerivative => "time-derivative",
            Estimate::NormalGradient => "normal-gradient",
            Estimate::Elliptic => "elliptic",
            Estimate::Assembled => "assembled",
            Estimate::Closed => "closed",
        }
    }

    /// `(left side, explicit right-side term, bracket multiplied by C)`.
    pub fn terms(self, pc: &Pieces, eps: f64, cfg: &EnergyConfig) -> (f64, f64, f64) {
        let e2 = eps * eps;
        let e4 = e2 * e2;
        let e6 = e4 * e2;
        let b = cfg.beta;
        let b2 = b * b;
        match self {
            Estimate::Basic => (b * pc.n_eps_dt + pc.d, 2.0 * pc.f_u, pc.scalars),
            Estimate::Tangential => (
                b * pc.n_x1_dt + pc.d_x1 + cfg.c_dt * b2 * e4 * pc.dphi_x1,
                2.0 * e2 * pc.f_x1_phi,
                e4 * pc.f_phi_x1 + pc.f_fluid + pc.fluid,
            ),
            Estimate::TimeDerivative => (
                b * (pc.d_dt - 2.0 * pc.cpl_dt) + b2 * pc.n_eps_rate,
                0.0,
                pc.div_w / e2 + pc.f_eps + pc.fluid,
            ),
            Estimate::NormalGradient => (
                b * e2 * pc.phi_x2_dt + pc.phi_x2 + cfg.c_dt * b2 * e4 * pc.dphi_x2,
                0.0,
                e4 * pc.f_phi_x2 + pc.f_g + pc.d_x1 + b2 * pc.rate_w + pc.fluid,
            ),
            Estimate::Elliptic => (
                pc.phi_grad + pc.fluid_hess,
                0.0,
                e4 * pc.f_phi_h1 + pc.f_fluid + b2 * e4 * pc.dphi_h1 + b2 * pc.rate_fluid + pc.fluid,
            ),
            Estimate::Assembled | Estimate::Closed => {
                let (_, de) = energy_with_rate(pc, eps, cfg);
                let lhs = de + dissipation(pc, eps, cfg);
                let rhs = if self == Estimate::Assembled {
                    pc.f_u.abs() + e4 * pc.f_x1_phi.abs() + e2 * pc.f_eps + e6 * pc.f_phi_grad + pc.scalars
                } else {
                    e2 * pc.f_phi + pc.f_dual + e2 * pc.f_fluid + e6 * pc.f_phi_grad + pc.scalars
                };
                (lhs, 0.0, rhs)
            }
        }
    }
}

/// Smallest constant making one estimate hold over a set of samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateCheck {
    pub estimate: Estimate,
    pub c_star: f64,
    /// Time of the sample that fixes `c_star`.
    pub worst_time: f64,
    pub samples: usize,
}

fn scale_of(pc: &Pieces) -> f64 {
    pc.n_eps + pc.n_grad + pc.d + pc.fluid_hess + pc.n_eps_rate + pc.f_eps
}

/// Minimal constants for every estimate along the given trajectories.
/// A sample where the bracket vanishes but the left side still exceeds the
/// explicit term means no constant works, and is a hard failure.
pub fn verify_energy_inequalities(
    p: &Params,
    trajs: &[Trajectory],
    cfg: &EnergyConfig,
) -> Result<Vec<EstimateCheck>> {
    let mut out: Vec<EstimateCheck> = Estimate::ALL
        .iter()
        .map(|&e| EstimateCheck {
            estimate: e,
            c_star: 0.0,
            worst_time: 0.0,
            samples: 0,
        })
        .collect();
    for tr in trajs {
        for k in 0..tr.len() {
            let pc = pieces(p, tr.eps, tr.beta, &tr.snapshot(k));
            let tol = 1e-11 * scale_of(&pc);
            for chk in out.iter_mut() {
                let (lhs, main, br) = chk.estimate.terms(&pc, tr.eps, cfg);
                let excess = lhs - main;
                chk.samples += 1;
                if excess <= tol {
                    continue;
                }
                if br <= tol {
                    return Err(Error::Rejected(format!(
                        "{} estimate fails for every constant at t = {}",
                        chk.estimate.name(),
                        tr.times[k]
                    )));
                }
                let c = excess / br;
                if c > chk.c_star {
                    chk.c_star = c;
                    chk.worst_time = tr.times[k];
                }
            }
        }
    }
    Ok(out)
}

/// Halve `c0`, `c2`, `c3` until the energy functional is positive and
/// comparable to `beta (|||u|||^2 + eps^2 |||d_x u|||^2)` on every sample.
pub fn calibrate(p: &Params, trajs: &[Trajectory], base: EnergyConfig) -> Result<EnergyConfig> {
    let mut cfg = base;
    for _ in 0..30 {
        let ok = trajs.iter().all(|tr| {
            (0..tr.len()).all(|k| {
                let pc = pieces(p, tr.eps, tr.beta, &tr.snapshot(k));
                let e = functionals(&pc, tr.eps, &cfg).e;
                let reference = cfg.beta * (pc.n_eps + tr.eps * tr.eps * pc.n_grad);
                e > 0.25 * reference
            })
        });
        if ok {
            return Ok(cfg);
        }
        cfg.c0 *= 0.5;
        cfg.c2 *= 0.5;
        cfg.c3 *= 0.5;
    }
    Err(Error::NoConvergence(30))
}

/// Measured constants of the two-sided bounds on the pressure-corrected
/// dissipation and on `E1`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Sandwich {
    /// Minimum of `(D - 2Re(phi, div w)) - (D/2 - 8|phi|^2)`.
    pub lower_slack: f64,
    /// Minimum of `(3D/2 + 8|phi|^2) - (D - 2Re(phi, div w))`.
    pub upper_slack: f64,
    /// Smallest `C` with `C^{-1} R <= E1 <= C R`,
    /// `R = beta (|||u|||^2 + eps^2 D)`.
    pub e1_constant: f64,
}

pub fn sandwich(p: &Params, trajs: &[Trajectory], cfg: &EnergyConfig) -> Sandwich {
    let mut s = Sandwich {
        lower_slack: f64::INFINITY,
        upper_slack: f64::INFINITY,
        e1_constant: 1.0,
    };
    for tr in trajs {
        for k in 0..tr.len() {
            let pc = pieces(p, tr.eps, tr.beta, &tr.snapshot(k));
            let mid = pc.d - 2.0 * pc.cpl;
            s.lower_slack = s.lower_slack.min(mid - (0.5 * pc.d - 8.0 * pc.phi));
            s.upper_slack = s.upper_slack.min(1.5 * pc.d + 8.0 * pc.phi - mid);
            let e1 = functionals(&pc, tr.eps, cfg).e1;
            let r = cfg.beta * (pc.n_eps + tr.eps * tr.eps * pc.d);
            if r > 0.0 {
                let q = e1 / r;
                s.e1_constant = s.e1_constant.max(q).max(1.0 / q);
            }
        }
    }
    s
}

/// Decay of free trajectories started on the complement of the pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub eps: f64,
    pub beta: f64,
    /// Gap of the generator with the critical pair removed.
    pub kappa1: f64,
    /// Smallest fitted rate over the initial data, in the scaled time.
    pub kappa_fit: f64,
    /// Largest `|||u(t)||| e^{kappa_fit t} / |||u0|||`.
    pub c_fit: f64,
    /// Largest `E(u(t)) e^{2 kappa t} / E(u0)`.
    pub c_energy: f64,
    /// Largest `int_0^T e^{2 kappa s}(|theta|^2 + |psi|^2) ds / E(u0)`.
    pub c_oscillation: f64,
    pub t_end: f64,
}

fn x1_sq(p: &Params, eps: f64, f: &Field) -> f64 {
    f.entries
        .iter()
        .map(|e| {
            let m = crate::model::mode_norms(p, eps, e);
            m.eps2 + eps * eps * m.grad2
        })
        .sum()
}

fn fit_slope(t: &[f64], y: &[f64]) -> f64 {
    let n = t.len() as f64;
    let mt = t.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = t.iter().zip(y).map(|(a, b)| (a - mt) * (b - my)).sum();
    let sxx: f64 = t.iter().map(|a| (a - mt) * (a - mt)).sum();
    sxy / sxx
}

/// Fit `|||V(t) Q u0|||_{eps,X1} <= C e^{-kappa t}` over the initial data.
#[allow(clippy::too_many_arguments)]
pub fn decay_fit(
    p: &Params,
    crit: &CriticalPoint,
    beta: f64,
    kappa1: f64,
    u0s: &[Field],
    t_end: f64,
    n_samples: usize,
    cfg: &EnergyConfig,
) -> Result<DecayFit> {
    let times = chebyshev_times(t_end, n_samples);
    let mut kappa_fit = f64::INFINITY;
    let mut curves = Vec::new();
    let modes: Vec<Mode> = u0s
        .first()
        .map(|f| f.entries.iter().map(|e| e.mode).collect())
        .unwrap_or_default();
    let fl = flows(p, crit.eps, crit.r1c, beta, &modes)?;
    let mut c_energy: f64 = 0.0;
    let mut c_osc: f64 = 0.0;
    for u0 in u0s {
        let q = project_q(p, crit, u0)?;
        let tr = solve_ivp(p, crit.eps, crit.r1c, beta, &q, &Forcing::none(), &times)?;
        let norms: Vec<f64> = tr.states.iter().map(|s| x1_sq(p, crit.eps, s).sqrt()).collect();
        if norms[0] == 0.0 {
            return Err(Error::InvalidParameter {
                name: "u0",
                reason: "projected initial data vanish".into(),
            });
        }
        let logs: Vec<f64> = norms.iter().map(|n| (n / norms[0]).ln()).collect();
        let rate = -fit_slope(&times, &logs);
        if !(rate > 0.0) {
            return Err(Error::Rejected(format!(
                "no decay at eps = {} (fitted rate {rate})",
                crit.eps
            )));
        }
        kappa_fit = kappa_fit.min(rate);
        curves.push(norms);

        let e_of = |k: usize| {
            let pc = pieces(p, crit.eps, beta, &tr.snapshot(k));
            functionals(&pc, crit.eps, cfg).e
        };
        let e0 = e_of(0);
        for (k, &t) in times.iter().enumerate() {
            c_energy = c_energy.max(e_of(k) * (2.0 * cfg.kappa * t).exp() / e0);
        }
        let integral: f64 = q
            .entries
            .iter()
            .zip(&fl)
            .map(|(e, f)| {
                let nu = e.mode.basis_norm(p.alpha);
                let w: Vec<f64> = e
                    .mode
                    .components()
                    .iter()
                    .map(|c| if matches!(c, Component::Theta | Component::Psi) { nu } else { 0.0 })
                    .collect();
                f.weighted_integral(&CVec::from_vec(e.coeffs.clone()), &w, cfg.kappa, t_end)
            })
            .sum();
        c_osc = c_osc.max(integral / e0);
    }
    let c_fit = curves
        .iter()
        .flat_map(|c| {
            c.iter()
                .zip(&times)
                .map(move |(n, t)| n / c[0] * (kappa_fit * t).exp())
        })
        .fold(0.0, f64::max);
    Ok(DecayFit {
        eps: crit.eps,
        beta,
        kappa1,
        kappa_fit,
        c_fit,
        c_energy,
        c_oscillation: c_osc,
        t_end,
    })
}

/// Sample sizes and seeds of the energy and decay study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyOptions {
    /// Calibration trajectories per `eps`; the first is unforced.
    pub trajectories: usize,
    pub trajectory_samples: usize,
    /// Initial data for the decay fit.
    pub decay_data: usize,
    pub decay_samples: usize,
    /// Decay horizon in units of `1 / kappa1`.
    pub decay_horizon: f64,
    pub seed: u64,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            trajectories: 3,
            trajectory_samples: 33,
            decay_data: 4,
            decay_samples: 65,
            decay_horizon: 10.0,
            seed: 0,
        }
    }
}

/// Everything measured at one `eps` of the study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsStudy {
    pub eps: f64,
    pub r1c: f64,
    pub beta: f64,
    /// Gap of `M` off the critical pair, before time scaling.
    pub gap: f64,
    pub config: EnergyConfig,
    pub checks: Vec<EstimateCheck>,
    pub sandwich: Sandwich,
    pub decay: DecayFit,
    /// Largest relative residual of the continuity identity.
    pub continuity: f64,
}

fn conjugate(f: &Field) -> Field {
    let mut g = f.clone();
    for e in &mut g.entries {
        e.coeffs.iter_mut().for_each(|z| *z = z.conj());
    }
    g
}

/// Calibration trajectories over one period of the incompressible
/// oscillation, then the estimates, sandwich bounds and decay fit.
/// `beta = a^eps / a` and `kappa = 0.9 min(gap, d pi^2) / beta`.
pub fn energy_study_at(
    p: &Params,
    trunc: &crate::model::Truncation,
    inc: &crate::criticality::IncCritical,
    crit: &CriticalPoint,
    opts: &StudyOptions,
) -> Result<EpsStudy> {
    use crate::spectral_survey::{probe_fields, spectral_gap};
    let eps = crit.eps;
    let gap = spectral_gap(p, trunc, eps, crit.r1c, Some(crit))?.kappa1;
    let beta = crit.a / inc.a;
    let floor = p.d * std::f64::consts::PI.powi(2);
    let kappa = 0.9 * gap.min(floor) / beta;
    let dense = |seed: u64| probe_fields(trunc, p.alpha, inc.mode, opts.seed + seed).swap_remove(1);
    let period = 2.0 * std::f64::consts::PI / inc.a;
    let times = chebyshev_times(period, opts.trajectory_samples);
    let mut trajs = Vec::with_capacity(opts.trajectories);
    for s in 0..opts.trajectories as u64 {
        let forcing = if s == 0 {
            Forcing::none()
        } else {
            let f1 = dense(200 + s);
            Forcing {
                omega: inc.a,
                harmonics: vec![(1, f1.clone()), (-1, conjugate(&f1)), (0, dense(300 + s))],
            }
        };
        trajs.push(solve_ivp(p, eps, crit.r1c, beta, &dense(100 + s), &forcing, &times)?);
    }
    let config = calibrate(p, &trajs, EnergyConfig::new(beta, kappa))?;
    let checks = verify_energy_inequalities(p, &trajs, &config)?;
    let sandwich = sandwich(p, &trajs, &config);
    let continuity = trajs
        .iter()
        .flat_map(|tr| (0..tr.len()).map(move |k| (tr, k)))
        .map(|(tr, k)| pieces(p, eps, beta, &tr.snapshot(k)).continuity_residual)
        .fold(0.0, f64::max);
    let u0s: Vec<Field> = (0..opts.decay_data as u64).map(|s| dense(400 + s)).collect();
    let decay = decay_fit(
        p,
        crit,
        beta,
        gap / beta,
        &u0s,
        opts.decay_horizon / gap,
        opts.decay_samples,
        &config,
    )?;
    Ok(EpsStudy {
        eps,
        r1c: crit.r1c,
        beta,
        gap,
        config,
        checks,
        sandwich,
        decay,
        continuity,
    })
}

pub fn energy_study(
    p: &Params,
    trunc: &crate::model::Truncation,
    inc: &crate::criticality::IncCritical,
    crits: &[CriticalPoint],
    opts: &StudyOptions,
) -> Result<Vec<EpsStudy>> {
    par::try_map(crits, |c| energy_study_at(p, trunc, inc, c, opts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Truncation;
    use std::f64::consts::PI;

    fn params() -> Params {
        Params::new(2.0, 0.3, 300f64.sqrt(), PI / 2f64.sqrt()).unwrap()
    }

    #[test]
    fn scalar_mode_is_diagonal_exponential() {
        let p = params();
        let b = assemble_mode(&p, Mode::new(0, 1), Operator::Ac { eps: 0.1 }, 30.0).unwrap();
        let u0 = CVec::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 2.0)]);
        let u = propagate_mode(&b, &u0, 0.7).unwrap();
        let mu = PI * PI;
        assert!((u[0] - C64::new((-mu * 0.7f64).exp(), 0.0)).norm() < 1e-15);
        assert!((u[1] - C64::new(0.0, 2.0 * (-p.d * mu * 0.7f64).exp())).norm() < 1e-15);
    }

    #[test]
    fn constant_forcing_settles_at_steady_state() {
        let p = params();
        let b = assemble_mode(&p, Mode::new(1, 1), Operator::Ac { eps: 0.1 }, 10.0).unwrap();
        let flow = ModeFlow::new(&b, 1.5).unwrap();
        let f = CVec::from_fn(5, |i, _| C64::new(1.0 + i as f64, -0.5));
        let (u, du, res) = flow.evolve(&CVec::zeros(5), &[(0, f.clone())], 0.0, 60.0);
        let steady = crate::linalg::solve(&b.m, &(-&f)).unwrap();
        assert!(!res);
        assert!((u - &steady).norm() < 1e-10 * steady.norm());
        assert!(du.norm() < 1e-10);
    }

    #[test]
    fn dense_fallback_matches_eigenbasis() {
        let p = params();
        let b = assemble_mode(&p, Mode::new(2, 1), Operator::Ac { eps: 0.2 }, 20.0).unwrap();
        let flow = ModeFlow::new(&b, 1.2).unwrap();
        assert!(flow.uses_eigenbasis());
        let mut dense = flow.clone();
        dense.rep = Rep::Dense;
        let u0 = CVec::from_fn(5, |i, _| C64::new(1.0 / (1.0 + i as f64), 0.3));
        let f = CVec::from_fn(5, |i, _| C64::new(0.2, i as f64));
        let h = [(1, f.clone()), (-2, f.map(|z| z.conj()))];
        let (a, da, _) = flow.evolve(&u0, &h, 1.3, 0.9);
        let (b2, db, _) = dense.evolve(&u0, &h, 1.3, 0.9);
        assert!((&a - &b2).norm() < 1e-11 * a.norm());
        assert!((&da - &db).norm() < 1e-10 * da.norm());
        let w = [0.0, 0.0, 0.0, 1.0, 1.0];
        let i1 = flow.weighted_integral(&u0, &w, 0.4, 2.0);
        let i2 = dense.weighted_integral(&u0, &w, 0.4, 2.0);
        assert!((i1 - i2).abs() < 1e-10 * i1.abs(), "{i1} {i2}");
    }

    #[test]
    fn chebyshev_endpoints() {
        let t = chebyshev_times(3.0, 9);
        assert_eq!(t[0], 0.0);
        assert!((t[8] - 3.0).abs() < 1e-15);
        assert!(t.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn forcing_shift_matches_restart() {
        let p = params();
        let t = Truncation { j_max: 2, k_max: 2 };
        let mut u0 = Field::zeros(&t);
        let mut f = Field::zeros(&t);
        for (i, e) in u0.entries.iter_mut().enumerate() {
            e.coeffs.iter_mut().for_each(|z| *z = C64::new(1.0, i as f64 * 0.1));
        }
        for e in &mut f.entries {
            e.coeffs.iter_mut().for_each(|z| *z = C64::new(0.5, -0.2));
        }
        let forcing = Forcing {
            omega: 2.0,
            harmonics: vec![(1, f.clone()), (0, f)],
        };
        let full = solve_ivp(&p, 0.1, 20.0, 1.1, &u0, &forcing, &[0.4, 1.0]).unwrap();
        let restart =
            solve_ivp(&p, 0.1, 20.0, 1.1, &full.states[0], &forcing.shifted(0.4), &[0.6]).unwrap();
        for (x, y) in full.states[1].entries.iter().zip(&restart.states[0].entries) {
            for (a, b) in x.coeffs.iter().zip(&y.coeffs) {
                assert!((a - b).norm() < 1e-10 * a.norm().max(1.0));
            }
        }
    }
}
