//! Parameters, Fourier modes and the per-mode operator blocks.
//!
//! A mode `(j, k)` carries the wavenumbers `a = alpha j` and `b = k pi`
//! and `mu = a^2 + b^2`. Components are always ordered
//! `(phi, w1, w2, theta, psi)`; a mode keeps only those whose basis
//! function is not identically zero:
//!
//! | kind     | j, k        | components                 |
//! |----------|-------------|----------------------------|
//! | full     | j>=1, k>=1  | phi, w1, w2, theta, psi    |
//! | acoustic | j>=1, k=0   | phi, w1                    |
//! | scalar   | j=0, k>=1   | theta, psi                 |
//! | null     | 0, 0        | none                       |
//!
//! Blocks are generators: the linear flow is `du/dt = M u`. The
//! incompressible reduction of a full mode lives on `(w2, theta, psi)`
//! with `w1 = -(b/a) w2`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{weighted_dot, CMat, CVec, C64, ZERO};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub pr: f64,
    pub d: f64,
    pub r2: f64,
    pub alpha: f64,
}

impl Params {
    pub fn new(pr: f64, d: f64, r2: f64, alpha: f64) -> Result<Self> {
        let bad = |name, reason: &str| {
            Err(Error::InvalidParameter {
                name,
                reason: reason.to_string(),
            })
        };
        if !(pr.is_finite() && pr > 0.0) {
            return bad("Pr", "must be positive");
        }
        if !(d.is_finite() && d > 0.0) {
            return bad("d", "must be positive");
        }
        if !r2.is_finite() {
            return bad("R2", "must be finite");
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return bad("alpha", "must be positive");
        }
        Ok(Self { pr, d, r2, alpha })
    }

    /// Oscillatory onset needs `Pr > 1` and `0 < d < 1`.
    pub fn hopf_admissible(&self) -> bool {
        self.pr > 1.0 && self.d > 0.0 && self.d < 1.0
    }

    /// Weight of each component in the compressible inner product.
    pub fn component_weight(&self, eps: f64, c: Component) -> f64 {
        match c {
            Component::Phi => eps * eps,
            Component::W1 | Component::W2 => 1.0 / self.pr,
            Component::Theta | Component::Psi => 1.0,
        }
    }
}

/// Dimensional data of the layer: viscosity, diffusivities, expansion
/// coefficients, gravity, depth, wall values and the horizontal
/// wavenumber in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub nu: f64,
    pub d_t: f64,
    pub d_s: f64,
    pub a_t: f64,
    pub a_s: f64,
    pub g: f64,
    pub ell: f64,
    pub t0: f64,
    pub t1: f64,
    pub s0: f64,
    pub s1: f64,
    pub alpha: f64,
}

/// Nondimensional parameters and the thermal `R1` of a physical layer.
pub fn nondimensionalize(q: &PhysicalParams) -> Result<(Params, f64)> {
    let positive = [
        ("nu", q.nu),
        ("d_T", q.d_t),
        ("d_S", q.d_s),
        ("a_T", q.a_t),
        ("g", q.g),
        ("ell", q.ell),
        ("alpha", q.alpha),
    ];
    for (name, v) in positive {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidParameter {
                name,
                reason: format!("must be positive, got {v}"),
            });
        }
    }
    if !(q.a_s.is_finite() && q.a_s >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "a_S",
            reason: format!("must be non-negative, got {}", q.a_s),
        });
    }
    if !(q.t0 > q.t1) {
        return Err(Error::InvalidParameter {
            name: "T0 - T1",
            reason: format!("must be positive, got {}", q.t0 - q.t1),
        });
    }
    if !(q.s0 > q.s1) {
        return Err(Error::InvalidParameter {
            name: "S0 - S1",
            reason: format!("must be positive, got {}", q.s0 - q.s1),
        });
    }
    let scale = q.g * q.ell.powi(3) / (q.d_t * q.nu);
    let r1 = (q.a_t * scale * (q.t0 - q.t1)).sqrt();
    let r2 = (q.a_s * scale * (q.s0 - q.s1)).sqrt();
    let p = Params::new(q.nu / q.d_t, q.d_s / q.d_t, r2, q.alpha * q.ell)?;
    Ok((p, r1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Component {
    Phi,
    W1,
    W2,
    Theta,
    Psi,
}

impl Component {
    pub fn is_fluid(self) -> bool {
        self != Component::Phi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeKind {
    Full,
    Acoustic,
    Scalar,
    Null,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Mode {
    pub j: u32,
    pub k: u32,
}

const FULL: [Component; 5] = [
    Component::Phi,
    Component::W1,
    Component::W2,
    Component::Theta,
    Component::Psi,
];
const ACOUSTIC: [Component; 2] = [Component::Phi, Component::W1];
const SCALAR: [Component; 2] = [Component::Theta, Component::Psi];
const INC_FULL: [Component; 3] = [Component::W2, Component::Theta, Component::Psi];

impl Mode {
    pub const fn new(j: u32, k: u32) -> Self {
        Self { j, k }
    }

    pub fn kind(self) -> ModeKind {
        match (self.j, self.k) {
            (0, 0) => ModeKind::Null,
            (0, _) => ModeKind::Scalar,
            (_, 0) => ModeKind::Acoustic,
            _ => ModeKind::Full,
        }
    }

    pub fn components(self) -> &'static [Component] {
        match self.kind() {
            ModeKind::Full => &FULL,
            ModeKind::Acoustic => &ACOUSTIC,
            ModeKind::Scalar => &SCALAR,
            ModeKind::Null => &[],
        }
    }

    /// Components of the incompressible reduction.
    pub fn inc_components(self) -> &'static [Component] {
        match self.kind() {
            ModeKind::Full => &INC_FULL,
            ModeKind::Scalar => &SCALAR,
            _ => &[],
        }
    }

    pub fn a(self, alpha: f64) -> f64 {
        alpha * self.j as f64
    }

    pub fn b(self) -> f64 {
        PI * self.k as f64
    }

    pub fn mu(self, alpha: f64) -> f64 {
        let a = self.a(alpha);
        let b = self.b();
        a * a + b * b
    }

    /// `||basis function||^2` over one cell `[0, 2 pi / alpha] x [0, 1]`.
    /// All components of a mode share it.
    pub fn basis_norm(self, alpha: f64) -> f64 {
        let x = if self.j == 0 { 2.0 * PI / alpha } else { PI / alpha };
        let y = if self.k == 0 { 1.0 } else { 0.5 };
        x * y
    }
}

/// All non-null modes with `j <= j_max`, `k <= k_max`, ordered by `j`
/// then `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truncation {
    pub j_max: u32,
    pub k_max: u32,
}

impl Default for Truncation {
    fn default() -> Self {
        Self {
            j_max: 16,
            k_max: 16,
        }
    }
}

impl Truncation {
    pub fn modes(&self) -> Vec<Mode> {
        let mut out = Vec::new();
        for j in 0..=self.j_max {
            for k in 0..=self.k_max {
                if j + k > 0 {
                    out.push(Mode::new(j, k));
                }
            }
        }
        out
    }

    pub fn full_modes(&self) -> Vec<Mode> {
        self.modes()
            .into_iter()
            .filter(|m| m.kind() == ModeKind::Full)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Space {
    Compressible,
    Incompressible,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Operator {
    Ac { eps: f64 },
    AcAdjoint { eps: f64 },
    Inc,
    IncAdjoint,
    /// `K = -dM/dR1`, the derivative of the dissipative operator.
    K { space: Space },
}

/// One assembled block with the weights of its inner product.
#[derive(Debug, Clone)]
pub struct ModeMatrix {
    pub mode: Mode,
    pub components: &'static [Component],
    pub m: CMat,
    /// `component weight * basis norm` for each row.
    pub weights: Vec<f64>,
}

impl ModeMatrix {
    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn inner(&self, u: &CVec, v: &CVec) -> C64 {
        weighted_dot(u.as_slice(), v.as_slice(), &self.weights)
    }

    pub fn norm(&self, u: &CVec) -> f64 {
        self.inner(u, u).re.max(0.0).sqrt()
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps.is_finite() && eps > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "eps",
            reason: format!("must be positive, got {eps}"),
        })
    }
}

fn ac_generator(p: &Params, mode: Mode, eps: f64, r1: f64) -> CMat {
    let a = mode.a(p.alpha);
    let b = mode.b();
    let mu = mode.mu(p.alpha);
    let e2 = eps * eps;
    let pr = p.pr;
    let rows: Vec<Vec<f64>> = match mode.kind() {
        ModeKind::Full => vec![
            vec![0.0, -a / e2, -b / e2, 0.0, 0.0],
            vec![pr * a, -pr * mu, 0.0, 0.0, 0.0],
            vec![pr * b, 0.0, -pr * mu, pr * r1, -pr * p.r2],
            vec![0.0, 0.0, r1, -mu, 0.0],
            vec![0.0, 0.0, p.r2, 0.0, -p.d * mu],
        ],
        ModeKind::Acoustic => vec![vec![0.0, -a / e2], vec![pr * a, -pr * a * a]],
        ModeKind::Scalar => vec![vec![-mu, 0.0], vec![0.0, -p.d * mu]],
        ModeKind::Null => vec![],
    };
    from_rows(&rows)
}

fn inc_generator(p: &Params, mode: Mode, r1: f64) -> CMat {
    let mu = mode.mu(p.alpha);
    let rows: Vec<Vec<f64>> = match mode.kind() {
        ModeKind::Full => {
            let q = mode.a(p.alpha).powi(2) / mu;
            let pr = p.pr;
            vec![
                vec![-pr * mu, pr * q * r1, -pr * q * p.r2],
                vec![r1, -mu, 0.0],
                vec![p.r2, 0.0, -p.d * mu],
            ]
        }
        ModeKind::Scalar => vec![vec![-mu, 0.0], vec![0.0, -p.d * mu]],
        _ => vec![],
    };
    from_rows(&rows)
}

fn from_rows(rows: &[Vec<f64>]) -> CMat {
    let n = rows.len();
    CMat::from_fn(n, n, |i, j| C64::new(rows[i][j], 0.0))
}

fn ac_weights(p: &Params, mode: Mode, eps: f64) -> Vec<f64> {
    let nu = mode.basis_norm(p.alpha);
    mode.components()
        .iter()
        .map(|&c| p.component_weight(eps, c) * nu)
        .collect()
}

fn inc_weights(p: &Params, mode: Mode) -> Vec<f64> {
    let nu = mode.basis_norm(p.alpha);
    match mode.kind() {
        ModeKind::Full => {
            let q = mode.a(p.alpha).powi(2) / mode.mu(p.alpha);
            vec![nu / (p.pr * q), nu, nu]
        }
        ModeKind::Scalar => vec![nu, nu],
        _ => vec![],
    }
}

/// `W^{-1} M^T W`: the adjoint of a real block in its weighted product.
fn weighted_adjoint(m: &CMat, w: &[f64]) -> CMat {
    let n = m.nrows();
    CMat::from_fn(n, n, |i, j| m[(j, i)].conj() * (w[j] / w[i]))
}

pub fn assemble_mode(p: &Params, mode: Mode, op: Operator, r1: f64) -> Result<ModeMatrix> {
    if !r1.is_finite() {
        return Err(Error::InvalidParameter {
            name: "R1",
            reason: "must be finite".into(),
        });
    }
    let (components, m, weights) = match op {
        Operator::Ac { eps } => {
            check_eps(eps)?;
            (mode.components(), ac_generator(p, mode, eps, r1), ac_weights(p, mode, eps))
        }
        Operator::AcAdjoint { eps } => {
            check_eps(eps)?;
            let w = ac_weights(p, mode, eps);
            let m = weighted_adjoint(&ac_generator(p, mode, eps, r1), &w);
            (mode.components(), m, w)
        }
        Operator::Inc => (mode.inc_components(), inc_generator(p, mode, r1), inc_weights(p, mode)),
        Operator::IncAdjoint => {
            let w = inc_weights(p, mode);
            let m = weighted_adjoint(&inc_generator(p, mode, r1), &w);
            (mode.inc_components(), m, w)
        }
        Operator::K { space } => {
            let (comps, scale, w) = match space {
                Space::Compressible => (mode.components(), p.pr, ac_weights(p, mode, 1.0)),
                Space::Incompressible => {
                    let q = if mode.kind() == ModeKind::Full {
                        mode.a(p.alpha).powi(2) / mode.mu(p.alpha)
                    } else {
                        0.0
                    };
                    (mode.inc_components(), p.pr * q, inc_weights(p, mode))
                }
            };
            let n = comps.len();
            let mut k = CMat::zeros(n, n);
            let iw = comps.iter().position(|&c| c == Component::W2);
            let it = comps.iter().position(|&c| c == Component::Theta);
            if let (Some(iw), Some(it)) = (iw, it) {
                k[(iw, it)] = C64::new(-scale, 0.0);
                k[(it, iw)] = C64::new(-1.0, 0.0);
            }
            (comps, k, w)
        }
    };
    Ok(ModeMatrix {
        mode,
        components,
        m,
        weights,
    })
}

/// Lift an incompressible full-mode vector `(w2, theta, psi)` to the five
/// compressible components. `phi` is the pressure that balances the `w1`
/// momentum row at eigenvalue `lambda` of the block, or of its adjoint
/// when `adjoint` is set.
pub fn embed_inc(p: &Params, mode: Mode, v: &CVec, lambda: C64, adjoint: bool) -> CVec {
    assert_eq!(mode.kind(), ModeKind::Full, "embedding needs a full mode");
    let a = mode.a(p.alpha);
    let b = mode.b();
    let mu = mode.mu(p.alpha);
    let w2 = v[0];
    let w1 = -w2 * (b / a);
    let phi = if adjoint {
        -(lambda + p.pr * mu) * w1 / (p.pr * a)
    } else {
        (lambda + p.pr * mu) * w1 / (p.pr * a)
    };
    CVec::from_vec(vec![phi, w1, w2, v[1], v[2]])
}

/// Coefficients of one mode, in the order of `mode.components()`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeVector {
    pub mode: Mode,
    pub coeffs: Vec<C64>,
}

impl ModeVector {
    pub fn zeros(mode: Mode) -> Self {
        Self {
            mode,
            coeffs: vec![ZERO; mode.components().len()],
        }
    }

    pub fn get(&self, c: Component) -> C64 {
        self.mode
            .components()
            .iter()
            .position(|&x| x == c)
            .map_or(ZERO, |i| self.coeffs[i])
    }
}

/// A truncated spatial field: one coefficient vector per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub entries: Vec<ModeVector>,
}

impl Field {
    pub fn zeros(trunc: &Truncation) -> Self {
        Self {
            entries: trunc.modes().into_iter().map(ModeVector::zeros).collect(),
        }
    }

    pub fn mode_mut(&mut self, mode: Mode) -> Option<&mut ModeVector> {
        self.entries.iter_mut().find(|e| e.mode == mode)
    }

    pub fn mode(&self, mode: Mode) -> Option<&ModeVector> {
        self.entries.iter().find(|e| e.mode == mode)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NormReport {
    /// `|||u|||_eps`.
    pub n_eps: f64,
    /// `|||u|||_{eps,X1}`.
    pub n_eps_x1: f64,
    /// Gradient norm of the fluid part.
    pub n_x1: f64,
    /// Dual norm of the fluid part.
    pub n_dual: f64,
    /// `||grad w||^2 + ||grad theta||^2 + d ||grad psi||^2`.
    pub dissipation: f64,
    /// `(phi, div w)`, real and imaginary parts.
    pub coupling: [f64; 2],
}

/// Per-mode contributions; the field norms are square roots of sums.
#[derive(Debug, Clone, Copy, Default)]
pub struct ModeNorms {
    pub eps2: f64,
    pub grad2: f64,
    pub fluid_grad2: f64,
    pub fluid_dual2: f64,
    pub dissipation: f64,
    pub coupling: C64,
}

pub fn mode_norms(p: &Params, eps: f64, v: &ModeVector) -> ModeNorms {
    let mode = v.mode;
    let nu = mode.basis_norm(p.alpha);
    let mu = mode.mu(p.alpha);
    let mut out = ModeNorms::default();
    for (&c, z) in mode.components().iter().zip(&v.coeffs) {
        let w = p.component_weight(eps, c) * nu * z.norm_sqr();
        out.eps2 += w;
        out.grad2 += mu * w;
        if c.is_fluid() {
            out.fluid_grad2 += mu * w;
            out.fluid_dual2 += w / mu;
            let dk = if c == Component::Psi { p.d } else { 1.0 };
            out.dissipation += dk * mu * nu * z.norm_sqr();
        }
    }
    let div = v.get(Component::W1) * mode.a(p.alpha) + v.get(Component::W2) * mode.b();
    out.coupling = v.get(Component::Phi) * div.conj() * nu;
    out
}

pub fn norms(p: &Params, eps: f64, f: &Field) -> NormReport {
    let mut acc = ModeNorms::default();
    for e in &f.entries {
        let m = mode_norms(p, eps, e);
        acc.eps2 += m.eps2;
        acc.grad2 += m.grad2;
        acc.fluid_grad2 += m.fluid_grad2;
        acc.fluid_dual2 += m.fluid_dual2;
        acc.dissipation += m.dissipation;
        acc.coupling += m.coupling;
    }
    NormReport {
        n_eps: acc.eps2.sqrt(),
        n_eps_x1: (acc.eps2 + eps * eps * acc.grad2).sqrt(),
        n_x1: acc.fluid_grad2.sqrt(),
        n_dual: acc.fluid_dual2.sqrt(),
        dissipation: acc.dissipation,
        coupling: [acc.coupling.re, acc.coupling.im],
    }
}

/// `(u, v)_eps` for two fields on the same truncation.
pub fn inner(p: &Params, eps: f64, u: &Field, v: &Field) -> C64 {
    u.entries
        .iter()
        .zip(&v.entries)
        .map(|(x, y)| {
            debug_assert_eq!(x.mode, y.mode);
            let nu = x.mode.basis_norm(p.alpha);
            x.mode
                .components()
                .iter()
                .zip(x.coeffs.iter().zip(&y.coeffs))
                .map(|(&c, (a, b))| a * b.conj() * (p.component_weight(eps, c) * nu))
                .sum::<C64>()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> Params {
        Params::new(2.0, 0.3, 300f64.sqrt(), PI / 2f64.sqrt()).unwrap()
    }

    #[test]
    fn kinds_and_dimensions() {
        assert_eq!(Mode::new(0, 0).components().len(), 0);
        assert_eq!(Mode::new(3, 0).components().len(), 2);
        assert_eq!(Mode::new(0, 2).components().len(), 2);
        assert_eq!(Mode::new(1, 1).components().len(), 5);
        assert_eq!(Mode::new(1, 1).inc_components().len(), 3);
        assert_eq!(Mode::new(2, 0).inc_components().len(), 0);
    }

    #[test]
    fn basis_norms() {
        let al = PI / 2f64.sqrt();
        assert!((Mode::new(1, 1).basis_norm(al) - PI / (2.0 * al)).abs() < 1e-15);
        assert!((Mode::new(0, 3).basis_norm(al) - PI / al).abs() < 1e-15);
        assert!((Mode::new(2, 0).basis_norm(al) - PI / al).abs() < 1e-15);
    }

    #[test]
    fn invalid_parameters_are_named() {
        let e = Params::new(-1.0, 0.3, 1.0, 1.0).unwrap_err();
        assert!(matches!(e, Error::InvalidParameter { name: "Pr", .. }));
        let p = params();
        let e = assemble_mode(&p, Mode::new(1, 1), Operator::Ac { eps: 0.0 }, 1.0).unwrap_err();
        assert!(matches!(e, Error::InvalidParameter { name: "eps", .. }));
    }

    #[test]
    fn acoustic_block_entries() {
        let p = params();
        let m = assemble_mode(&p, Mode::new(2, 0), Operator::Ac { eps: 0.5 }, 7.0).unwrap();
        let a = 2.0 * p.alpha;
        assert_eq!(m.m[(0, 1)].re, -a / 0.25);
        assert_eq!(m.m[(1, 0)].re, p.pr * a);
        assert_eq!(m.m[(1, 1)].re, -p.pr * a * a);
    }

    #[test]
    fn ac_adjoint_matches_hand_derived_block() {
        // Generator of the adjoint problem, written out directly.
        let p = params();
        let mode = Mode::new(2, 3);
        let (a, b, mu) = (mode.a(p.alpha), mode.b(), mode.mu(p.alpha));
        let (eps, r1) = (0.07, 31.0);
        let e2 = eps * eps;
        let pr = p.pr;
        let want = [
            [0.0, a / e2, b / e2, 0.0, 0.0],
            [-pr * a, -pr * mu, 0.0, 0.0, 0.0],
            [-pr * b, 0.0, -pr * mu, pr * r1, pr * p.r2],
            [0.0, 0.0, r1, -mu, 0.0],
            [0.0, 0.0, -p.r2, 0.0, -p.d * mu],
        ];
        let got = assemble_mode(&p, mode, Operator::AcAdjoint { eps }, r1).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let g = got.m[(i, j)];
                assert!((g.re - want[i][j]).abs() <= 1e-12 * want[i][j].abs().max(1.0), "({i},{j})");
                assert_eq!(g.im, 0.0);
            }
        }
    }

    #[test]
    fn k_is_minus_r1_derivative() {
        let p = params();
        let mode = Mode::new(1, 2);
        let h = 1e-3;
        for (op, space) in [
            (Operator::Ac { eps: 0.05 }, Space::Compressible),
            (Operator::Inc, Space::Incompressible),
        ] {
            let plus = assemble_mode(&p, mode, op, 20.0 + h).unwrap().m;
            let minus = assemble_mode(&p, mode, op, 20.0 - h).unwrap().m;
            let fd = (plus - minus) / C64::new(2.0 * h, 0.0);
            let k = assemble_mode(&p, mode, Operator::K { space }, 20.0).unwrap().m;
            assert!((fd + k).norm() < 1e-9);
        }
    }

    #[test]
    fn truncation_order() {
        let t = Truncation { j_max: 1, k_max: 1 };
        assert_eq!(t.modes(), vec![Mode::new(0, 1), Mode::new(1, 0), Mode::new(1, 1)]);
    }
}
