//! Spectral gap, acoustic damping and resolvent probes over a truncation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::criticality::CriticalPoint;
use crate::error::{Error, Result};
use crate::linalg::{solve, CMat, CVec, C64};
use crate::model::{
    assemble_mode, mode_norms, Component, Field, Mode, ModeVector, Operator, Params, Truncation,
};
use crate::par;
use crate::smalleig::eig_dense;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralGap {
    /// `None` for the incompressible system.
    pub eps: Option<f64>,
    pub r1: f64,
    /// `-max Re` over the spectrum with the critical pair removed.
    pub kappa1: f64,
    pub slowest_mode: Mode,
    /// Largest real part among eigenvalues with `|Im| >= 1 / (2 eps)`.
    pub acoustic_abscissa: Option<f64>,
    pub excluded: usize,
    /// `-max Re` per mode, critical pair left out.
    pub per_mode: Vec<(Mode, f64)>,
}

/// Cosine of the angle between two vectors in plain coordinates.
fn overlap(u: &CVec, v: &CVec) -> f64 {
    u.dotc(v).norm() / (u.norm() * v.norm())
}

const PAIR_OVERLAP: f64 = 0.99;

fn scan_gap(
    modes: &[Mode],
    op: Operator,
    p: &Params,
    r1: f64,
    exclude: Option<(Mode, CVec)>,
    acoustic_cut: Option<f64>,
) -> Result<(f64, Mode, Option<f64>, usize, Vec<(Mode, f64)>)> {
    let per_mode = par::try_map(modes, |&m| -> Result<(f64, Option<f64>, usize)> {
        let b = assemble_mode(p, m, op, r1)?;
        if b.dim() == 0 {
            return Ok((f64::NEG_INFINITY, None, 0));
        }
        let sys = eig_dense(&b.m)?;
        let mut top = f64::NEG_INFINITY;
        let mut ac: Option<f64> = None;
        let mut skipped = 0;
        for i in 0..sys.len() {
            let z = sys.values[i];
            if let Some((cm, u)) = &exclude {
                let um = u.map(|x| x.conj());
                if *cm == m && (overlap(&sys.right[i], u) >= PAIR_OVERLAP
                    || overlap(&sys.right[i], &um) >= PAIR_OVERLAP)
                {
                    skipped += 1;
                    continue;
                }
            }
            top = top.max(z.re);
            if let Some(cut) = acoustic_cut {
                if z.im.abs() >= cut {
                    ac = Some(ac.map_or(z.re, |x: f64| x.max(z.re)));
                }
            }
        }
        Ok((top, ac, skipped))
    })?;
    let mut best = (f64::NEG_INFINITY, modes[0]);
    let mut ac: Option<f64> = None;
    let mut skipped = 0;
    let mut table = Vec::with_capacity(modes.len());
    for (&m, (top, a, s)) in modes.iter().zip(per_mode) {
        table.push((m, -top));
        if top > best.0 {
            best = (top, m);
        }
        if let Some(a) = a {
            ac = Some(ac.map_or(a, |x| x.max(a)));
        }
        skipped += s;
    }
    if best.0 >= 0.0 {
        return Err(Error::Rejected(format!(
            "basic state unstable off the critical pair: Re {} on mode ({}, {})",
            best.0, best.1.j, best.1.k
        )));
    }
    Ok((-best.0, best.1, ac, skipped, table))
}

/// Gap of the compressible spectrum at `(eps, r1)`. When `crit` is given
/// its pair is identified by eigenvector overlap and left out.
pub fn spectral_gap(
    p: &Params,
    trunc: &Truncation,
    eps: f64,
    r1: f64,
    crit: Option<&CriticalPoint>,
) -> Result<SpectralGap> {
    let modes = trunc.modes();
    let exclude = crit.map(|c| (c.mode, c.u_plus.clone()));
    let (kappa1, slowest_mode, ac, excluded, per_mode) =
        scan_gap(&modes, Operator::Ac { eps }, p, r1, exclude, Some(0.5 / eps))?;
    if crit.is_some() && excluded != 2 {
        return Err(Error::Singular("critical pair not identified by overlap"));
    }
    Ok(SpectralGap {
        eps: Some(eps),
        r1,
        kappa1,
        slowest_mode,
        acoustic_abscissa: ac,
        excluded,
        per_mode,
    })
}

/// Same for the incompressible blocks; `crit` is `(mode, u_plus)` on the
/// reduced components.
pub fn inc_spectral_gap(
    p: &Params,
    trunc: &Truncation,
    r1: f64,
    crit: Option<(Mode, CVec)>,
) -> Result<SpectralGap> {
    let modes = trunc.modes();
    let has = crit.is_some();
    let (kappa1, slowest_mode, _, excluded, per_mode) = scan_gap(&modes, Operator::Inc, p, r1, crit, None)?;
    if has && excluded != 2 {
        return Err(Error::Singular("critical pair not identified by overlap"));
    }
    Ok(SpectralGap {
        eps: None,
        r1,
        kappa1,
        slowest_mode,
        acoustic_abscissa: None,
        excluded,
        per_mode,
    })
}

/// `sqrt(min mu)` over the modes of the truncation.
pub fn poincare_constant(p: &Params, trunc: &Truncation) -> f64 {
    trunc
        .modes()
        .iter()
        .map(|m| m.mu(p.alpha))
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

/// Solve `(lambda - M) u = f` mode by mode.
pub fn resolve(p: &Params, eps: f64, r1: f64, lambda: C64, f: &Field) -> Result<Field> {
    let entries = par::try_map(&f.entries, |e| -> Result<ModeVector> {
        let b = assemble_mode(p, e.mode, Operator::Ac { eps }, r1)?;
        let n = b.dim();
        let a = CMat::identity(n, n) * lambda - &b.m;
        let x = solve(&a, &CVec::from_vec(e.coeffs.clone()))?;
        Ok(ModeVector {
            mode: e.mode,
            coeffs: x.iter().cloned().collect(),
        })
    })?;
    Ok(Field { entries })
}

/// Squared pieces of the norms used by the probes.
#[derive(Debug, Clone, Copy, Default)]
struct ProbeNorms {
    phi2: f64,
    grad_phi2: f64,
    /// Fluid part with the `1/Pr` weight on `w`.
    fluid2: f64,
    /// Plain `||w||^2` and `||grad w||^2`.
    w2: f64,
    grad_w2: f64,
}

fn probe_norms(p: &Params, f: &Field) -> ProbeNorms {
    let mut out = ProbeNorms::default();
    for e in &f.entries {
        let nu = e.mode.basis_norm(p.alpha);
        let mu = e.mode.mu(p.alpha);
        for (&c, z) in e.mode.components().iter().zip(&e.coeffs) {
            let s = nu * z.norm_sqr();
            match c {
                Component::Phi => {
                    out.phi2 += s;
                    out.grad_phi2 += mu * s;
                }
                Component::W1 | Component::W2 => {
                    out.fluid2 += s / p.pr;
                    out.w2 += s;
                    out.grad_w2 += mu * s;
                }
                _ => out.fluid2 += s,
            }
        }
    }
    out
}

/// `{eps^2 ||f||^2 + eps^4 ||grad f||^2 + ||F||^2}^{1/2}`.
pub fn x_norm(p: &Params, eps: f64, f: &Field) -> f64 {
    let n = probe_norms(p, f);
    let e2 = eps * eps;
    (e2 * n.phi2 + e2 * e2 * n.grad_phi2 + n.fluid2).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolventProbe {
    pub eps: f64,
    pub lambda: [f64; 2],
    /// `(eps ||phi|| + eps^2 ||grad phi||) / |||F|||_X`.
    pub ratio_phi: f64,
    /// `(1 + |lambda|) ||u|| / |||F|||_X`.
    pub ratio_u: f64,
    /// `((|gamma| + c_P) ||w|| + ||grad w||) / |||F|||_X` with
    /// `gamma = eps Im lambda`.
    pub ratio_high: f64,
}

pub fn probe(
    p: &Params,
    trunc: &Truncation,
    eps: f64,
    r1: f64,
    lambda: C64,
    f: &Field,
) -> Result<ResolventProbe> {
    let u = resolve(p, eps, r1, lambda, f)?;
    let fx = x_norm(p, eps, f);
    if fx == 0.0 {
        return Err(Error::InvalidParameter {
            name: "forcing",
            reason: "zero field".into(),
        });
    }
    let n = probe_norms(p, &u);
    let cp = poincare_constant(p, trunc);
    let gamma = eps * lambda.im;
    Ok(ResolventProbe {
        eps,
        lambda: [lambda.re, lambda.im],
        ratio_phi: (eps * n.phi2.sqrt() + eps * eps * n.grad_phi2.sqrt()) / fx,
        ratio_u: (1.0 + lambda.norm()) * n.fluid2.sqrt() / fx,
        ratio_high: ((gamma.abs() + cp) * n.w2.sqrt() + n.grad_w2.sqrt()) / fx,
    })
}

/// Probes on the line `lambda = re + i gamma / eps`.
pub fn resolvent_probe_highfreq(
    p: &Params,
    trunc: &Truncation,
    eps: f64,
    r1: f64,
    re: f64,
    gammas: &[f64],
    f: &Field,
) -> Result<Vec<ResolventProbe>> {
    gammas
        .iter()
        .map(|&g| probe(p, trunc, eps, r1, C64::new(re, g / eps), f))
        .collect()
}

/// Probes at bounded `lambda` with the forcing first projected off the
/// critical pair. Points with `|lambda| > c0 / eps` are rejected.
pub fn resolvent_probe_lowfreq(
    p: &Params,
    trunc: &Truncation,
    crit: &CriticalPoint,
    lambdas: &[C64],
    c0: f64,
    f: &Field,
) -> Result<Vec<ResolventProbe>> {
    let mut g = f.clone();
    crit.project_field(p, &mut g);
    lambdas
        .iter()
        .map(|&l| {
            if l.norm() > c0 / crit.eps {
                return Err(Error::Rejected(format!(
                    "|lambda| = {} exceeds {c0}/eps",
                    l.norm()
                )));
            }
            probe(p, trunc, crit.eps, crit.r1c, l, &g)
        })
        .collect()
}

/// Resolvent norms at `lambda = i a + delta` next to the critical pole,
/// with the forcing projected by `Q` and left as given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoleProbe {
    pub delta: f64,
    pub projected: f64,
    pub unprojected: f64,
}

pub fn resolvent_near_pole(
    p: &Params,
    crit: &CriticalPoint,
    deltas: &[f64],
    f: &Field,
) -> Result<Vec<PoleProbe>> {
    let mut g = f.clone();
    crit.project_field(p, &mut g);
    let fx = x_norm(p, crit.eps, f);
    let gx = x_norm(p, crit.eps, &g);
    deltas
        .iter()
        .map(|&d| {
            let l = C64::new(crit.abscissa + d, crit.a);
            let u = resolve(p, crit.eps, crit.r1c, l, f)?;
            let v = resolve(p, crit.eps, crit.r1c, l, &g)?;
            Ok(PoleProbe {
                delta: d,
                projected: probe_norms(p, &v).fluid2.sqrt() / gx,
                unprojected: probe_norms(p, &u).fluid2.sqrt() / fx,
            })
        })
        .collect()
}

/// Probe forcings: a unit field on the critical mode and one scalar mode,
/// and a dense random field with `1/(1 + mu)` decay.
pub fn probe_fields(trunc: &Truncation, alpha: f64, crit: Mode, seed: u64) -> Vec<Field> {
    let mut unit = Field::zeros(trunc);
    for e in &mut unit.entries {
        if e.mode == crit || e.mode == Mode::new(0, 1) {
            e.coeffs.iter_mut().for_each(|z| *z = C64::new(1.0, 0.0));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dense = Field::zeros(trunc);
    for e in &mut dense.entries {
        let s = 1.0 / (1.0 + e.mode.mu(alpha));
        for z in &mut e.coeffs {
            *z = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * s;
        }
    }
    vec![unit, dense]
}

/// Mode-wise `|||.|||_{eps,X1}` for a field.
pub fn x1_norm(p: &Params, eps: f64, f: &Field) -> f64 {
    f.entries
        .iter()
        .map(|e| {
            let m = mode_norms(p, eps, e);
            m.eps2 + eps * eps * m.grad2
        })
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn poincare_for_default_alpha() {
        let p = Params::new(2.0, 0.3, 10.0, PI / 2f64.sqrt()).unwrap();
        let c = poincare_constant(&p, &Truncation::default());
        assert!((c - PI / 2f64.sqrt()).abs() < 1e-14);
    }
}
