//! The auxiliary Stokes system `div v = f`, `-Lap v + grad p = g`, one
//! Fourier mode at a time.
//!
//! On a full mode the system is `a v1 + b v2 = f`, `mu v1 - a p = g1`,
//! `mu v2 - b p = g2`, with `a = alpha j`, `b = pi k`, `mu = a^2 + b^2`.
//! Per-mode norms carry the basis norm; the H^{-1} norm is the L2 norm
//! divided by `sqrt(mu)`.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{solve, CMat, CVec, C64, ONE, ZERO};
use crate::model::{Mode, ModeKind};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StokesSolution {
    pub mode: Mode,
    pub p: C64,
    pub v1: C64,
    pub v2: C64,
    /// Largest equation residual relative to the data size.
    pub residual: f64,
    /// `(|p| + |grad v|) / (|f| + |g|_{H^-1})`.
    pub r1: f64,
    /// `(|grad p| + |grad^2 v|) / (|f|_{H^1} + |g|)`.
    pub r2: f64,
}

fn system(mode: Mode, alpha: f64) -> CMat {
    let a = C64::new(mode.a(alpha), 0.0);
    let b = C64::new(mode.b(), 0.0);
    let mu = C64::new(mode.mu(alpha), 0.0);
    // Unknowns (p, v1, v2).
    CMat::from_row_slice(3, 3, &[ZERO, a, b, -a, mu, ZERO, -b, ZERO, mu])
}

pub fn solve_stokes_mode(mode: Mode, alpha: f64, f: C64, g: [C64; 2]) -> Result<StokesSolution> {
    if mode.kind() != ModeKind::Full {
        return Err(Error::InvalidParameter {
            name: "mode",
            reason: format!("({}, {}) is not a full mode", mode.j, mode.k),
        });
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidParameter {
            name: "alpha",
            reason: "must be positive".into(),
        });
    }
    let m = system(mode, alpha);
    let rhs = CVec::from_vec(vec![f, g[0], g[1]]);
    let x = solve(&m, &rhs)?;
    let r = &m * &x - &rhs;
    let data = f.norm().max(g[0].norm()).max(g[1].norm());
    let residual = r.iter().fold(0.0, |acc: f64, z| acc.max(z.norm())) / if data == 0.0 { 1.0 } else { data };

    let nu = mode.basis_norm(alpha).sqrt();
    let mu = mode.mu(alpha);
    let (p, v) = (x[0].norm(), x[1].norm_sqr() + x[2].norm_sqr());
    let v = v.sqrt();
    let gn = (g[0].norm_sqr() + g[1].norm_sqr()).sqrt();
    let fn_ = f.norm();
    let ratio = |num: f64, den: f64| if den == 0.0 { 0.0 } else { num / den };
    let r1 = ratio(nu * (p + mu.sqrt() * v), nu * (fn_ + gn / mu.sqrt()));
    let r2 = ratio(nu * (mu.sqrt() * p + mu * v), nu * ((1.0 + mu).sqrt() * fn_ + gn));
    Ok(StokesSolution {
        mode,
        p: x[0],
        v1: x[1],
        v2: x[2],
        residual,
        r1,
        r2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StokesSweep {
    pub modes: usize,
    pub max_residual: f64,
    pub max_r1: f64,
    pub max_r2: f64,
    /// Largest ratios over the data families: random, gradient,
    /// solenoidal and divergence-only.
    pub worst_r1_mode: Mode,
    pub worst_r2_mode: Mode,
}

/// Solve every full mode with `j, k <= n_max` for seeded random data and
/// for the pure gradient, solenoidal and divergence data.
pub fn stokes_sweep(alpha: f64, n_max: u32, seed: u64) -> Result<StokesSweep> {
    let modes: Vec<Mode> = (1..=n_max).flat_map(|j| (1..=n_max).map(move |k| Mode::new(j, k))).collect();
    let per_mode = par::try_map(&modes, |&mode| -> Result<Vec<StokesSolution>> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ ((mode.j as u64) << 32 | mode.k as u64));
        let mut c = || C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let (a, b) = (mode.a(alpha), mode.b());
        let data = [
            (c(), [c(), c()]),
            (ZERO, [ONE * -a, ONE * -b]),
            (ZERO, [ONE * -b, ONE * a]),
            (ONE, [ZERO, ZERO]),
        ];
        data.iter().map(|&(f, g)| solve_stokes_mode(mode, alpha, f, g)).collect()
    })?;
    let mut out = StokesSweep {
        modes: modes.len(),
        max_residual: 0.0,
        max_r1: 0.0,
        max_r2: 0.0,
        worst_r1_mode: modes[0],
        worst_r2_mode: modes[0],
    };
    for s in per_mode.into_iter().flatten() {
        out.max_residual = out.max_residual.max(s.residual);
        if s.r1 > out.max_r1 {
            out.max_r1 = s.r1;
            out.worst_r1_mode = s.mode;
        }
        if s.r2 > out.max_r2 {
            out.max_r2 = s.r2;
            out.worst_r2_mode = s.mode;
        }
    }
    Ok(out)
}
