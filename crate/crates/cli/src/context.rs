//! Shared, lazily computed state of one run.

use std::sync::OnceLock;

use achopf_core::criticality::{critical_ac, critical_inc, CriticalPoint, IncCritical};
use achopf_core::dynamics::{energy_study, EpsStudy, StudyOptions};
use achopf_core::model::{Params, Truncation};
use achopf_core::periodic::HopfData;
use achopf_core::spectral_survey::{inc_spectral_gap, spectral_gap, SpectralGap};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{context}: {source}")]
    Module {
        context: String,
        source: achopf_core::Error,
    },
    #[error("writing outputs: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

pub trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T, CliError>;
}

impl<T> Context<T> for achopf_core::Result<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T, CliError> {
        self.map_err(|source| CliError::Module {
            context: what(),
            source,
        })
    }
}

pub struct Run {
    pub cfg: RunConfig,
    pub params: Params,
    pub trunc: Truncation,
    inc: OnceLock<IncCritical>,
    crits: OnceLock<Vec<CriticalPoint>>,
    hopf: OnceLock<Vec<HopfData>>,
    gaps: OnceLock<(SpectralGap, Vec<SpectralGap>)>,
    study: OnceLock<Vec<EpsStudy>>,
}

fn cached<'a, T>(cell: &'a OnceLock<T>, f: impl FnOnce() -> Result<T, CliError>) -> Result<&'a T, CliError> {
    if let Some(v) = cell.get() {
        return Ok(v);
    }
    let v = f()?;
    Ok(cell.get_or_init(|| v))
}

impl Run {
    pub fn new(cfg: RunConfig) -> Result<Self, CliError> {
        cfg.validate()?;
        let params = cfg.physical()?;
        let trunc = cfg.trunc();
        Ok(Self {
            cfg,
            params,
            trunc,
            inc: OnceLock::new(),
            crits: OnceLock::new(),
            hopf: OnceLock::new(),
            gaps: OnceLock::new(),
            study: OnceLock::new(),
        })
    }

    pub fn eps_grid(&self) -> &[f64] {
        &self.cfg.grid.eps
    }

    pub fn seed(&self) -> u64 {
        self.cfg.run.seed
    }

    pub fn harmonics(&self) -> usize {
        self.cfg.truncation.harmonics
    }

    pub fn inc(&self) -> Result<&IncCritical, CliError> {
        cached(&self.inc, || {
            critical_inc(&self.params, &self.trunc).context(|| "incompressible critical point".into())
        })
    }

    pub fn crits(&self) -> Result<&[CriticalPoint], CliError> {
        let inc = self.inc()?;
        cached(&self.crits, || {
            let opts = self.cfg.root_options();
            achopf_core::par::try_map(self.eps_grid(), |&eps| {
                critical_ac(&self.params, &self.trunc, eps, inc, &opts)
                    .context(|| format!("critical point at eps = {eps}"))
            })
        })
        .map(Vec::as_slice)
    }

    pub fn hopf(&self) -> Result<&[HopfData], CliError> {
        let inc = self.inc()?;
        let crits = self.crits()?;
        cached(&self.hopf, || {
            Ok(crits
                .iter()
                .map(|c| HopfData::new(self.params, self.trunc, inc, c.clone()))
                .collect())
        })
        .map(Vec::as_slice)
    }

    /// Incompressible gap and the gaps at every grid `eps`.
    pub fn gaps(&self) -> Result<&(SpectralGap, Vec<SpectralGap>), CliError> {
        let inc = self.inc()?;
        let crits = self.crits()?;
        cached(&self.gaps, || {
            let g0 = inc_spectral_gap(&self.params, &self.trunc, inc.r1c, Some((inc.mode, inc.u_plus.clone())))
                .context(|| "incompressible spectral gap".into())?;
            let gs = achopf_core::par::try_map(crits, |c| {
                spectral_gap(&self.params, &self.trunc, c.eps, c.r1c, Some(c))
                    .context(|| format!("spectral gap at eps = {}", c.eps))
            })?;
            Ok((g0, gs))
        })
    }

    pub fn study(&self) -> Result<&[EpsStudy], CliError> {
        let inc = self.inc()?;
        let crits = self.crits()?;
        cached(&self.study, || {
            let opts = StudyOptions {
                seed: self.seed(),
                trajectories: self.cfg.energy.trajectories,
                trajectory_samples: self.cfg.energy.samples,
                ..StudyOptions::default()
            };
            energy_study(&self.params, &self.trunc, inc, crits, &opts).context(|| "energy study".into())
        })
        .map(Vec::as_slice)
    }
}
