//! Run configuration: flat `section.key = value` lines, read with the
//! TOML parser. Only the physical parameters are required.

use std::path::{Path, PathBuf};

use achopf_core::model::{Params, Truncation};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing key {0}")]
    Missing(&'static str),
    #[error("invalid value for {key}: {reason}")]
    Invalid { key: &'static str, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    pub pr: f64,
    pub d: f64,
    pub r2: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub eps: Vec<f64>,
    pub omega: Vec<f64>,
    /// Half-width of the eta grid as a fraction of `R1c`.
    pub eta_frac: f64,
    /// Points on each side of `eta = 0`.
    pub eta_points: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            eps: achopf_core::criticality::default_rate_grid(),
            omega: achopf_core::periodic::omega_grid(),
            eta_frac: 0.05,
            eta_points: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruncationSection {
    pub j_max: u32,
    pub k_max: u32,
    /// Time harmonics `-M..M` of periodic fields.
    pub harmonics: usize,
}

impl Default for TruncationSection {
    fn default() -> Self {
        Self {
            j_max: 16,
            k_max: 16,
            harmonics: achopf_core::periodic::DEFAULT_HARMONICS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToleranceSection {
    /// Root-finder tolerance on the spectral abscissa.
    pub root: f64,
    /// Initial root bracket half-width relative to the incompressible `R1c`.
    pub bracket: f64,
    pub max_iter: usize,
}

impl Default for ToleranceSection {
    fn default() -> Self {
        let o = achopf_core::criticality::RootOptions::default();
        Self {
            root: o.tol,
            bracket: o.rel_bracket,
            max_iter: o.max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSection {
    /// Exclusion radius around the unit multiplier.
    pub r: f64,
    /// Low-frequency region `|lambda| <= c0 / eps`.
    pub c0: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub gamma_points: usize,
}

impl Default for ProbeSection {
    fn default() -> Self {
        Self {
            r: 0.1,
            c0: 1.0,
            gamma_min: 1.0,
            gamma_max: 100.0,
            gamma_points: 41,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergySection {
    /// Calibration trajectories per `eps`.
    pub trajectories: usize,
    /// Samples per trajectory. The minimal constants are sups over these
    /// samples and are converged to about 1% from 513 on.
    pub samples: usize,
}

impl Default for EnergySection {
    fn default() -> Self {
        Self {
            trajectories: 3,
            samples: 513,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub params: ParamsSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub truncation: TruncationSection,
    #[serde(default)]
    pub tolerances: ToleranceSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub probe: ProbeSection,
    #[serde(default)]
    pub energy: EnergySection,
}

const REQUIRED: [(&str, &str, &str); 4] = [
    ("params", "pr", "params.pr"),
    ("params", "d", "params.d"),
    ("params", "r2", "params.r2"),
    ("params", "alpha", "params.alpha"),
];

fn line_of(text: &str, e: &toml::de::Error) -> usize {
    e.span().map_or(0, |s| text[..s.start].matches('\n').count() + 1)
}

fn parse_error(text: &str, e: toml::de::Error) -> ConfigError {
    ConfigError::Parse {
        line: line_of(text, &e),
        message: e.message().trim().to_string(),
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = toml::from_str(text).map_err(|e| parse_error(text, e))?;
        for (section, key, full) in REQUIRED {
            let present = table
                .get(section)
                .and_then(|s| s.as_table())
                .is_some_and(|s| s.contains_key(key));
            if !present {
                return Err(ConfigError::Missing(full));
            }
        }
        let cfg: RunConfig = toml::from_str(text).map_err(|e| parse_error(text, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key, reason: &str| {
            Err(ConfigError::Invalid {
                key,
                reason: reason.to_string(),
            })
        };
        self.physical()?;
        let g = &self.grid;
        if g.eps.is_empty() {
            return bad("grid.eps", "must be non-empty");
        }
        if g.eps.iter().any(|&e| !(e > 0.0 && e <= 0.2)) {
            return bad("grid.eps", "entries must lie in (0, 0.2]");
        }
        if g.omega.is_empty() {
            return bad("grid.omega", "must be non-empty");
        }
        if g.omega.iter().any(|w| !(w.abs() <= 0.25)) {
            return bad("grid.omega", "entries must satisfy |omega| <= 1/4");
        }
        if !(g.eta_frac > 0.0 && g.eta_frac < 1.0) {
            return bad("grid.eta_frac", "must lie in (0, 1)");
        }
        if g.eta_points == 0 {
            return bad("grid.eta_points", "must be positive");
        }
        let t = &self.truncation;
        if t.j_max < 2 || t.k_max < 2 {
            return bad("truncation", "j_max and k_max must be at least 2");
        }
        if t.harmonics == 0 {
            return bad("truncation.harmonics", "must be positive");
        }
        let tol = &self.tolerances;
        if !(tol.root > 0.0) {
            return bad("tolerances.root", "must be positive");
        }
        if !(tol.bracket > 0.0 && tol.bracket < 1.0) {
            return bad("tolerances.bracket", "must lie in (0, 1)");
        }
        if tol.max_iter == 0 {
            return bad("tolerances.max_iter", "must be positive");
        }
        let p = &self.probe;
        if !(p.r > 0.0) {
            return bad("probe.r", "must be positive");
        }
        if !(p.c0 > 0.0) {
            return bad("probe.c0", "must be positive");
        }
        if !(p.gamma_min > 0.0 && p.gamma_max > p.gamma_min) {
            return bad("probe.gamma_min", "need 0 < gamma_min < gamma_max");
        }
        if p.gamma_points < 3 {
            return bad("probe.gamma_points", "must be at least 3");
        }
        if self.energy.trajectories == 0 {
            return bad("energy.trajectories", "must be positive");
        }
        if self.energy.samples < 3 {
            return bad("energy.samples", "must be at least 3");
        }
        Ok(())
    }

    pub fn physical(&self) -> Result<Params, ConfigError> {
        let s = &self.params;
        Params::new(s.pr, s.d, s.r2, s.alpha).map_err(|e| ConfigError::Invalid {
            key: match e {
                achopf_core::Error::InvalidParameter { name: "Pr", .. } => "params.pr",
                achopf_core::Error::InvalidParameter { name: "d", .. } => "params.d",
                achopf_core::Error::InvalidParameter { name: "R2", .. } => "params.r2",
                _ => "params.alpha",
            },
            reason: e.to_string(),
        })
    }

    pub fn trunc(&self) -> Truncation {
        Truncation {
            j_max: self.truncation.j_max,
            k_max: self.truncation.k_max,
        }
    }

    pub fn root_options(&self) -> achopf_core::criticality::RootOptions {
        achopf_core::criticality::RootOptions {
            rel_bracket: self.tolerances.bracket,
            tol: self.tolerances.root,
            max_iter: self.tolerances.max_iter,
        }
    }

    /// Log-spaced `gamma` samples of the high-frequency probe.
    pub fn gammas(&self) -> Vec<f64> {
        let p = &self.probe;
        let n = p.gamma_points - 1;
        let (lo, hi) = (p.gamma_min.ln(), p.gamma_max.ln());
        (0..=n).map(|i| (lo + (hi - lo) * i as f64 / n as f64).exp()).collect()
    }
}
