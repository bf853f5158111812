//! Per-command config documents (TOML, unknown keys rejected) and the
//! config echo written next to every output.

use std::path::Path;

use chreode::evaluator::EvalConfig;
use chreode::landscape::{Landscape, LandscapeKind};
use chreode::trainer::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Name of the echo file in every output directory.
pub const ECHO_FILE: &str = "config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClonesConfig {
    pub t_source: f64,
    pub t_end: f64,
    pub n_clones: usize,
    pub daughters: usize,
}

impl Default for ClonesConfig {
    fn default() -> Self {
        Self {
            t_source: 0.5,
            t_end: 1.5,
            n_clones: 200,
            daughters: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub landscape: LandscapeKind,
    pub dim: usize,
    pub times: Vec<f64>,
    pub cells: usize,
    pub seed: u64,
    /// Overrides of the landscape defaults.
    pub omega: Option<f64>,
    pub sigma: Option<f64>,
    pub dt: Option<f64>,
    /// Also write a clone benchmark when set.
    pub clones: Option<ClonesConfig>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            landscape: LandscapeKind::WellPlusRotation,
            dim: 8,
            times: vec![0.0, 0.5, 1.0, 1.5],
            cells: 2000,
            seed: 0,
            omega: None,
            sigma: None,
            dt: None,
            clones: None,
        }
    }
}

impl SimulateConfig {
    pub fn landscape(&self) -> Result<Landscape, CliError> {
        let mut l = Landscape::new(self.landscape, self.dim);
        if let Some(w) = self.omega {
            l.omega = w;
        }
        if let Some(s) = self.sigma {
            l.sigma = vec![s; self.dim];
        }
        if let Some(dt) = self.dt {
            l.dt = dt;
        }
        l.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(l)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.cells == 0 {
            return Err(CliError::Config("cells must be at least 1; refusing to write empty snapshots".into()));
        }
        if self.times.len() < 2 {
            return Err(CliError::Config("times must list at least two timepoints".into()));
        }
        if self.times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(CliError::Config("times must be strictly increasing".into()));
        }
        if let Some(c) = &self.clones {
            if c.n_clones == 0 || c.daughters == 0 {
                return Err(CliError::Config("clone benchmark needs clones and daughters".into()));
            }
        }
        self.landscape().map(|_| ())
    }
}

/// Training and evaluation settings shared by every ablation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateConfig {
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Training seeds per variant.
    pub seeds: usize,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            eval: EvalConfig {
                seeds: 1,
                ..EvalConfig::default()
            },
            seeds: 3,
        }
    }
}

/// Reads `path` into `T`, or returns `default` when no path is given.
pub fn load<T: DeserializeOwned>(path: Option<&Path>, default: T) -> Result<T, CliError> {
    let Some(p) = path else { return Ok(default) };
    let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
}

/// The effective config as TOML, headed by the command that produced it.
pub fn echo<T: Serialize>(cfg: &T, command: &str) -> Result<String, CliError> {
    let body = toml::to_string(cfg).map_err(|e| CliError::Config(format!("config does not serialize: {e}")))?;
    Ok(format!("# {command}\n{body}"))
}
