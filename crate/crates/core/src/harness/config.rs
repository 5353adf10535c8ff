//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::compander::{CompanderFamily, CompanderSpec, GridSpec};
use crate::error::{Error, Result};
use crate::estimators::Method;
use crate::objectives::{Objective, ObjectiveSpec};
use crate::optim::{AdamConfig, Mode, OptimizerConfig, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompanderCell {
    pub family: CompanderFamily,
    pub bits: u32,
    /// Defaults to the family's standard strength.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strength: Option<f64>,
}

impl CompanderCell {
    pub fn strength(&self) -> f64 {
        self.strength
            .unwrap_or_else(|| self.family.default_strength())
    }

    /// Short label used in file names and CSV rows, e.g. `mu_law`.
    pub fn label(&self) -> String {
        self.family.name().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    #[serde(default = "default_probes")]
    pub n_probes: usize,
    /// Methods to probe; defaults to the experiment's methods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub methods: Option<Vec<Method>>,
    /// Radius override for the probes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            n_probes: default_probes(),
            methods: None,
            mu: None,
        }
    }
}

fn default_probes() -> usize {
    32
}
fn default_mode() -> Mode {
    Mode::FpMasterAdam
}
fn default_k() -> usize {
    4
}
fn default_mu() -> f64 {
    1e-3
}
fn default_clip_norm() -> f64 {
    1.0
}
fn default_recalib() -> usize {
    100
}
fn default_block() -> usize {
    64
}
fn default_stride() -> usize {
    1
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub objectives: Vec<Objective>,
    pub companders: Vec<CompanderCell>,
    pub methods: Vec<Method>,
    pub d: usize,
    #[serde(alias = "K", default = "default_k")]
    pub k: usize,
    #[serde(alias = "T")]
    pub steps: usize,
    pub eta: f64,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default)]
    pub sigma: f64,
    pub seeds: Vec<u64>,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "default_clip_norm")]
    pub clip_norm: f64,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default = "default_recalib")]
    pub recalib_period: usize,
    #[serde(default = "default_block")]
    pub block_size: usize,
    #[serde(default = "default_stride")]
    pub log_stride: usize,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub probes: ProbeConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate().map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.experiment_id.is_empty() {
            return bad("experiment_id must not be empty");
        }
        if self.objectives.is_empty() || self.companders.is_empty() || self.methods.is_empty() {
            return bad("objectives, companders and methods must be non-empty");
        }
        if self.seeds.is_empty() {
            return bad("seeds must be non-empty");
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return bad("sigma must be non-negative");
        }
        if self.probes.n_probes == 0 {
            return bad("probes.n_probes must be at least 1");
        }
        if let Some(mu) = self.probes.mu {
            if !(mu.is_finite() && mu > 0.0) {
                return bad("probes.mu must be positive");
            }
        }
        ObjectiveSpec::new(Objective::Quadratic, self.d)?;
        for c in &self.companders {
            let spec = CompanderSpec::new(c.family, c.strength(), 1.0)?;
            GridSpec::for_compander(&spec, c.bits)?;
            if self.methods.contains(&Method::Caq) && c.bits < 2 {
                return bad("caq needs at least 2 bits");
            }
        }
        for &m in &self.methods {
            self.optimizer(m).validate()?;
        }
        Ok(())
    }

    pub fn optimizer(&self, method: Method) -> OptimizerConfig {
        OptimizerConfig {
            method,
            mode: self.mode,
            eta: self.eta,
            k: self.k,
            mu: self.mu,
            steps: self.steps,
            clip_norm: self.clip_norm,
            adam: self.adam,
            recalib_period: self.recalib_period,
            block_size: self.block_size,
            log_stride: self.log_stride,
        }
    }

    pub fn problem(&self, objective: Objective, cell: &CompanderCell) -> Result<Problem> {
        Ok(Problem {
            objective: ObjectiveSpec::new(objective, self.d)?,
            noise_std: self.sigma,
            family: cell.family,
            strength: cell.strength(),
            bits: cell.bits,
        })
    }

    /// Hex SHA-256 of the canonical JSON form, truncated to 16 characters.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))[..16].to_string()
    }

    /// Seeds after applying `offset`.
    pub fn shifted_seeds(&self, offset: u64) -> Vec<u64> {
        self.seeds.iter().map(|s| s.wrapping_add(offset)).collect()
    }
}
