//! Experiment configuration, parsed from TOML.
//!
//! Every table rejects unknown keys. Omitted keys take their defaults, and
//! [`ExperimentConfig::effective_toml`] renders the fully defaulted document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kfac::{KfacConfig, KronMode};
use crate::samplers::{SamplerKind, Schedule};

/// Environment variable that overrides `data.root`.
pub const DATA_ROOT_ENV: &str = "LANGEVIN_DATA_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub sampler: SamplerConfig,
    /// When non-empty, `run` trains one sampler per entry in `output_dir/<KIND>`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub suite: Vec<SamplerConfig>,
    #[serde(default)]
    pub training: TrainingConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub kfac: KfacConfig,
    #[serde(default)]
    pub rmsprop: RmspropConfig,
    #[serde(default)]
    pub snapshots: SnapshotConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    /// Noise variance multiplier `κ`.
    #[serde(default = "one")]
    pub noise_multiplier: f64,
    /// Which power of the K-FAC inverse transforms KSGLD noise.
    #[serde(default = "default_ksgld_noise")]
    pub ksgld_noise: KronMode,
}

fn default_schedule() -> Schedule {
    Schedule::Polynomial {
        a: 1e-5,
        b: 1000.0,
        gamma: 0.55,
    }
}

fn one() -> f64 {
    1.0
}

fn default_ksgld_noise() -> KronMode {
    KronMode::Inverse
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub epochs: u64,
    /// Gaussian prior precision `τ`.
    pub prior_precision: f64,
    /// Steps between checkpoints; 0 checkpoints only at epoch ends.
    pub checkpoint_every: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 512,
            epochs: 10,
            prior_precision: 1e-4,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Base directory for relative IDX paths.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
    /// Keep a seeded random subset of this many training examples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncate: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idx: Option<IdxPaths>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ood_images: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub train: usize,
    pub test: usize,
    #[serde(default)]
    pub ood: usize,
    #[serde(default = "ten")]
    pub classes: usize,
    #[serde(default = "default_side")]
    pub side: usize,
    /// Template seed of the in-distribution data.
    #[serde(default)]
    pub data_seed: u64,
    /// Template seed of the OOD data.
    #[serde(default = "default_ood_seed")]
    pub ood_seed: u64,
}

fn ten() -> usize {
    10
}

fn default_side() -> usize {
    28
}

fn default_ood_seed() -> u64 {
    1_000_003
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// `[conv1 channels, conv2 channels, hidden units]`
    pub widths: [usize; 3],
    pub kernel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            widths: [32, 64, 1024],
            kernel: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RmspropConfig {
    pub alpha: f64,
    pub eps: f64,
}

impl Default for RmspropConfig {
    fn default() -> Self {
        Self {
            alpha: 0.99,
            eps: 1e-5,
        }
    }
}

/// Which parameters evaluation averages over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnsembleMode {
    /// Final weights for SGD, snapshots for every other kind.
    Auto,
    Snapshots,
    Final,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SnapshotConfig {
    pub every: u64,
    pub max: usize,
    /// Fraction of all steps before the first snapshot.
    pub burn_in: f64,
    pub mode: EnsembleMode,
}

impl Default for SnapshotConfig {
    fn default() -> Self {
        Self {
            every: 50,
            max: 20,
            burn_in: 0.5,
            mode: EnsembleMode::Auto,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    pub stride: u64,
    pub tracked: usize,
    pub burn_in: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            stride: 10,
            tracked: 512,
            burn_in: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub fgsm_epsilon: f64,
    pub adversarial: bool,
    pub ood: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            fgsm_epsilon: 0.25,
            adversarial: true,
            ood: true,
        }
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    parse_config(&std::fs::read_to_string(path)?)
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule
            .validate()
            .map_err(|e| Error::Config(format!("sampler.schedule: {e}")))?;
        check(self.noise_multiplier > 0.0 && self.noise_multiplier.is_finite(), || {
            format!("sampler.noise_multiplier must be > 0, got {}", self.noise_multiplier)
        })
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        for s in &self.suite {
            s.validate()?;
        }
        let t = &self.training;
        check(t.batch_size > 0, || "training.batch_size must be > 0".into())?;
        check(t.epochs > 0, || "training.epochs must be > 0".into())?;
        check(t.prior_precision >= 0.0 && t.prior_precision.is_finite(), || {
            format!("training.prior_precision must be >= 0, got {}", t.prior_precision)
        })?;
        check(
            self.data.idx.is_some() != self.data.synthetic.is_some(),
            || "data needs exactly one of [data.idx] or [data.synthetic]".into(),
        )?;
        if let Some(s) = &self.data.synthetic {
            check(s.train > 0 && s.test > 0 && s.classes > 1 && s.side >= 4, || {
                "data.synthetic needs train, test > 0, classes > 1 and side >= 4".into()
            })?;
        }
        check(self.data.truncate != Some(0), || "data.truncate must be > 0".into())?;
        check(self.model.widths.iter().all(|&w| w > 0), || {
            "model.widths must be positive".into()
        })?;
        check(self.model.kernel % 2 == 1, || "model.kernel must be odd".into())?;
        self.kfac
            .validate()
            .map_err(|e| Error::Config(format!("kfac: {e}")))?;
        let r = &self.rmsprop;
        check((0.0..1.0).contains(&r.alpha) && r.eps > 0.0, || {
            "rmsprop needs alpha in [0, 1) and eps > 0".into()
        })?;
        let s = &self.snapshots;
        check(s.every > 0 && s.max > 0 && (0.0..1.0).contains(&s.burn_in), || {
            "snapshots need every > 0, max > 0 and burn_in in [0, 1)".into()
        })?;
        let d = &self.diagnostics;
        check(d.stride > 0 && d.tracked > 0 && (0.0..1.0).contains(&d.burn_in), || {
            "diagnostics need stride > 0, tracked > 0 and burn_in in [0, 1)".into()
        })?;
        check(self.eval.fgsm_epsilon >= 0.0, || "eval.fgsm_epsilon must be >= 0".into())
    }

    /// The data root after applying the environment override.
    pub fn data_root(&self) -> Option<PathBuf> {
        std::env::var_os(DATA_ROOT_ENV)
            .map(PathBuf::from)
            .or_else(|| self.data.root.clone())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        match self.data_root() {
            Some(root) if path.is_relative() => root.join(path),
            _ => path.to_path_buf(),
        }
    }

    /// Every IDX path the run will open, after resolution.
    pub fn input_paths(&self) -> Vec<PathBuf> {
        let Some(idx) = &self.data.idx else {
            return Vec::new();
        };
        let mut v = vec![
            &idx.train_images,
            &idx.train_labels,
            &idx.test_images,
            &idx.test_labels,
        ];
        v.extend(idx.ood_images.as_ref());
        v.into_iter().map(|p| self.resolve(p)).collect()
    }

    /// Fails with the first referenced input that does not exist.
    pub fn check_inputs(&self) -> Result<()> {
        match self.input_paths().into_iter().find(|p| !p.exists()) {
            Some(p) => Err(Error::MissingInput(p)),
            None => Ok(()),
        }
    }

    /// The configuration of a single suite member.
    pub fn for_sampler(&self, sampler: SamplerConfig) -> ExperimentConfig {
        let mut c = self.clone();
        c.output_dir = self.output_dir.join(sampler.kind.name());
        c.sampler = sampler;
        c.suite.clear();
        c
    }

    pub fn effective_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
