use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tempdistill_core::distill::{DistillConfig, DistillSettings};
use tempdistill_core::scene::SensorConfig;
use tempdistill_core::Error as CoreError;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Cosine annealing from `lr` to 0 over all steps.
    pub cosine: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { lr: 2e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01, cosine: true }
    }
}

impl OptimizerConfig {
    fn validate(&self, name: &str) -> Result<()> {
        let bad = |what: &str| Err(HarnessError::Config(format!("{name}.{what}")));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return bad("eps must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be finite and >= 0");
        }
        Ok(())
    }
}

/// The on-disk document. Every key is optional; unknown keys are errors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub seed: Option<u64>,
    pub data_seed: Option<u64>,
    pub epochs: Option<usize>,
    pub teacher_epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub train_scenes: Option<usize>,
    pub heldout_scenes: Option<usize>,
    pub objects: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub distill: DistillSettings,
    pub optimizer: OptimizerConfig,
    pub teacher_optimizer: Option<OptimizerConfig>,
    pub sensor: SensorConfig,
}

/// Validated training configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    /// Seeds model initialization, batch order and masks.
    pub seed: u64,
    /// Seeds scene generation.
    pub data_seed: u64,
    pub epochs: usize,
    pub teacher_epochs: usize,
    pub batch_size: usize,
    pub train_scenes: usize,
    pub heldout_scenes: usize,
    pub objects: usize,
    pub output_dir: Option<PathBuf>,
    pub distill: DistillConfig,
    pub optimizer: OptimizerConfig,
    pub teacher_optimizer: OptimizerConfig,
    pub sensor: SensorConfig,
    #[serde(skip)]
    settings: TrainSettings,
}

fn config_err(e: CoreError) -> HarnessError {
    HarnessError::Config(e.to_string())
}

impl TrainConfig {
    pub fn from_settings(settings: TrainSettings) -> Result<Self> {
        let seed = settings.seed.or(settings.distill.seed).unwrap_or(7);
        let mut distill = settings.distill.clone();
        distill.seed = Some(seed);
        let distill = DistillConfig::new(&distill).map_err(config_err)?;
        let side = (distill.queries() as f64).sqrt().round() as usize;
        if side * side != distill.queries() {
            return Err(HarnessError::Config(format!("queries must be a perfect square, got {}", distill.queries())));
        }
        let cfg = TrainConfig {
            seed,
            data_seed: settings.data_seed.unwrap_or(1000),
            epochs: settings.epochs.unwrap_or(150),
            teacher_epochs: settings.teacher_epochs.unwrap_or(300),
            batch_size: settings.batch_size.unwrap_or(8),
            train_scenes: settings.train_scenes.unwrap_or(64),
            heldout_scenes: settings.heldout_scenes.unwrap_or(16),
            objects: settings.objects.unwrap_or(6),
            output_dir: settings.output_dir.clone(),
            distill,
            optimizer: settings.optimizer,
            teacher_optimizer: settings.teacher_optimizer.unwrap_or(settings.optimizer),
            sensor: settings.sensor,
            settings,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.teacher_epochs == 0 {
            return Err(HarnessError::Config("epochs and teacher_epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(HarnessError::Config("batch_size must be >= 1".into()));
        }
        if self.train_scenes == 0 || self.heldout_scenes == 0 || self.objects == 0 {
            return Err(HarnessError::Config("train_scenes, heldout_scenes and objects must be >= 1".into()));
        }
        if !(self.sensor.sigma > 0.0 && self.sensor.noise >= 0.0) {
            return Err(HarnessError::Config("sensor.sigma must be positive and sensor.noise >= 0".into()));
        }
        self.optimizer.validate("optimizer")?;
        self.teacher_optimizer.validate("teacher_optimizer")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let settings: TrainSettings = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        TrainConfig::from_settings(settings)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        TrainConfig::parse(&text)
    }

    /// The document this config was built from, with resolved seeds.
    pub fn settings(&self) -> &TrainSettings {
        &self.settings
    }

    /// Rebuilds the config after editing its settings; the edit is
    /// validated like a fresh document.
    pub fn modified(&self, edit: impl FnOnce(&mut TrainSettings)) -> Result<Self> {
        let mut s = self.settings.clone();
        s.seed = Some(self.seed);
        s.distill.seed = None;
        edit(&mut s);
        TrainConfig::from_settings(s)
    }

    pub fn with_seed(&self, seed: u64) -> Result<Self> {
        self.modified(|s| s.seed = Some(seed))
    }

    /// Settings that match the teacher this config trains; runs whose keys
    /// agree can share one teacher.
    pub fn teacher_key(&self) -> String {
        let d = &self.distill;
        format!(
            "{}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{:?}|{:?}",
            self.seed,
            self.data_seed,
            self.teacher_epochs,
            self.batch_size,
            self.train_scenes,
            self.heldout_scenes,
            self.objects,
            d.teacher_frames(),
            d.queries(),
            d.channels(),
            (d.height(), d.width()),
            (self.teacher_optimizer, self.sensor),
        )
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::from_settings(TrainSettings::default()).expect("defaults are valid")
    }
}
