//! Run configuration (TOML). Unknown keys are rejected at every level.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use splatsem_core::augment::{AugmentationTable, CropBand};
use splatsem_core::ply::Activation;

use crate::error::{LearnError, Result};
use crate::network::NetworkSpec;
use crate::objectives::LossWeights;
use crate::optim::{AdamWConfig, OneCycle};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: NetworkSpec,
    pub optim: OptimConfig,
    pub loss: LossWeights,
    pub schedule: ScheduleConfig,
    pub ssl: SslConfig,
    pub crop: CropConfig,
    pub augment: AugmentConfig,
    pub autoencoder: AutoencoderConfig,
    pub data: DataConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    /// Peak learning rate of the one-cycle schedule.
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub pct_start: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        let a = AdamWConfig::default();
        let s = OneCycle::default();
        Self {
            lr: s.max_lr,
            weight_decay: a.weight_decay,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            pct_start: s.pct_start,
            div_factor: s.div_factor,
            final_div_factor: s.final_div_factor,
        }
    }
}

impl OptimConfig {
    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn schedule(&self) -> OneCycle {
        OneCycle {
            max_lr: self.lr,
            pct_start: self.pct_start,
            div_factor: self.div_factor,
            final_div_factor: self.final_div_factor,
        }
    }

    fn validate(&self) -> Result<()> {
        self.schedule().validate()?;
        if !(self.weight_decay >= 0.0) {
            return Err(LearnError::Config("optim.weight_decay must be non-negative".into()));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(LearnError::Config("optim betas must be in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(LearnError::Config("optim.eps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    /// One epoch is one crop per scene.
    pub epochs: u64,
    /// Steps between checkpoints; 0 disables intermediate checkpoints.
    pub checkpoint_every: u64,
    /// Depth of the view-construction queue.
    pub prefetch: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            checkpoint_every: 500,
            prefetch: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SslConfig {
    pub mgm: bool,
    pub dino: bool,
    pub ibot: bool,
    pub la: bool,
    pub n_global: usize,
    pub n_local: usize,
    pub mgm_ratio: f64,
    /// Mask ratio band for the self-distillation token objective.
    pub ibot_ratio: [f64; 2],
    pub masked_global_fraction: f64,
    pub teacher_momentum: f64,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self {
            mgm: true,
            dino: true,
            ibot: true,
            la: false,
            n_global: 2,
            n_local: 3,
            mgm_ratio: 0.6,
            ibot_ratio: [0.2, 0.7],
            masked_global_fraction: 0.5,
            teacher_momentum: 0.996,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CropConfig {
    pub grid_size: f64,
    pub global: CropBand,
    pub local: CropBand,
}

impl Default for CropConfig {
    fn default() -> Self {
        Self {
            grid_size: 0.05,
            global: CropBand { ratio: [0.4, 1.0], cap: 4096 },
            local: CropBand { ratio: [0.1, 0.4], cap: 1024 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Replaces the standard recipe when present.
    pub table: Option<AugmentationTable>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { enabled: true, table: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoencoderConfig {
    pub encoder: Vec<usize>,
    pub decoder: Vec<usize>,
    pub epochs: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub holdout_fraction: f64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            encoder: vec![768, 384, 192, 96, 48, 16],
            decoder: vec![16, 48, 96, 192, 384, 768],
            epochs: 100,
            lr: 1e-3,
            weight_decay: 0.0,
            batch_size: 256,
            holdout_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub scenes: Vec<SceneEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneEntry {
    /// Defaults to the PLY file stem.
    #[serde(default)]
    pub id: Option<String>,
    pub ply: PathBuf,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    /// Lifted feature field (SSFF).
    #[serde(default)]
    pub features: Option<PathBuf>,
    /// Labeled points (SSPT); each Gaussian takes the label of its nearest point.
    #[serde(default)]
    pub labels: Option<PathBuf>,
    /// Autoencoder-compressed feature field (SSFF).
    #[serde(default)]
    pub compressed: Option<PathBuf>,
}

fn default_activation() -> Activation {
    Activation::Raw
}

impl SceneEntry {
    pub fn scene_id(&self) -> String {
        self.id.clone().unwrap_or_else(|| {
            self.ply
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "scene".into())
        })
    }

    fn resolve(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.ply);
        for p in [&mut self.features, &mut self.labels, &mut self.compressed].into_iter().flatten() {
            join(p);
        }
    }
}

fn fraction(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(LearnError::Config(format!("{name} = {v} is not a fraction in [0, 1]")))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| LearnError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses and validates; relative data paths are taken from the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LearnError::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            LearnError::Config(m) => LearnError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for s in &mut cfg.data.scenes {
            s.resolve(base);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optim.validate()?;
        self.loss.validate()?;
        let s = &self.ssl;
        fraction("ssl.mgm_ratio", s.mgm_ratio)?;
        fraction("ssl.ibot_ratio[0]", s.ibot_ratio[0])?;
        fraction("ssl.ibot_ratio[1]", s.ibot_ratio[1])?;
        fraction("ssl.masked_global_fraction", s.masked_global_fraction)?;
        if s.ibot_ratio[0] > s.ibot_ratio[1] {
            return Err(LearnError::Config("ssl.ibot_ratio must be an ordered band".into()));
        }
        if !(0.0..1.0).contains(&s.teacher_momentum) {
            return Err(LearnError::Config("ssl.teacher_momentum must be in [0, 1)".into()));
        }
        if s.n_global == 0 {
            return Err(LearnError::Config("ssl.n_global must be at least 1".into()));
        }
        if !(self.crop.grid_size > 0.0) {
            return Err(LearnError::Config("crop.grid_size must be positive".into()));
        }
        self.crop.global.validate()?;
        self.crop.local.validate()?;
        if let Some(t) = &self.augment.table {
            t.validate()?;
        }
        let ae = &self.autoencoder;
        crate::autoencoder::AutoencoderSpec::new(ae.encoder.clone(), ae.decoder.clone())?;
        fraction("autoencoder.holdout_fraction", ae.holdout_fraction)?;
        if !(ae.lr > 0.0) || ae.batch_size == 0 {
            return Err(LearnError::Config("autoencoder.lr and batch_size must be positive".into()));
        }
        Ok(())
    }

    /// The augmentation recipe in effect: the configured table, the standard one, or grid sampling only.
    pub fn augmentation_table(&self) -> AugmentationTable {
        let (g, l) = (self.crop.global.clone(), self.crop.local.clone());
        if !self.augment.enabled {
            return AugmentationTable::disabled(self.crop.grid_size, g, l);
        }
        match &self.augment.table {
            Some(t) => t.clone(),
            None => AugmentationTable::standard(self.crop.grid_size, g, l),
        }
    }
}
