//! Model, training and run configuration.
//!
//! Configuration files are TOML documents with one section per concern
//! (`[model]`, `[train]`, `[data]`, `[codebook]`). Every key is optional;
//! missing keys fall back to the selected preset.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Full-size architecture: 17×256×256 clips, 256 + 1024 tokens.
    Paper,
    /// Toy dimensions that train in minutes on a CPU.
    Desk,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Self::Paper),
            "desk" => Ok(Self::Desk),
            other => Err(Error::validation("preset", format!("unknown preset {other:?}"))),
        }
    }
}

/// Architecture hyperparameters. The single source of truth for tensor shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub patch_t: usize,
    pub patch_h: usize,
    pub patch_w: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub ff_mult: usize,
    pub spatial_layers: usize,
    pub temporal_layers: usize,
    pub l_spatial: usize,
    pub l_temporal: usize,
    pub d_latent: usize,
    pub gcn_hidden: usize,
    pub d_text: usize,
    pub min_freq: usize,
    pub window: usize,
    /// Commitment weight on the `||z - sg[q]||^2` terms.
    pub beta: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    pub fn paper() -> Self {
        Self {
            frames: 17,
            height: 256,
            width: 256,
            patch_t: 4,
            patch_h: 8,
            patch_w: 8,
            d_model: 512,
            n_heads: 8,
            ff_mult: 4,
            spatial_layers: 8,
            temporal_layers: 4,
            l_spatial: 256,
            l_temporal: 1024,
            d_latent: 256,
            gcn_hidden: 512,
            d_text: 512,
            min_freq: 5,
            window: 5,
            beta: 0.25,
            init_seed: 0,
        }
    }

    pub fn desk() -> Self {
        Self {
            frames: 5,
            height: 32,
            width: 32,
            patch_t: 2,
            patch_h: 4,
            patch_w: 4,
            d_model: 64,
            n_heads: 4,
            ff_mult: 4,
            spatial_layers: 2,
            temporal_layers: 2,
            l_spatial: 16,
            l_temporal: 32,
            d_latent: 16,
            gcn_hidden: 512,
            d_text: 64,
            min_freq: 1,
            window: 5,
            beta: 0.25,
            init_seed: 0,
        }
    }

    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper => Self::paper(),
            Preset::Desk => Self::desk(),
        }
    }

    pub fn grid_h(&self) -> usize {
        self.height / self.patch_h
    }

    pub fn grid_w(&self) -> usize {
        self.width / self.patch_w
    }

    /// Number of temporal tube groups, `(T - 1) / p_t`.
    pub fn grid_t(&self) -> usize {
        (self.frames - 1) / self.patch_t
    }

    /// Patch locations per frame, `h * w`.
    pub fn patches_per_frame(&self) -> usize {
        self.grid_h() * self.grid_w()
    }

    pub fn token_count(&self) -> usize {
        self.l_spatial + self.l_temporal
    }

    pub fn ff_hidden(&self) -> usize {
        self.ff_mult * self.d_model
    }

    /// Checks the divisibility law for a clip of `(frames, height, width)`.
    pub fn check_clip_dims(&self, frames: usize, height: usize, width: usize) -> Result<()> {
        if frames == 0 || !(frames - 1).is_multiple_of(self.patch_t) {
            return Err(Error::shape(format!(
                "{frames} frames: T - 1 must be divisible by patch_t={}",
                self.patch_t
            )));
        }
        if height == 0 || !height.is_multiple_of(self.patch_h) {
            return Err(Error::shape(format!(
                "height {height} not divisible by patch_h={}",
                self.patch_h
            )));
        }
        if width == 0 || !width.is_multiple_of(self.patch_w) {
            return Err(Error::shape(format!(
                "width {width} not divisible by patch_w={}",
                self.patch_w
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("model.frames", self.frames),
            ("model.height", self.height),
            ("model.width", self.width),
            ("model.patch_t", self.patch_t),
            ("model.patch_h", self.patch_h),
            ("model.patch_w", self.patch_w),
            ("model.d_model", self.d_model),
            ("model.n_heads", self.n_heads),
            ("model.ff_mult", self.ff_mult),
            ("model.spatial_layers", self.spatial_layers),
            ("model.temporal_layers", self.temporal_layers),
            ("model.l_spatial", self.l_spatial),
            ("model.l_temporal", self.l_temporal),
            ("model.d_latent", self.d_latent),
            ("model.gcn_hidden", self.gcn_hidden),
            ("model.d_text", self.d_text),
            ("model.min_freq", self.min_freq),
            ("model.window", self.window),
        ];
        for (field, value) in positive {
            if value == 0 {
                return Err(Error::validation(field, "must be at least 1"));
            }
        }
        if self.frames < 1 + self.patch_t || !(self.frames - 1).is_multiple_of(self.patch_t) {
            return Err(Error::validation(
                "model.frames",
                format!(
                    "{} frames: need T - 1 to be a positive multiple of patch_t={}",
                    self.frames, self.patch_t
                ),
            ));
        }
        if !self.height.is_multiple_of(self.patch_h) {
            return Err(Error::validation(
                "model.height",
                format!("{} not divisible by patch_h={}", self.height, self.patch_h),
            ));
        }
        if !self.width.is_multiple_of(self.patch_w) {
            return Err(Error::validation(
                "model.width",
                format!("{} not divisible by patch_w={}", self.width, self.patch_w),
            ));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::validation(
                "model.n_heads",
                format!("d_model={} not divisible by {} heads", self.d_model, self.n_heads),
            ));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::validation("model.beta", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Weights of the reconstruction loss terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub l2: f64,
    pub vq: f64,
    pub perceptual: f64,
    pub adversarial: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            l2: 1.0,
            vq: 1.0,
            perceptual: 0.0,
            adversarial: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_lr: f64,
    pub min_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub ema_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub loss_weights: LossWeights,
    /// Leading steps in which the decoder reads continuous latents and the
    /// commitment term is off; the codebook term still trains the projector.
    pub quantizer_warmup: usize,
    /// Recorded for completeness; inert while the adversarial weight is zero.
    pub discriminator_start: usize,
    pub discriminator_max_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    pub fn paper() -> Self {
        Self {
            max_lr: 1e-4,
            min_lr: 1e-5,
            warmup_steps: 10_000,
            total_steps: 1_000_000,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 1e-4,
            ema_decay: 0.999,
            batch_size: 8,
            seed: 0,
            loss_weights: LossWeights::default(),
            quantizer_warmup: 0,
            discriminator_start: 20_000,
            discriminator_max_lr: 1e-4,
        }
    }

    pub fn desk() -> Self {
        Self {
            max_lr: 2e-3,
            min_lr: 2e-4,
            warmup_steps: 50,
            total_steps: 1000,
            batch_size: 2,
            quantizer_warmup: 400,
            ..Self::paper()
        }
    }

    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper => Self::paper(),
            Preset::Desk => Self::desk(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = [
            ("train.max_lr", self.max_lr),
            ("train.min_lr", self.min_lr),
            ("train.weight_decay", self.weight_decay),
            ("train.loss_weights.l2", self.loss_weights.l2),
            ("train.loss_weights.vq", self.loss_weights.vq),
            ("train.loss_weights.perceptual", self.loss_weights.perceptual),
            ("train.loss_weights.adversarial", self.loss_weights.adversarial),
            ("train.discriminator_max_lr", self.discriminator_max_lr),
        ];
        for (field, value) in finite_nonneg {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::validation(field, "must be finite and >= 0"));
            }
        }
        if self.min_lr > self.max_lr {
            return Err(Error::validation("train.min_lr", "must not exceed max_lr"));
        }
        if self.total_steps == 0 {
            return Err(Error::validation("train.total_steps", "must be at least 1"));
        }
        if self.warmup_steps > self.total_steps {
            return Err(Error::validation(
                "train.warmup_steps",
                "must not exceed total_steps",
            ));
        }
        if self.quantizer_warmup > self.total_steps {
            return Err(Error::validation(
                "train.quantizer_warmup",
                "must not exceed total_steps",
            ));
        }
        for (field, value) in [("train.beta1", self.beta1), ("train.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&value) {
                return Err(Error::validation(field, "must lie in [0, 1)"));
            }
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return Err(Error::validation("train.ema_decay", "must lie in [0, 1]"));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::validation("train.eps", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("train.batch_size", "must be at least 1"));
        }
        Ok(())
    }
}

/// Synthetic corpus and on-disk data locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory of `.swtv` clips; when absent a synthetic corpus is generated.
    pub clips: Option<PathBuf>,
    /// Caption file matching the clip ids.
    pub captions: Option<PathBuf>,
    pub synthetic_clips: usize,
    pub synthetic_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            clips: None,
            captions: None,
            synthetic_clips: 2,
            synthetic_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodebookConfig {
    /// Directory holding `vocab.tsv`, `graph.tsv` and `embeddings.swte`.
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub codebook: CodebookConfig,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        Self {
            model: ModelConfig::preset(preset),
            train: TrainConfig::preset(preset),
            data: DataConfig::default(),
            codebook: CodebookConfig::default(),
        }
    }

    /// Parses a TOML document layered over `preset`.
    pub fn parse(text: &str, preset: Preset) -> Result<Self> {
        let mut base = toml::Table::try_from(Self::preset(preset))
            .map_err(|e| Error::format("config", e.to_string()))?;
        let overlay: toml::Table =
            toml::from_str(text).map_err(|e| Error::format("config", e.to_string()))?;
        merge(&mut base, overlay);
        let cfg: Self = base
            .try_into()
            .map_err(|e: toml::de::Error| Error::format("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, preset: Preset) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text, preset)?;
        // relative data paths resolve against the config file's directory
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.data.clips,
            &mut cfg.data.captions,
            &mut cfg.codebook.dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        RunConfig::preset(Preset::Paper).validate().unwrap();
        RunConfig::preset(Preset::Desk).validate().unwrap();
    }

    #[test]
    fn paper_grid_dims() {
        let cfg = ModelConfig::paper();
        assert_eq!((cfg.grid_t(), cfg.grid_h(), cfg.grid_w()), (4, 32, 32));
        assert_eq!(cfg.token_count(), 1280);
    }

    #[test]
    fn overlay_keeps_preset_defaults() {
        let cfg = RunConfig::parse("[model]\nd_model = 32\nn_heads = 2\n", Preset::Desk).unwrap();
        assert_eq!(cfg.model.d_model, 32);
        assert_eq!(cfg.model.l_spatial, ModelConfig::desk().l_spatial);
        assert_eq!(cfg.train, TrainConfig::desk());
    }

    #[test]
    fn bad_kernel_names_field() {
        let err = RunConfig::parse("[model]\nframes = 16\npatch_t = 4\n", Preset::Desk).unwrap_err();
        match err {
            Error::Validation { field, .. } => assert_eq!(field, "model.frames"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(RunConfig::parse("[model]\nbogus = 1\n", Preset::Desk).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig::preset(Preset::Paper);
        let back = RunConfig::parse(&cfg.to_toml(), Preset::Desk).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn lr_order_checked() {
        let mut t = TrainConfig::desk();
        t.min_lr = 1.0;
        assert!(t.validate().is_err());
    }
}
