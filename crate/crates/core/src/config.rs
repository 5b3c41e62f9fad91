//! Run configuration: every scalar knob in one validated place.
//!
//! Loaded from JSON with unknown keys rejected; individual fields can be
//! overridden with `key=value` pairs from the command line.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// The model-level hyperparameters: sharpening temperatures, matching
/// batch size, loss balance, stage count, and feature dims.
#[derive(Clone, Copy, Debug)]
pub struct HyperParams {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    /// Matching-loss batch size M.
    pub batch: usize,
    /// Weight of the matching loss in the generator objective.
    pub lambda: f64,
    /// Stage count m.
    pub stages: usize,
    /// Joint text-image feature dim D.
    pub joint: usize,
    /// Hidden image-feature dim per stage.
    pub stage_dim: usize,
    pub z_dim: usize,
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.gamma1 <= 0.0 || self.gamma2 <= 0.0 || self.gamma3 <= 0.0 {
            return Err(Error::Config("gamma factors must be positive".into()));
        }
        if self.batch < 2 {
            return Err(Error::Config(format!(
                "matching batch M must be at least 2, got {}",
                self.batch
            )));
        }
        if !(self.stages == 2 || self.stages == 3) {
            return Err(Error::Config(format!(
                "stage count must be 2 or 3, got {}",
                self.stages
            )));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; all component seeds derive from it.
    pub seed: u64,
    pub data_dir: String,
    pub out_dir: String,

    // dataset
    pub image_side: usize,
    pub n_train: usize,
    pub n_test: usize,

    // text encoder
    pub text_embed: usize,
    pub text_hidden: usize,
    pub max_len: usize,

    // image encoder
    pub image_channels: Vec<usize>,
    pub freeze_backbone: bool,

    // generator / discriminators
    pub stages: usize,
    pub stage_dim: usize,
    pub z_dim: usize,
    pub c_dim: usize,
    pub base_grid: usize,
    pub disc_base_channels: usize,

    // loss knobs
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub damsm_batch: usize,
    pub lambda: f64,
    pub ca_kl_weight: f64,
    pub mismatch_real: bool,

    // optimization
    pub damsm_epochs: usize,
    pub damsm_lr: f64,
    pub damsm_beta1: f64,
    pub damsm_beta2: f64,
    pub gan_epochs: usize,
    pub gan_batch: usize,
    pub g_lr: f64,
    pub d_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,

    // harness
    pub checkpoint_every: usize,
    pub sample_every: usize,
    pub log_timing: bool,

    // evaluation
    pub eval_candidates: usize,
    pub eval_r: usize,
    /// 0 means one query per test item.
    pub eval_queries: usize,

    // attention visualization
    /// 0 means image_side / 16.
    pub viz_sigma: f64,
    pub viz_top_k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            data_dir: "data".into(),
            out_dir: "runs/default".into(),
            image_side: 32,
            n_train: 500,
            n_test: 100,
            text_embed: 16,
            text_hidden: 16,
            max_len: 16,
            image_channels: vec![16, 32, 64],
            freeze_backbone: false,
            stages: 2,
            stage_dim: 32,
            z_dim: 16,
            c_dim: 16,
            base_grid: 4,
            disc_base_channels: 16,
            gamma1: 5.0,
            gamma2: 5.0,
            gamma3: 10.0,
            damsm_batch: 8,
            lambda: 5.0,
            ca_kl_weight: 0.0,
            mismatch_real: false,
            damsm_epochs: 40,
            damsm_lr: 2e-3,
            damsm_beta1: 0.9,
            damsm_beta2: 0.999,
            gan_epochs: 30,
            gan_batch: 8,
            g_lr: 2e-4,
            d_lr: 2e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            checkpoint_every: 1,
            sample_every: 0,
            log_timing: false,
            eval_candidates: 10,
            eval_r: 1,
            eval_queries: 0,
            viz_sigma: 0.0,
            viz_top_k: 5,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("bad config JSON: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<RunConfig> {
        RunConfig::from_json(&std::fs::read_to_string(path)?)
    }

    /// Apply a `key=value` override. Values parse as JSON when they can,
    /// falling back to a string, and unknown keys are rejected.
    pub fn with_override(&self, key: &str, value: &str) -> Result<RunConfig> {
        let mut tree = serde_json::to_value(self)
            .map_err(|e| Error::Config(format!("config serialization failed: {e}")))?;
        let obj = tree.as_object_mut().expect("config is a JSON object");
        if !obj.contains_key(key) {
            return Err(Error::Config(format!("unknown config key {key:?}")));
        }
        let parsed = serde_json::from_str(value)
            .unwrap_or_else(|_| serde_json::Value::String(value.to_string()));
        obj.insert(key.to_string(), parsed);
        let cfg: RunConfig = serde_json::from_value(tree)
            .map_err(|e| Error::Config(format!("bad value for {key:?}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn hyper_params(&self) -> HyperParams {
        HyperParams {
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            gamma3: self.gamma3,
            batch: self.damsm_batch,
            lambda: self.lambda,
            stages: self.stages,
            joint: 2 * self.text_hidden,
            stage_dim: self.stage_dim,
            z_dim: self.z_dim,
        }
    }

    /// Side of the image produced by the last generator stage.
    pub fn final_gen_side(&self) -> usize {
        self.base_grid * (1 << (self.stages - 1)) * 2
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper_params().validate()?;
        if self.image_side < 16 {
            return Err(Error::Config(format!(
                "image_side must be at least 16, got {}",
                self.image_side
            )));
        }
        if self.image_side % (1 << self.image_channels.len()) != 0 {
            return Err(Error::Config(format!(
                "image_side {} not divisible by 2^{} conv stages",
                self.image_side,
                self.image_channels.len()
            )));
        }
        if self.base_grid < 2 || !self.base_grid.is_power_of_two() {
            return Err(Error::Config(format!(
                "base_grid must be a power of two >= 2, got {}",
                self.base_grid
            )));
        }
        let final_side = self.final_gen_side();
        if final_side > self.image_side {
            return Err(Error::Config(format!(
                "final generated side {final_side} exceeds encoder input side {}",
                self.image_side
            )));
        }
        if self.max_len < 1 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        if self.n_train < 1 || self.n_test < 1 {
            return Err(Error::Config("n_train and n_test must be at least 1".into()));
        }
        if self.eval_r < 1 || self.eval_candidates < self.eval_r {
            return Err(Error::Config(format!(
                "need eval_candidates >= eval_r >= 1, got {} and {}",
                self.eval_candidates, self.eval_r
            )));
        }
        if self.gan_batch < 1 {
            return Err(Error::Config("gan_batch must be at least 1".into()));
        }
        Ok(())
    }
}
