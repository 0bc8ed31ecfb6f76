//! Training configuration: a single TOML document, echoed verbatim into
//! checkpoints so incompatible pairings are caught at load time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::BackboneConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Spd,
    Spgm,
    Caption,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Everything needed to build and train one branch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub branch: Branch,
    pub optimizer: OptimizerKind,
    pub initial_lr: f64,
    /// Epochs at which the learning rate is cut by `decay_factor`.
    pub milestones: Vec<u64>,
    pub decay_factor: f64,
    pub batch_size: usize,
    pub input_size: usize,
    pub loss_weights: Vec<f64>,
    pub seed: u64,
    pub epochs: u64,

    // model dimensions
    pub width_multiplier: f64,
    pub blocks_per_stage: [usize; 4],
    pub mask_stride: usize,
    pub saliency_sigma: f64,

    // caption-branch fields
    pub decoder_layers: usize,
    pub decoder_heads: usize,
    pub decoder_width: usize,
    pub max_caption_len: usize,
    pub pretrain_total_steps: u64,
    pub pretrain_warmup_steps: u64,
}

impl TrainConfig {
    /// Distillation-branch defaults (full-scale protocol values).
    pub fn spd_default() -> Self {
        TrainConfig {
            branch: Branch::Spd,
            optimizer: OptimizerKind::Adam,
            initial_lr: 1e-2,
            milestones: vec![20, 40],
            decay_factor: 0.1,
            batch_size: 16,
            input_size: 512,
            loss_weights: vec![],
            seed: 0,
            epochs: 60,
            width_multiplier: 1.0,
            blocks_per_stage: [3, 4, 6, 3],
            mask_stride: 16,
            saliency_sigma: 1.0,
            decoder_layers: 2,
            decoder_heads: 4,
            decoder_width: 128,
            max_caption_len: 30,
            pretrain_total_steps: 500_000,
            pretrain_warmup_steps: 10_000,
        }
    }

    /// Matting-branch defaults (full-scale protocol values).
    pub fn spgm_default() -> Self {
        TrainConfig {
            branch: Branch::Spgm,
            optimizer: OptimizerKind::Adam,
            initial_lr: 5e-3,
            milestones: vec![20, 30, 40],
            decay_factor: 0.1,
            batch_size: 4,
            input_size: 512,
            loss_weights: vec![1.0, 2.0, 3.0],
            ..Self::spd_default()
        }
    }

    pub fn caption_default() -> Self {
        TrainConfig {
            branch: Branch::Caption,
            optimizer: OptimizerKind::Sgd,
            initial_lr: 0.2,
            milestones: vec![],
            batch_size: 16,
            loss_weights: vec![],
            ..Self::spd_default()
        }
    }

    /// Learning-rate milestone presets per composition protocol.
    pub fn dataset_profile(dataset: &str, branch: Branch) -> Result<Self> {
        let (spd_ms, spgm_ms): (Vec<u64>, Vec<u64>) = match dataset {
            "composition1k" => (vec![20, 40], vec![20, 30, 40]),
            "distinction646" => (vec![30, 60], vec![40, 60, 80]),
            "human2k" => (vec![60, 80], vec![80, 100, 120]),
            "multiobject1k" => (vec![40, 60, 80], vec![60, 80, 100]),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown dataset profile {other:?} (expected composition1k|distinction646|human2k|multiobject1k|desk)"
                )))
            }
        };
        let mut cfg = match branch {
            Branch::Spd => Self::spd_default(),
            Branch::Spgm => Self::spgm_default(),
            Branch::Caption => Self::caption_default(),
        };
        cfg.milestones = match branch {
            Branch::Spd => spd_ms,
            Branch::Spgm => spgm_ms,
            Branch::Caption => vec![],
        };
        if let Some(last) = cfg.milestones.last() {
            cfg.epochs = last + 20;
        }
        Ok(cfg)
    }

    /// CPU-scale profile: quarter width, single-block stages, small inputs.
    /// Milestones count optimization steps rather than dataset epochs.
    pub fn desk_profile(branch: Branch) -> Self {
        let mut cfg = match branch {
            Branch::Spd => Self::spd_default(),
            Branch::Spgm => Self::spgm_default(),
            Branch::Caption => Self::caption_default(),
        };
        cfg.width_multiplier = 0.25;
        cfg.blocks_per_stage = [1, 1, 1, 1];
        cfg.input_size = 64;
        cfg.batch_size = 4;
        cfg.epochs = 300;
        cfg.milestones = vec![200, 260];
        cfg.pretrain_total_steps = 300;
        cfg.pretrain_warmup_steps = 20;
        cfg
    }

    pub fn profile(name: &str, branch: Branch) -> Result<Self> {
        if name == "desk" {
            Ok(Self::desk_profile(branch))
        } else {
            Self::dataset_profile(name, branch)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.milestones.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config(format!(
                "milestones must be strictly increasing, got {:?}",
                self.milestones
            )));
        }
        if !(0.0..1.0).contains(&self.decay_factor) || self.decay_factor == 0.0 {
            return Err(Error::Config(format!(
                "decay factor {} must lie in (0,1)",
                self.decay_factor
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.input_size % 32 != 0 {
            return Err(Error::Config(format!(
                "input size {} must be divisible by 32",
                self.input_size
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn backbone(&self, in_channels: usize) -> BackboneConfig {
        BackboneConfig {
            in_channels,
            width_multiplier: self.width_multiplier,
            blocks_per_stage: self.blocks_per_stage,
        }
    }

    pub fn spd_config(&self) -> crate::spd::SpdConfig {
        crate::spd::SpdConfig {
            backbone: self.backbone(3),
            aspp: crate::spd::AsppConfig::standard(self.width_multiplier),
            mask_stride: self.mask_stride,
        }
    }

    pub fn spgm_config(&self) -> crate::spgm::SpgmConfig {
        let guidance = self.backbone(3).stage_channels();
        crate::spgm::SpgmConfig {
            backbone: self.backbone(4),
            guidance_channels: [guidance[1], guidance[2], guidance[3]],
            use_tst: true,
            use_aft: true,
            allow_unguided: false,
            focal_eps: crate::spgm::FOCAL_EPS,
        }
    }

    pub fn captioner_config(&self, vocab_size: usize) -> crate::caption::CaptionerConfig {
        crate::caption::CaptionerConfig {
            backbone: self.backbone(3),
            layers: self.decoder_layers,
            heads: self.decoder_heads,
            model_width: self.decoder_width,
            vocab_size,
            max_len: self.max_caption_len,
            dropout: 0.1,
            share_backward_decoder: false,
        }
    }
}

/// Piecewise-constant decay: the initial rate divided by the decay factor
/// once per milestone already passed.
pub fn lr_at(epoch: i64, cfg: &TrainConfig) -> Result<f64> {
    if epoch < 0 {
        return Err(Error::InvalidArgument(format!(
            "epoch {epoch} must be non-negative"
        )));
    }
    cfg.validate()?;
    let passed = cfg
        .milestones
        .iter()
        .filter(|&&m| (m as i64) <= epoch)
        .count() as i32;
    Ok(cfg.initial_lr * cfg.decay_factor.powi(passed))
}
