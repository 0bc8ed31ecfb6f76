//! The bidirectional caption pretraining step: SGD with momentum and weight
//! decay, linear warmup into cosine decay, and separate maximum learning
//! rates for the visual front-end and the textual decoders.

use crate::data::ImagePlane;
use crate::error::{Error, Result};
use crate::nn::{warmup_cosine_lr, Fwd, ParamStore, SgdMomentum};
use crate::tensor::{to_scalar, Graph};

use super::{image_batch, CaptionSequence, Captioner, Tokenizer};

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainSchedule {
    pub total_steps: u64,
    pub warmup_steps: u64,
    pub backbone_max_lr: f64,
    pub decoder_max_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl PretrainSchedule {
    pub fn new(total_steps: u64, warmup_steps: u64) -> Self {
        PretrainSchedule {
            total_steps,
            warmup_steps,
            backbone_max_lr: 0.2,
            decoder_max_lr: 1e-3,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps == 0 || self.warmup_steps >= self.total_steps {
            return Err(Error::InvalidArgument(format!(
                "schedule needs 0 < warmup ({}) < total ({})",
                self.warmup_steps, self.total_steps
            )));
        }
        Ok(())
    }

    pub fn backbone_lr(&self, step: u64) -> f64 {
        warmup_cosine_lr(step, self.total_steps, self.warmup_steps, self.backbone_max_lr)
    }

    pub fn decoder_lr(&self, step: u64) -> f64 {
        warmup_cosine_lr(step, self.total_steps, self.warmup_steps, self.decoder_max_lr)
    }
}

#[derive(Clone, Debug)]
pub struct BicaptionReport {
    pub loss: f64,
    pub skipped_empty: usize,
    pub backbone_lr: f64,
    pub decoder_lr: f64,
}

/// One optimization step over a batch of (image, caption text) pairs.
/// Pairs whose caption tokenizes to no words are skipped and counted.
#[allow(clippy::too_many_arguments)]
pub fn train_bicaption(
    captioner: &Captioner,
    ps: &mut ParamStore,
    tokenizer: &Tokenizer,
    batch: &[(ImagePlane, String)],
    schedule: &PretrainSchedule,
    optimizer: &mut SgdMomentum,
    step: u64,
) -> Result<BicaptionReport> {
    schedule.validate()?;
    let mut images = Vec::new();
    let mut captions = Vec::new();
    let mut skipped = 0usize;
    for (image, text) in batch {
        let ids = tokenizer.encode_caption(text);
        if ids.len() <= 2 {
            skipped += 1;
            continue;
        }
        images.push(image);
        captions.push(CaptionSequence::forward(ids));
    }
    if captions.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "all {skipped} captions in the batch were empty"
        )));
    }

    let mut g = Graph::new();
    let mut f = Fwd::training(&mut g, ps, crate::hash::seed_for(ps.seed(), &format!("dropout/{step}")));
    let batch_arr = image_batch(&images);
    let images_var = f.g.constant(batch_arr.into_dyn());
    let grid = captioner.encode_images_var(&mut f, images_var);
    let loss = captioner.bicaption_loss(&mut f, grid, &captions)?;
    let loss_value = to_scalar(g.value(loss));
    let grads = g.backward(loss);

    let backbone_lr = schedule.backbone_lr(step);
    let decoder_lr = schedule.decoder_lr(step);
    let backbone_prefix = format!("{}.backbone.", captioner.prefix);
    optimizer.step(ps, &grads, |name| {
        if name.starts_with(&backbone_prefix) {
            backbone_lr
        } else {
            decoder_lr
        }
    });

    Ok(BicaptionReport {
        loss: loss_value,
        skipped_empty: skipped,
        backbone_lr,
        decoder_lr,
    })
}
