//! Manifest-driven training loops for the three branches.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::caption::{corpus, train_bicaption, Captioner, PretrainSchedule, Tokenizer};
use crate::data::{io as data_io, CaptionRecord, DatasetManifest, ImagePlane, SaliencyTarget};
use crate::error::{Error, Result};
use crate::hash::seed_for;
use crate::nn::{Adam, ParamStore, SgdMomentum};
use crate::spd::SpdNetwork;
use crate::spgm::{GuidedSample, SpgmNetwork};

use super::checkpoint::Checkpoint;
use super::config::{lr_at, TrainConfig};

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub steps: u64,
    pub first_loss: f64,
    pub final_loss: f64,
}

/// Load (image, saliency target) pairs referenced by a manifest.
pub fn load_spd_samples(
    manifest: &DatasetManifest,
    base: &Path,
) -> Result<Vec<(ImagePlane, SaliencyTarget)>> {
    let mut out = Vec::with_capacity(manifest.records.len());
    for rec in &manifest.records {
        let image = data_io::read_image(&base.join(&rec.image))?;
        let sal = data_io::read_alpha(&base.join(&rec.saliency))?;
        let downsample = image.height() / sal.height();
        out.push((
            image,
            SaliencyTarget {
                values: sal.0,
                downsample,
            },
        ));
    }
    Ok(out)
}

/// Load (image, alpha) pairs referenced by a manifest.
pub fn load_matting_samples(
    manifest: &DatasetManifest,
    base: &Path,
) -> Result<Vec<(ImagePlane, crate::data::AlphaMatte)>> {
    let mut out = Vec::with_capacity(manifest.records.len());
    for rec in &manifest.records {
        let image = data_io::read_image(&base.join(&rec.image))?;
        let alpha = data_io::read_alpha(&base.join(&rec.alpha))?;
        out.push((image, alpha));
    }
    Ok(out)
}

/// Epoch-shuffled batch order, deterministic in (seed, epoch).
fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed_for(seed, &format!("epoch/{epoch}")));
    idx.shuffle(&mut rng);
    idx
}

/// Train the distillation branch. `init` may carry caption-pretrained
/// backbone weights (transferred) or a previous distillation checkpoint
/// (resumed).
pub fn train_spd(
    cfg: &TrainConfig,
    samples: &[(ImagePlane, SaliencyTarget)],
    init: Option<&Checkpoint>,
    mut progress: impl FnMut(u64, f64),
) -> Result<(SpdNetwork, ParamStore, TrainReport)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    let mut ps = ParamStore::new(cfg.seed);
    let net = SpdNetwork::new(&mut ps, "spd", cfg.spd_config())?;
    if let Some(ckpt) = init {
        let transferred = ps.load_prefix(&ckpt.params, "captioner.backbone.", "spd.backbone.")?;
        if transferred.is_empty() {
            let resumed = ps.load_prefix(&ckpt.params, "spd.", "spd.")?;
            if resumed.is_empty() {
                return Err(Error::CheckpointFormat(
                    "init checkpoint holds neither captioner nor spd weights".into(),
                ));
            }
        }
    }

    let mut opt = Adam::new();
    let mut step = 0u64;
    let mut first_loss = None;
    let mut final_loss = 0.0;
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch as i64, cfg)?;
        let order = epoch_order(samples.len(), cfg.seed, epoch);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&ImagePlane, &SaliencyTarget)> =
                chunk.iter().map(|&i| (&samples[i].0, &samples[i].1)).collect();
            let loss = crate::spd::train_step(&net, &mut ps, &mut opt, &batch, lr, seed_for(cfg.seed, &format!("step/{step}")))?;
            first_loss.get_or_insert(loss);
            final_loss = loss;
            progress(step, loss);
            step += 1;
        }
    }
    Ok((
        net,
        ps,
        TrainReport {
            steps: step,
            first_loss: first_loss.unwrap_or(0.0),
            final_loss,
        },
    ))
}

/// Precompute frozen-branch guidance for every matting sample.
pub fn guide_samples(
    spd: &SpdNetwork,
    spd_params: &ParamStore,
    samples: &[(ImagePlane, crate::data::AlphaMatte)],
) -> Result<Vec<GuidedSample>> {
    samples
        .iter()
        .map(|(image, alpha)| {
            let (mask, pyramid) = spd.forward(spd_params, image)?;
            Ok(GuidedSample {
                image: image.clone(),
                alpha_gt: alpha.clone(),
                mask,
                pyramid,
            })
        })
        .collect()
}

/// Train the guided matting branch against precomputed guidance.
pub fn train_spgm(
    cfg: &TrainConfig,
    net: &SpgmNetwork,
    ps: &mut ParamStore,
    guided: &[GuidedSample],
    mut progress: impl FnMut(u64, f64),
) -> Result<TrainReport> {
    cfg.validate()?;
    if guided.is_empty() {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    let weights = if cfg.loss_weights.is_empty() {
        crate::spgm::DEFAULT_LOSS_WEIGHTS.to_vec()
    } else {
        cfg.loss_weights.clone()
    };
    let mut opt = Adam::new();
    let mut step = 0u64;
    let mut first_loss = None;
    let mut final_loss = 0.0;
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch as i64, cfg)?;
        let order = epoch_order(guided.len(), cfg.seed, epoch);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&GuidedSample> = chunk.iter().map(|&i| &guided[i]).collect();
            let loss = crate::spgm::train_step(
                net,
                ps,
                &mut opt,
                &batch,
                &weights,
                lr,
                seed_for(cfg.seed, &format!("step/{step}")),
            )?;
            first_loss.get_or_insert(loss);
            final_loss = loss;
            progress(step, loss);
            step += 1;
        }
    }
    Ok(TrainReport {
        steps: step,
        first_loss: first_loss.unwrap_or(0.0),
        final_loss,
    })
}

/// Pretrain the captioner over (image, caption) records for
/// `cfg.pretrain_total_steps`, cycling deterministic batches.
pub fn pretrain_captioner(
    cfg: &TrainConfig,
    records: &[(ImagePlane, String)],
    mut progress: impl FnMut(u64, f64),
) -> Result<(Captioner, Tokenizer, ParamStore, TrainReport)> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::InvalidArgument("caption corpus is empty".into()));
    }
    let tokenizer = Tokenizer::fit(records.iter().map(|(_, c)| c.as_str()), 1);
    let mut ps = ParamStore::new(cfg.seed);
    let captioner = Captioner::new(&mut ps, "captioner", cfg.captioner_config(tokenizer.vocab_size()))?;
    let schedule = PretrainSchedule::new(cfg.pretrain_total_steps, cfg.pretrain_warmup_steps);
    let mut opt = SgdMomentum::new(schedule.momentum, schedule.weight_decay);

    let mut first_loss = None;
    let mut final_loss = 0.0;
    for step in 0..cfg.pretrain_total_steps {
        let order = epoch_order(records.len(), cfg.seed, step);
        let batch: Vec<(ImagePlane, String)> = order
            .into_iter()
            .take(cfg.batch_size.min(records.len()))
            .map(|i| records[i].clone())
            .collect();
        let report = train_bicaption(
            &captioner,
            &mut ps,
            &tokenizer,
            &batch,
            &schedule,
            &mut opt,
            step,
        )?;
        first_loss.get_or_insert(report.loss);
        final_loss = report.loss;
        progress(step, report.loss);
    }
    Ok((
        captioner,
        tokenizer,
        ps,
        TrainReport {
            steps: cfg.pretrain_total_steps,
            first_loss: first_loss.unwrap_or(0.0),
            final_loss,
        },
    ))
}

/// Load caption records from a JSON-lines manifest, reading images relative
/// to `base`.
pub fn load_caption_records(
    records: &[CaptionRecord],
    base: &Path,
) -> Result<Vec<(ImagePlane, String)>> {
    records
        .iter()
        .map(|r| Ok((data_io::read_image(&base.join(&r.image))?, r.caption.clone())))
        .collect()
}

/// The in-repo toy corpus, for offline pretraining runs.
pub fn toy_caption_records(pairs: usize, side: usize) -> Vec<(ImagePlane, String)> {
    corpus::toy_corpus(pairs, side)
}

/// Checkpoint assembly helpers shared by the drivers.
pub fn checkpoint_for(
    cfg: &TrainConfig,
    step: u64,
    params: ParamStore,
    vocab: Option<Vec<String>>,
) -> Result<Checkpoint> {
    Ok(Checkpoint::new(step, cfg.to_toml()?, vocab, params))
}

/// Build an SPD network matching a checkpoint's config echo.
pub fn spd_from_checkpoint(ckpt: &Checkpoint) -> Result<(SpdNetwork, ParamStore)> {
    let cfg = TrainConfig::from_toml(&ckpt.config_text)?;
    let mut build = ParamStore::new(ckpt.params.seed());
    let net = SpdNetwork::new(&mut build, "spd", cfg.spd_config())?;
    let mut ps = ParamStore::new(ckpt.params.seed());
    for (name, value) in build.iter() {
        let trained = ckpt.params.get_checked(name)?;
        if trained.shape() != value.shape() {
            return Err(Error::shape(name.clone(), value.shape(), trained.shape()));
        }
        ps.insert(name.clone(), trained.clone());
    }
    Ok((net, ps))
}

/// Validate that an SPD config in a checkpoint can guide the given matting
/// config, then build the matting network fresh.
pub fn spgm_for_training(
    cfg: &TrainConfig,
    spd_ckpt: &Checkpoint,
) -> Result<(SpgmNetwork, ParamStore, SpdNetwork, ParamStore)> {
    let spd_cfg = TrainConfig::from_toml(&spd_ckpt.config_text)?;
    super::pipeline::check_compatible(&spd_cfg, cfg)?;
    let (spd, spd_ps) = spd_from_checkpoint(spd_ckpt)?;
    let mut ps = ParamStore::new(cfg.seed);
    let net = SpgmNetwork::new(&mut ps, "spgm", cfg.spgm_config())?;
    Ok((net, ps, spd, spd_ps))
}

