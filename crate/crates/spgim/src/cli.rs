//! Command-line verbs. The binary is a thin wrapper over these functions;
//! everything here is plain library code so the behavior stays testable.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{self, io as data_io, synth, CompositionParams, Split};
use crate::error::{Error, Result};
use crate::harness::{self, Branch, TrainConfig};

/// Scratch/cache directory: `SPGIM_SCRATCH` when set, else the system temp.
pub fn scratch_dir() -> PathBuf {
    std::env::var_os("SPGIM_SCRATCH")
        .map(PathBuf::from)
        .unwrap_or_else(std::env::temp_dir)
}

/// Training verbs append per-step losses here, named after the checkpoint.
fn loss_log_path(out_ckpt: &Path) -> PathBuf {
    let stem = out_ckpt
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "train".to_string());
    let dir = scratch_dir().join("spgim-logs");
    std::fs::create_dir_all(&dir).ok();
    dir.join(format!("{stem}.losses.jsonl"))
}

fn loss_logger(out_ckpt: &Path) -> (PathBuf, impl FnMut(u64, f64)) {
    let path = loss_log_path(out_ckpt);
    let file = std::fs::File::create(&path).ok();
    let mut writer = file.map(std::io::BufWriter::new);
    let log = move |step: u64, loss: f64| {
        if let Some(w) = writer.as_mut() {
            use std::io::Write;
            let _ = writeln!(w, "{{\"step\":{step},\"loss\":{loss}}}");
            let _ = w.flush();
        }
    };
    (path, log)
}

#[derive(Parser)]
#[command(
    name = "spgim",
    about = "Trimap-free matting: dataset composition, two-branch training, inference, and evaluation",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Clone)]
pub struct CommonOpts {
    /// Training configuration (TOML). Defaults to the built-in profile for
    /// the verb's branch.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Named profile when no config file is given:
    /// desk|composition1k|distinction646|human2k|multiobject1k.
    #[arg(long, default_value = "desk")]
    pub profile: String,
    /// Overrides the seed from the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl CommonOpts {
    fn load(&self, branch: Branch) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::from_toml(&std::fs::read_to_string(path)?)?,
            None => TrainConfig::profile(&self.profile, branch)?,
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
pub enum Command {
    /// Composite foregrounds over backgrounds and write a dataset manifest.
    Compose {
        /// Directory of foreground assets: <id>.png plus <id>.alpha.png.
        #[arg(long)]
        fg_dir: PathBuf,
        /// Directory of background images (*.png).
        #[arg(long)]
        bg_dir: PathBuf,
        /// Backgrounds per foreground; defaults to the split's protocol
        /// ratio (train 100, test 20).
        #[arg(long)]
        ratio: Option<usize>,
        #[arg(long, default_value = "train")]
        split: Split,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output dataset directory.
        #[arg(long, visible_alias = "out-dir")]
        out: PathBuf,
    },
    /// Pretrain the captioning front-end on an {image, caption} manifest.
    PretrainCaptioner {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, visible_alias = "out")]
        out_ckpt: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Train the saliency distillation branch.
    TrainSpd {
        #[arg(long)]
        manifest: PathBuf,
        /// Caption checkpoint to transfer the backbone from, a previous
        /// distillation checkpoint to resume, or "none".
        #[arg(long, default_value = "none")]
        init_ckpt: String,
        #[arg(long, visible_alias = "out")]
        out_ckpt: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Train the guided matting branch against a frozen distillation
    /// checkpoint.
    TrainSpgm {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        spd_ckpt: PathBuf,
        #[arg(long, visible_alias = "out")]
        out_ckpt: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Saliency mask for one image from a distillation checkpoint.
    InferSpd {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, visible_alias = "out")]
        out_mask: PathBuf,
    },
    /// Full pipeline: image -> saliency mask -> alpha matte.
    Infer {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        spd_ckpt: PathBuf,
        #[arg(long)]
        spgm_ckpt: PathBuf,
        #[arg(long, visible_alias = "out")]
        out_alpha: PathBuf,
        /// Write the alpha as 16-bit grayscale instead of 8-bit.
        #[arg(long)]
        sixteen_bit: bool,
        /// Directory for the per-level alphas and the saliency mask.
        #[arg(long)]
        dump_levels: Option<PathBuf>,
        /// Directory for per-stage attention maps.
        #[arg(long)]
        dump_attention: Option<PathBuf>,
    },
    /// Score predicted mattes against ground truth.
    Eval {
        #[arg(long)]
        pred_dir: PathBuf,
        #[arg(long)]
        gt_dir: PathBuf,
        /// Trimaps for an additional unknown-region table.
        #[arg(long)]
        trimap_dir: Option<PathBuf>,
        #[arg(long, visible_alias = "out")]
        report: PathBuf,
    },
    /// Side-by-side sheets: input | per-method alphas | cutout.
    Compare {
        /// Directory of input images (*.png), ids taken from file stems.
        #[arg(long)]
        images_dir: PathBuf,
        /// Repeatable NAME=DIR pairs; DIR holds <id>.png alphas.
        #[arg(long = "method", required = true)]
        methods: Vec<String>,
        #[arg(long, visible_alias = "out")]
        out_dir: PathBuf,
    },
    /// Parameter counts of a checkpoint, per module and total.
    CountParams {
        #[arg(long)]
        ckpt: PathBuf,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Compose {
            fg_dir,
            bg_dir,
            ratio,
            split,
            seed,
            out,
        } => compose_cmd(&fg_dir, &bg_dir, ratio, split, seed, &out),
        Command::PretrainCaptioner {
            manifest,
            out_ckpt,
            common,
        } => pretrain_cmd(&manifest, &out_ckpt, &common),
        Command::TrainSpd {
            manifest,
            init_ckpt,
            out_ckpt,
            common,
        } => train_spd_cmd(&manifest, &init_ckpt, &out_ckpt, &common),
        Command::TrainSpgm {
            manifest,
            spd_ckpt,
            out_ckpt,
            common,
        } => train_spgm_cmd(&manifest, &spd_ckpt, &out_ckpt, &common),
        Command::InferSpd {
            image,
            ckpt,
            out_mask,
        } => infer_spd_cmd(&image, &ckpt, &out_mask),
        Command::Infer {
            image,
            spd_ckpt,
            spgm_ckpt,
            out_alpha,
            sixteen_bit,
            dump_levels,
            dump_attention,
        } => infer_cmd(
            &image,
            &spd_ckpt,
            &spgm_ckpt,
            &out_alpha,
            sixteen_bit,
            dump_levels.as_deref(),
            dump_attention.as_deref(),
        ),
        Command::Eval {
            pred_dir,
            gt_dir,
            trimap_dir,
            report,
        } => {
            let result = harness::evaluate_dirs(&pred_dir, &gt_dir, trimap_dir.as_deref())?;
            harness::write_report(&report, &result)?;
            let mean = &result.whole_image.mean;
            println!(
                "whole-image mean over {} samples: SAD {:.4}  MSE {:.6}  Grad {:.4}  Conn {:.4}",
                result.whole_image.samples.len(),
                mean.sad,
                mean.mse,
                mean.grad,
                mean.conn
            );
            if let Some(unknown) = &result.unknown_only {
                let m = &unknown.mean;
                println!(
                    "unknown-only mean over {} samples: SAD {:.4}  MSE {:.6}  Grad {:.4}  Conn {:.4}",
                    unknown.samples.len(),
                    m.sad,
                    m.mse,
                    m.grad,
                    m.conn
                );
            }
            Ok(())
        }
        Command::Compare {
            images_dir,
            methods,
            out_dir,
        } => compare_cmd(&images_dir, &methods, &out_dir),
        Command::CountParams { ckpt } => {
            let loaded = harness::load_checkpoint(&ckpt)?;
            let count = harness::count_parameters(&loaded.params);
            for (module, n) in &count.per_module {
                println!("{module:<40} {n:>12}  {}", harness::format_millions(*n));
            }
            println!(
                "{:<40} {:>12}  {}",
                "total",
                count.total,
                harness::format_millions(count.total)
            );
            Ok(())
        }
    }
}

fn png_stems(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path.clone()));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn compose_cmd(
    fg_dir: &Path,
    bg_dir: &Path,
    ratio: Option<usize>,
    split: Split,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let ratio = ratio.unwrap_or_else(|| split.default_ratio());
    let mut foregrounds = Vec::new();
    for (stem, path) in png_stems(fg_dir)? {
        if stem.ends_with(".alpha") {
            continue;
        }
        let alpha_path = fg_dir.join(format!("{stem}.alpha.png"));
        if !alpha_path.exists() {
            return Err(Error::InvalidArgument(format!(
                "foreground {stem} has no matching {stem}.alpha.png"
            )));
        }
        let asset = data::ForegroundAsset {
            foreground: data_io::read_image(&path)?,
            alpha: data_io::read_alpha(&alpha_path)?,
            id: stem,
        };
        asset.validate()?;
        foregrounds.push(asset);
    }
    if foregrounds.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no foreground assets found in {}",
            fg_dir.display()
        )));
    }
    let backgrounds: Vec<(String, PathBuf)> = png_stems(bg_dir)?;
    if backgrounds.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no backgrounds found in {}",
            bg_dir.display()
        )));
    }

    let fg_ids: Vec<String> = foregrounds.iter().map(|f| f.id.clone()).collect();
    let bg_ids: Vec<String> = backgrounds.iter().map(|(s, _)| s.clone()).collect();
    let plan = data::plan_composition(&fg_ids, &bg_ids, ratio, split, seed)?;
    if plan.sampled_with_replacement {
        eprintln!(
            "warning: background pool ({}) smaller than ratio ({ratio}); sampling with replacement",
            bg_ids.len()
        );
    }

    for sub in ["image", "alpha", "trimap", "saliency"] {
        std::fs::create_dir_all(out.join(sub))?;
    }
    // Samples are independent; materialize them in parallel. The manifest
    // stays single-writer and keeps the plan order.
    use rayon::prelude::*;
    let params = CompositionParams::default();
    let records: Result<Vec<data::ManifestRecord>> = plan
        .pairs
        .par_iter()
        .enumerate()
        .map(|(k, pair)| {
            let bg = data_io::read_image(&backgrounds[pair.bg_index].1)?;
            let sample = data::compose_sample(
                &foregrounds[pair.fg_index],
                &bg,
                &pair.bg_id,
                pair.seed,
                &params,
            )?;
            let rec = data::ManifestRecord {
                image: format!("image/{k:06}.png"),
                alpha: format!("alpha/{k:06}.png"),
                trimap: format!("trimap/{k:06}.png"),
                saliency: format!("saliency/{k:06}.png"),
                fg_id: pair.fg_id.clone(),
                bg_id: pair.bg_id.clone(),
                seed: pair.seed,
                flags: sample.flags.clone(),
            };
            data_io::write_image(&out.join(&rec.image), &sample.image)?;
            data_io::write_alpha(&out.join(&rec.alpha), &sample.alpha_gt, false)?;
            data_io::write_trimap(&out.join(&rec.trimap), &sample.trimap)?;
            data_io::write_gray_plane(&out.join(&rec.saliency), &sample.saliency_target.values)?;
            Ok(rec)
        })
        .collect();
    let records = records?;
    let manifest = data::DatasetManifest {
        records,
        split,
        composition_ratio: ratio,
    };
    data::write_manifest(&out.join("manifest.jsonl"), &manifest)?;
    println!(
        "composed {} samples ({} foregrounds x ratio {ratio}) into {}",
        manifest.records.len(),
        foregrounds.len(),
        out.display()
    );
    Ok(())
}

fn pretrain_cmd(manifest: &Path, out_ckpt: &Path, common: &CommonOpts) -> Result<()> {
    let cfg = common.load(Branch::Caption)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let records = data::read_caption_manifest(manifest)?;
    let pairs = harness::load_caption_records(&records, base)?;
    let (log_path, mut log) = loss_logger(out_ckpt);
    let (_captioner, tokenizer, ps, report) =
        harness::pretrain_captioner(&cfg, &pairs, |step, loss| {
            log(step, loss);
            if step % 10 == 0 {
                println!("step {step}: loss {loss:.4}");
            }
        })?;
    let ckpt = harness::checkpoint_for(&cfg, report.steps, ps, Some(tokenizer.words().to_vec()))?;
    harness::save_checkpoint(out_ckpt, &ckpt)?;
    println!(
        "pretrained captioner for {} steps (loss {:.4} -> {:.4}); checkpoint at {}, losses at {}",
        report.steps,
        report.first_loss,
        report.final_loss,
        out_ckpt.display(),
        log_path.display()
    );
    Ok(())
}

fn train_spd_cmd(
    manifest: &Path,
    init_ckpt: &str,
    out_ckpt: &Path,
    common: &CommonOpts,
) -> Result<()> {
    let cfg = common.load(Branch::Spd)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let dataset = data::read_manifest(manifest, Split::Train, 0)?;
    let samples = harness::load_spd_samples(&dataset, base)?;
    let init = match init_ckpt {
        "none" => None,
        path => Some(harness::load_checkpoint(Path::new(path))?),
    };
    let (log_path, mut log) = loss_logger(out_ckpt);
    let (_net, ps, report) = harness::train_spd(&cfg, &samples, init.as_ref(), |step, loss| {
        log(step, loss);
        if step % 10 == 0 {
            println!("step {step}: loss {loss:.5}");
        }
    })?;
    let ckpt = harness::checkpoint_for(&cfg, report.steps, ps, None)?;
    harness::save_checkpoint(out_ckpt, &ckpt)?;
    println!(
        "trained distillation branch for {} steps (loss {:.5} -> {:.5}); checkpoint at {}, losses at {}",
        report.steps,
        report.first_loss,
        report.final_loss,
        out_ckpt.display(),
        log_path.display()
    );
    Ok(())
}

fn train_spgm_cmd(
    manifest: &Path,
    spd_ckpt: &Path,
    out_ckpt: &Path,
    common: &CommonOpts,
) -> Result<()> {
    let cfg = common.load(Branch::Spgm)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let dataset = data::read_manifest(manifest, Split::Train, 0)?;
    let samples = harness::load_matting_samples(&dataset, base)?;
    let spd = harness::load_checkpoint(spd_ckpt)?;
    let (net, mut ps, spd_net, spd_ps) = harness::spgm_for_training(&cfg, &spd)?;
    let guided = harness::guide_samples(&spd_net, &spd_ps, &samples)?;
    let (log_path, mut log) = loss_logger(out_ckpt);
    let report = harness::train_spgm(&cfg, &net, &mut ps, &guided, |step, loss| {
        log(step, loss);
        if step % 10 == 0 {
            println!("step {step}: loss {loss:.5}");
        }
    })?;
    let ckpt = harness::checkpoint_for(&cfg, report.steps, ps, None)?;
    harness::save_checkpoint(out_ckpt, &ckpt)?;
    println!(
        "trained matting branch for {} steps (loss {:.5} -> {:.5}); checkpoint at {}, losses at {}",
        report.steps,
        report.first_loss,
        report.final_loss,
        out_ckpt.display(),
        log_path.display()
    );
    Ok(())
}

fn infer_spd_cmd(image: &Path, ckpt: &Path, out_mask: &Path) -> Result<()> {
    let loaded = harness::load_checkpoint(ckpt)?;
    let (net, ps) = harness::spd_from_checkpoint(&loaded)?;
    let img = data_io::read_image(image)?;
    let (padded, h, w) = harness::pad_to_multiple(&img, 32);
    let (mask, _) = net.forward(&ps, &padded)?;
    let stride = mask.stride;
    let crop = mask
        .values
        .slice(ndarray::s![0..h.div_ceil(stride), 0..w.div_ceil(stride)])
        .to_owned();
    data_io::write_gray_plane(out_mask, &crop)?;
    println!("saliency mask ({}x{}) written to {}", crop.dim().0, crop.dim().1, out_mask.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn infer_cmd(
    image: &Path,
    spd_ckpt: &Path,
    spgm_ckpt: &Path,
    out_alpha: &Path,
    sixteen_bit: bool,
    dump_levels: Option<&Path>,
    dump_attention: Option<&Path>,
) -> Result<()> {
    let spd = harness::load_checkpoint(spd_ckpt)?;
    let spgm = harness::load_checkpoint(spgm_ckpt)?;
    let pipeline = harness::Pipeline::from_checkpoints(&spd, &spgm)?;
    let img = data_io::read_image(image)?;
    let out = pipeline.run(&img)?;
    data_io::write_alpha(out_alpha, &out.alpha, sixteen_bit)?;
    if let Some(dir) = dump_levels {
        std::fs::create_dir_all(dir)?;
        data_io::write_gray_plane(&dir.join("saliency_mask.png"), &out.saliency_mask.values)?;
        for (i, level) in out.level_alphas.iter().enumerate() {
            data_io::write_alpha(&dir.join(format!("level{}.png", i + 1)), level, sixteen_bit)?;
        }
    }
    if let Some(dir) = dump_attention {
        std::fs::create_dir_all(dir)?;
        for (i, map) in out.attention_maps.iter().enumerate() {
            let max = map.iter().cloned().fold(f64::MIN, f64::max).max(1e-12);
            let normalized = map.mapv(|v| v / max);
            data_io::write_gray_plane(&dir.join(format!("stage{}.png", i + 2)), &normalized)?;
        }
    }
    println!(
        "alpha ({}x{}) written to {}",
        out.alpha.0.dim().0,
        out.alpha.0.dim().1,
        out_alpha.display()
    );
    Ok(())
}

fn compare_cmd(images_dir: &Path, methods: &[String], out_dir: &Path) -> Result<()> {
    let mut spec = harness::ComparisonSpec::default();
    for m in methods {
        let (name, dir) = m.split_once('=').ok_or_else(|| {
            Error::InvalidArgument(format!("--method must be NAME=DIR, got {m:?}"))
        })?;
        let mut alphas = BTreeMap::new();
        for (stem, path) in png_stems(Path::new(dir))? {
            alphas.insert(stem, data_io::read_alpha(&path)?);
        }
        spec.methods.push((name.to_string(), alphas));
    }
    let mut images = Vec::new();
    for (stem, path) in png_stems(images_dir)? {
        images.push((stem, data_io::read_image(&path)?));
    }
    if images.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no images found in {}",
            images_dir.display()
        )));
    }
    let written = harness::emit_comparison(&images, &spec, out_dir)?;
    println!("wrote {} comparison sheets to {}", written.len(), out_dir.display());
    Ok(())
}

/// Deterministic synthetic asset dump used by examples and smoke tests to
/// exercise `compose` without real datasets.
pub fn write_synthetic_assets(
    fg_dir: &Path,
    bg_dir: &Path,
    n_fg: usize,
    n_bg: usize,
    side: usize,
    seed: u64,
) -> Result<()> {
    std::fs::create_dir_all(fg_dir)?;
    std::fs::create_dir_all(bg_dir)?;
    for i in 0..n_fg {
        let (asset, _) = synth::synth_foreground(seed + i as u64, side, side);
        data_io::write_image(&fg_dir.join(format!("{}.png", asset.id)), &asset.foreground)?;
        data_io::write_alpha(&fg_dir.join(format!("{}.alpha.png", asset.id)), &asset.alpha, false)?;
    }
    for i in 0..n_bg {
        let (bg, id) = synth::synth_background(seed + 1000 + i as u64, side, side);
        data_io::write_image(&bg_dir.join(format!("{id}.png")), &bg)?;
    }
    Ok(())
}
