//! Train the guided matting branch against a frozen distillation
//! checkpoint (produced on the fly here), then save both checkpoints for
//! the inference example.
//!
//!     cargo run --example train_spgm

use spgim::data::{self, synth};
use spgim::harness::{self, Branch, TrainConfig};

fn main() -> anyhow::Result<()> {
    let params = data::CompositionParams::default();
    let composites: Vec<_> = (0..4)
        .map(|i| {
            let (fg, _) = synth::synth_foreground(100 + i, 64, 64);
            let (bg, bg_id) = synth::synth_background(200 + i, 64, 64);
            data::compose_sample(&fg, &bg, &bg_id, i, &params).unwrap()
        })
        .collect();

    // Distillation branch first.
    let mut spd_cfg = TrainConfig::desk_profile(Branch::Spd);
    spd_cfg.seed = 31;
    spd_cfg.epochs = 60;
    spd_cfg.milestones = vec![40];
    let spd_samples: Vec<_> = composites
        .iter()
        .map(|s| {
            (
                s.image.clone(),
                data::SaliencyTarget {
                    values: s.saliency_target.values.clone(),
                    downsample: params.saliency_downsample,
                },
            )
        })
        .collect();
    let (_spd_net, spd_ps, spd_report) = harness::train_spd(&spd_cfg, &spd_samples, None, |_, _| {})?;
    println!(
        "distillation: loss {:.5} -> {:.5}",
        spd_report.first_loss, spd_report.final_loss
    );
    let spd_ckpt = harness::checkpoint_for(&spd_cfg, spd_report.steps, spd_ps, None)?;

    // Matting branch against the frozen distillation weights.
    let mut cfg = TrainConfig::desk_profile(Branch::Spgm);
    cfg.seed = 32;
    cfg.epochs = 80;
    cfg.milestones = vec![60];
    let matting: Vec<_> = composites
        .iter()
        .map(|s| (s.image.clone(), s.alpha_gt.clone()))
        .collect();
    let (net, mut ps, spd_net, spd_ps) = harness::spgm_for_training(&cfg, &spd_ckpt)?;
    let guided = harness::guide_samples(&spd_net, &spd_ps, &matting)?;
    let report = harness::train_spgm(&cfg, &net, &mut ps, &guided, |step, loss| {
        if step % 10 == 0 {
            println!("step {step:3}: matting loss {loss:.5}");
        }
    })?;
    println!(
        "matting loss {:.5} -> {:.5} over {} steps",
        report.first_loss, report.final_loss, report.steps
    );

    let dir = std::env::temp_dir().join("spgim-demo");
    std::fs::create_dir_all(&dir)?;
    harness::save_checkpoint(&dir.join("spd.ckpt"), &spd_ckpt)?;
    harness::save_checkpoint(
        &dir.join("spgm.ckpt"),
        &harness::checkpoint_for(&cfg, report.steps, ps, None)?,
    )?;
    println!("checkpoints written to {}", dir.display());
    Ok(())
}
