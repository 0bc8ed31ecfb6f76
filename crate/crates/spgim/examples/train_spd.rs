//! Train the saliency distillation branch on synthetic composites, with the
//! backbone transferred from a quick caption pretrain.
//!
//!     cargo run --example train_spd

use spgim::data::{self, synth};
use spgim::harness::{self, Branch, TrainConfig};

fn main() -> anyhow::Result<()> {
    // Quick caption pretrain for the transfer (a handful of steps).
    let mut cap_cfg = TrainConfig::desk_profile(Branch::Caption);
    cap_cfg.seed = 21;
    cap_cfg.input_size = 32;
    cap_cfg.decoder_layers = 1;
    cap_cfg.decoder_width = 32;
    cap_cfg.decoder_heads = 4;
    cap_cfg.pretrain_total_steps = 30;
    cap_cfg.pretrain_warmup_steps = 5;
    let corpus = harness::toy_caption_records(5, 32);
    let (_cap, tok, cap_ps, cap_report) = harness::pretrain_captioner(&cap_cfg, &corpus, |_, _| {})?;
    let cap_ckpt =
        harness::checkpoint_for(&cap_cfg, cap_report.steps, cap_ps, Some(tok.words().to_vec()))?;
    println!("caption pretrain: loss {:.3} -> {:.3}", cap_report.first_loss, cap_report.final_loss);

    // Synthetic composites and their saliency targets.
    let mut cfg = TrainConfig::desk_profile(Branch::Spd);
    cfg.seed = 22;
    cfg.epochs = 60;
    cfg.milestones = vec![40];
    let params = data::CompositionParams::default();
    let samples: Vec<_> = (0..4)
        .map(|i| {
            let (fg, _) = synth::synth_foreground(100 + i, 64, 64);
            let (bg, bg_id) = synth::synth_background(200 + i, 64, 64);
            let sample = data::compose_sample(&fg, &bg, &bg_id, i, &params).unwrap();
            (
                sample.image,
                data::SaliencyTarget {
                    values: sample.saliency_target.values,
                    downsample: params.saliency_downsample,
                },
            )
        })
        .collect();

    let (_net, ps, report) = harness::train_spd(&cfg, &samples, Some(&cap_ckpt), |step, loss| {
        if step % 10 == 0 {
            println!("step {step:3}: spd loss {loss:.5}");
        }
    })?;
    println!(
        "distillation loss {:.5} -> {:.5} over {} steps",
        report.first_loss, report.final_loss, report.steps
    );

    let out = std::env::temp_dir().join("spgim-demo/spd.ckpt");
    std::fs::create_dir_all(out.parent().unwrap())?;
    harness::save_checkpoint(&out, &harness::checkpoint_for(&cfg, report.steps, ps, None)?)?;
    println!("checkpoint written to {}", out.display());
    Ok(())
}
