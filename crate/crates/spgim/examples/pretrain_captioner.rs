//! Pretrain the visual front-end through bidirectional captioning on the
//! in-repo toy corpus, then greedily decode a caption and export word-level
//! attention maps.
//!
//!     cargo run --example pretrain_captioner

use spgim::caption::{tokenizer, CaptionSequence};
use spgim::harness::{self, Branch, TrainConfig};

fn main() -> anyhow::Result<()> {
    let mut cfg = TrainConfig::desk_profile(Branch::Caption);
    cfg.seed = 11;
    cfg.input_size = 64;
    cfg.decoder_layers = 1;
    cfg.decoder_width = 32;
    cfg.decoder_heads = 4;
    cfg.pretrain_total_steps = 100;
    cfg.pretrain_warmup_steps = 10;

    let corpus = harness::toy_caption_records(6, 64);
    println!("toy corpus:");
    for (_, caption) in &corpus {
        println!("  - {caption}");
    }

    let (captioner, tok, ps, report) = harness::pretrain_captioner(&cfg, &corpus, |step, loss| {
        if step % 20 == 0 {
            println!("step {step:3}: bicaption loss {loss:.4}");
        }
    })?;
    println!(
        "loss {:.4} -> {:.4} over {} steps",
        report.first_loss, report.final_loss, report.steps
    );

    let out = std::env::temp_dir().join("spgim-demo/captioner.ckpt");
    std::fs::create_dir_all(out.parent().unwrap())?;
    let ckpt = harness::checkpoint_for(&cfg, report.steps, ps.clone(), Some(tok.words().to_vec()))?;
    harness::save_checkpoint(&out, &ckpt)?;
    println!("checkpoint written to {}", out.display());

    // Greedy decode on a fresh scene.
    let (image, truth) = spgim::data::synth::synth_captioned_scene(1234, 64, 64);
    let grid = captioner.encode_image(&ps, &image)?;
    let mut prefix = vec![tokenizer::SOS];
    for _ in 0..10 {
        let dist = captioner.caption_step(&ps, &grid, &prefix)?;
        let (next, _) = dist
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        if next == tokenizer::EOS {
            break;
        }
        prefix.push(next);
    }
    println!("truth:  {truth}");
    println!("decoded: {}", tok.decode(&prefix));

    // Word attention maps over the ground-truth caption.
    let seq = CaptionSequence::forward(tok.encode_caption(&truth));
    let attention = captioner.export_word_attention(&ps, &grid, &seq, report.steps)?;
    for (word_id, map) in attention.word_ids.iter().zip(attention.maps.iter()) {
        println!(
            "word {:10} attention mass peak {:.3}",
            tok.word(*word_id),
            map.iter().cloned().fold(f64::MIN, f64::max)
        );
    }
    Ok(())
}
