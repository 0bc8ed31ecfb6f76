//! Full-pipeline inference: reuse the checkpoints written by the
//! `train_spgm` example (training quickly if they are missing), run on a
//! held-out synthetic scene of odd size, and dump every intermediate.
//!
//!     cargo run --example run_inference

use spgim::data::{io as data_io, synth};
use spgim::harness;

fn main() -> anyhow::Result<()> {
    let dir = std::env::temp_dir().join("spgim-demo");
    let spd_path = dir.join("spd.ckpt");
    let spgm_path = dir.join("spgm.ckpt");
    if !spd_path.exists() || !spgm_path.exists() {
        println!("checkpoints missing; running the train_spgm example first");
        let status = std::process::Command::new(std::env::current_exe()?.parent().unwrap().join("train_spgm"))
            .status();
        if !status.map(|s| s.success()).unwrap_or(false) {
            anyhow::bail!("run `cargo run --example train_spgm` first");
        }
    }

    let spd = harness::load_checkpoint(&spd_path)?;
    let spgm = harness::load_checkpoint(&spgm_path)?;
    let pipeline = harness::Pipeline::from_checkpoints(&spd, &spgm)?;

    // A held-out scene at a non-multiple-of-32 size exercises the padding
    // round-trip.
    let (fg, _) = synth::synth_foreground(999, 50, 70);
    let (bg, _) = synth::synth_background(998, 50, 70);
    let image = spgim::data::compose(&fg, &bg)?;
    let out = pipeline.run(&image)?;
    println!("input 50x70 -> alpha {:?}", out.alpha.0.dim());
    println!(
        "saliency mask {:?} at stride {}",
        out.saliency_mask.values.dim(),
        out.saliency_mask.stride
    );
    for (i, a) in out.level_alphas.iter().enumerate() {
        println!("level {} alpha {:?}", i + 1, a.0.dim());
    }

    std::fs::create_dir_all(&dir)?;
    data_io::write_alpha(&dir.join("predicted_alpha.png"), &out.alpha, false)?;
    data_io::write_gray_plane(&dir.join("saliency_mask.png"), &out.saliency_mask.values)?;
    let sad = spgim::metrics::sad(&out.alpha.0, &fg.alpha.0, None)?;
    println!("SAD against the true matte: {sad:.4} (thousands of alpha units)");
    println!("outputs in {}", dir.display());
    Ok(())
}
