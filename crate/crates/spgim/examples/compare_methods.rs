//! Emit side-by-side comparison sheets for two alpha "methods" (here the
//! ground truth and a degraded copy) over a few synthetic scenes.
//!
//!     cargo run --example compare_methods

use std::collections::BTreeMap;

use spgim::data::{synth, AlphaMatte};
use spgim::harness::{emit_comparison, ComparisonSpec};

fn main() -> anyhow::Result<()> {
    let mut images = Vec::new();
    let mut truth = BTreeMap::new();
    let mut degraded = BTreeMap::new();
    for i in 0..3u64 {
        let (fg, _) = synth::synth_foreground(40 + i, 64, 64);
        let (bg, _) = synth::synth_background(50 + i, 64, 64);
        let image = spgim::data::compose(&fg, &bg)?;
        let id = format!("scene{i}");
        truth.insert(id.clone(), fg.alpha.clone());
        degraded.insert(
            id.clone(),
            AlphaMatte(fg.alpha.0.mapv(|v| (v * 0.7 + 0.1).clamp(0.0, 1.0))),
        );
        images.push((id, image));
    }

    let spec = ComparisonSpec {
        methods: vec![("truth".into(), truth), ("degraded".into(), degraded)],
        cutout_rgb: [1.0, 1.0, 1.0],
    };
    let out_dir = std::env::temp_dir().join("spgim-demo/comparison");
    let written = emit_comparison(&images, &spec, &out_dir)?;
    for path in &written {
        println!("sheet: {}", path.display());
    }
    println!("columns per sheet: input | truth | degraded | cutout");
    Ok(())
}
