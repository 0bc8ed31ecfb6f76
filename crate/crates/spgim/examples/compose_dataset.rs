//! Composite synthetic foregrounds over backgrounds and write a dataset
//! directory with images, alphas, trimaps, saliency targets, and a
//! JSON-lines manifest.
//!
//!     cargo run --example compose_dataset

use spgim::data::{self, io as data_io, CompositionParams, Split};

fn main() -> anyhow::Result<()> {
    let out = std::env::temp_dir().join("spgim-demo/dataset");
    let fg_dir = out.join("assets/fg");
    let bg_dir = out.join("assets/bg");
    spgim::cli::write_synthetic_assets(&fg_dir, &bg_dir, 3, 6, 64, 7)?;

    // Plan: each foreground paired with `ratio` backgrounds, sampled
    // without replacement within a foreground.
    let mut foregrounds = Vec::new();
    for entry in std::fs::read_dir(&fg_dir)? {
        let path = entry?.path();
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        if let Some(stem) = name.strip_suffix(".alpha.png") {
            foregrounds.push(data::ForegroundAsset {
                foreground: data_io::read_image(&fg_dir.join(format!("{stem}.png")))?,
                alpha: data_io::read_alpha(&path)?,
                id: stem.to_string(),
            });
        }
    }
    foregrounds.sort_by(|a, b| a.id.cmp(&b.id));
    let mut backgrounds = Vec::new();
    for entry in std::fs::read_dir(&bg_dir)? {
        let path = entry?.path();
        let stem = path.file_stem().unwrap().to_string_lossy().to_string();
        backgrounds.push((stem, data_io::read_image(&path)?));
    }
    backgrounds.sort_by(|a, b| a.0.cmp(&b.0));

    let fg_ids: Vec<String> = foregrounds.iter().map(|f| f.id.clone()).collect();
    let bg_ids: Vec<String> = backgrounds.iter().map(|(id, _)| id.clone()).collect();
    let plan = data::plan_composition(&fg_ids, &bg_ids, 4, Split::Train, 42)?;
    println!(
        "planned {} samples from {} foregrounds x ratio {}",
        plan.pairs.len(),
        fg_ids.len(),
        plan.ratio
    );

    for sub in ["image", "alpha", "trimap", "saliency"] {
        std::fs::create_dir_all(out.join(sub))?;
    }
    let params = CompositionParams::default();
    let mut records = Vec::new();
    for (k, pair) in plan.pairs.iter().enumerate() {
        let sample = data::compose_sample(
            &foregrounds[pair.fg_index],
            &backgrounds[pair.bg_index].1,
            &pair.bg_id,
            pair.seed,
            &params,
        )?;
        let rec = data::ManifestRecord {
            image: format!("image/{k:04}.png"),
            alpha: format!("alpha/{k:04}.png"),
            trimap: format!("trimap/{k:04}.png"),
            saliency: format!("saliency/{k:04}.png"),
            fg_id: pair.fg_id.clone(),
            bg_id: pair.bg_id.clone(),
            seed: pair.seed,
            flags: sample.flags.clone(),
        };
        data_io::write_image(&out.join(&rec.image), &sample.image)?;
        data_io::write_alpha(&out.join(&rec.alpha), &sample.alpha_gt, false)?;
        data_io::write_trimap(&out.join(&rec.trimap), &sample.trimap)?;
        data_io::write_gray_plane(&out.join(&rec.saliency), &sample.saliency_target.values)?;
        records.push(rec);
    }
    let manifest = data::DatasetManifest {
        records,
        split: Split::Train,
        composition_ratio: plan.ratio,
    };
    data::write_manifest(&out.join("manifest.jsonl"), &manifest)?;
    println!("dataset written to {}", out.display());
    Ok(())
}
