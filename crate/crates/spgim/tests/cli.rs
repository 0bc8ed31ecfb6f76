//! End-to-end CLI coverage: compose a small synthetic dataset, train both
//! branches briefly, infer, evaluate, compare, and count parameters —
//! exercising every subcommand surface and the on-disk formats.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_spgim")
}

fn run_ok(args: &[&str]) -> String {
    let out = Command::new(bin())
        .args(args)
        .output()
        .expect("spawn spgim binary");
    assert!(
        out.status.success(),
        "spgim {:?} failed:\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).to_string()
}

fn run_err(args: &[&str]) {
    let out = Command::new(bin())
        .args(args)
        .output()
        .expect("spawn spgim binary");
    assert!(
        !out.status.success(),
        "spgim {args:?} unexpectedly succeeded"
    );
}

fn workdir() -> tempfile::TempDir {
    tempfile::tempdir().expect("create temp workdir")
}

fn write_desk_config(path: &Path, branch: &str, seed: u64, epochs: u64) {
    let mut cfg = match branch {
        "spd" => spgim::harness::TrainConfig::desk_profile(spgim::harness::Branch::Spd),
        "spgm" => spgim::harness::TrainConfig::desk_profile(spgim::harness::Branch::Spgm),
        _ => spgim::harness::TrainConfig::desk_profile(spgim::harness::Branch::Caption),
    };
    cfg.seed = seed;
    cfg.width_multiplier = 0.125;
    cfg.epochs = epochs;
    cfg.milestones = vec![epochs.max(2) - 1];
    cfg.pretrain_total_steps = 4;
    cfg.pretrain_warmup_steps = 1;
    if branch == "caption" {
        cfg.input_size = 32;
        cfg.decoder_layers = 1;
        cfg.decoder_width = 16;
        cfg.decoder_heads = 2;
    }
    std::fs::write(path, cfg.to_toml().unwrap()).unwrap();
}

#[test]
fn full_cli_workflow() {
    let tmp = workdir();
    let dir = tmp.path().to_path_buf();
    let fg_dir = dir.join("fg");
    let bg_dir = dir.join("bg");
    spgim::cli::write_synthetic_assets(&fg_dir, &bg_dir, 2, 4, 64, 5).unwrap();

    // compose
    let dataset = dir.join("dataset");
    let stdout = run_ok(&[
        "compose",
        "--fg-dir",
        fg_dir.to_str().unwrap(),
        "--bg-dir",
        bg_dir.to_str().unwrap(),
        "--ratio",
        "3",
        "--split",
        "train",
        "--seed",
        "9",
        "--out",
        dataset.to_str().unwrap(),
    ]);
    assert!(stdout.contains("composed 6 samples"), "{stdout}");
    let manifest_path = dataset.join("manifest.jsonl");
    let manifest_text = std::fs::read_to_string(&manifest_path).unwrap();
    assert_eq!(manifest_text.lines().count(), 6);
    let first: serde_json::Value = serde_json::from_str(manifest_text.lines().next().unwrap()).unwrap();
    for key in ["image", "alpha", "trimap", "saliency", "fg_id", "bg_id", "seed", "flags"] {
        assert!(first.get(key).is_some(), "manifest field {key} missing");
    }
    // every referenced file exists
    for line in manifest_text.lines() {
        let rec: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["image", "alpha", "trimap", "saliency"] {
            let rel = rec[key].as_str().unwrap();
            assert!(dataset.join(rel).exists(), "{rel} missing");
        }
    }

    // caption manifest + pretrain
    let cap_manifest = dir.join("captions.jsonl");
    {
        let corpus = spgim::harness::toy_caption_records(4, 32);
        let mut records = Vec::new();
        for (i, (image, caption)) in corpus.iter().enumerate() {
            let rel = format!("cap{i}.png");
            spgim::data::io::write_image(&dir.join(&rel), image).unwrap();
            records.push(spgim::data::CaptionRecord {
                image: rel,
                caption: caption.clone(),
            });
        }
        spgim::data::write_caption_manifest(&cap_manifest, &records).unwrap();
    }
    let cap_cfg = dir.join("caption.toml");
    write_desk_config(&cap_cfg, "caption", 31, 2);
    let cap_ckpt = dir.join("captioner.ckpt");
    let scratch = dir.join("scratch");
    let out = Command::new(bin())
        .env("SPGIM_SCRATCH", &scratch)
        .args([
            "pretrain-captioner",
            "--manifest",
            cap_manifest.to_str().unwrap(),
            "--config",
            cap_cfg.to_str().unwrap(),
            "--out-ckpt",
            cap_ckpt.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(cap_ckpt.exists());
    assert!(
        scratch.join("spgim-logs/captioner.losses.jsonl").exists(),
        "loss log lands in SPGIM_SCRATCH"
    );

    // train-spd with caption transfer
    let spd_cfg = dir.join("spd.toml");
    write_desk_config(&spd_cfg, "spd", 32, 2);
    let spd_ckpt = dir.join("spd.ckpt");
    run_ok(&[
        "train-spd",
        "--manifest",
        manifest_path.to_str().unwrap(),
        "--init-ckpt",
        cap_ckpt.to_str().unwrap(),
        "--config",
        spd_cfg.to_str().unwrap(),
        "--out-ckpt",
        spd_ckpt.to_str().unwrap(),
    ]);

    // train-spgm against the frozen spd checkpoint
    let spgm_cfg = dir.join("spgm.toml");
    write_desk_config(&spgm_cfg, "spgm", 33, 2);
    let spgm_ckpt = dir.join("spgm.ckpt");
    run_ok(&[
        "train-spgm",
        "--manifest",
        manifest_path.to_str().unwrap(),
        "--spd-ckpt",
        spd_ckpt.to_str().unwrap(),
        "--config",
        spgm_cfg.to_str().unwrap(),
        "--out-ckpt",
        spgm_ckpt.to_str().unwrap(),
    ]);

    // infer-spd
    let sample_image = dataset.join("image/000000.png");
    let mask_out = dir.join("mask.png");
    run_ok(&[
        "infer-spd",
        "--image",
        sample_image.to_str().unwrap(),
        "--ckpt",
        spd_ckpt.to_str().unwrap(),
        "--out-mask",
        mask_out.to_str().unwrap(),
    ]);
    assert!(mask_out.exists());

    // infer with dumps
    let alpha_out = dir.join("pred/000000.png");
    std::fs::create_dir_all(alpha_out.parent().unwrap()).unwrap();
    let levels_dir = dir.join("levels");
    let attn_dir = dir.join("attention");
    run_ok(&[
        "infer",
        "--image",
        sample_image.to_str().unwrap(),
        "--spd-ckpt",
        spd_ckpt.to_str().unwrap(),
        "--spgm-ckpt",
        spgm_ckpt.to_str().unwrap(),
        "--out-alpha",
        alpha_out.to_str().unwrap(),
        "--dump-levels",
        levels_dir.to_str().unwrap(),
        "--dump-attention",
        attn_dir.to_str().unwrap(),
    ]);
    assert!(alpha_out.exists());
    for name in ["level1.png", "level2.png", "level3.png", "saliency_mask.png"] {
        assert!(levels_dir.join(name).exists(), "{name} missing");
    }
    for name in ["stage2.png", "stage3.png", "stage4.png"] {
        assert!(attn_dir.join(name).exists(), "{name} missing");
    }

    // eval: prediction vs ground truth (with trimaps)
    let gt_dir = dir.join("gt");
    let trimap_dir = dir.join("trimaps");
    std::fs::create_dir_all(&gt_dir).unwrap();
    std::fs::create_dir_all(&trimap_dir).unwrap();
    std::fs::copy(dataset.join("alpha/000000.png"), gt_dir.join("000000.png")).unwrap();
    std::fs::copy(dataset.join("trimap/000000.png"), trimap_dir.join("000000.png")).unwrap();
    let report_path = dir.join("report.json");
    let stdout = run_ok(&[
        "eval",
        "--pred-dir",
        alpha_out.parent().unwrap().to_str().unwrap(),
        "--gt-dir",
        gt_dir.to_str().unwrap(),
        "--trimap-dir",
        trimap_dir.to_str().unwrap(),
        "--report",
        report_path.to_str().unwrap(),
    ]);
    assert!(stdout.contains("whole-image mean"), "{stdout}");
    assert!(stdout.contains("unknown-only mean"), "{stdout}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    let mean = &report["whole_image"]["mean"];
    for key in ["sad", "mse", "grad", "conn"] {
        assert!(mean.get(key).is_some(), "report mean field {key}");
    }
    assert!(report.get("unknown_only").is_some());

    // compare sheets
    let images_dir = dir.join("inputs");
    std::fs::create_dir_all(&images_dir).unwrap();
    std::fs::copy(&sample_image, images_dir.join("000000.png")).unwrap();
    let sheets_dir = dir.join("sheets");
    run_ok(&[
        "compare",
        "--images-dir",
        images_dir.to_str().unwrap(),
        "--method",
        &format!("ours={}", alpha_out.parent().unwrap().to_str().unwrap()),
        "--method",
        &format!("truth={}", gt_dir.to_str().unwrap()),
        "--out-dir",
        sheets_dir.to_str().unwrap(),
    ]);
    assert!(sheets_dir.join("000000_comparison.png").exists());
    let legend: Vec<String> = serde_json::from_str(
        &std::fs::read_to_string(sheets_dir.join("000000_columns.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(legend.len(), 4, "input + 2 methods + cutout");

    // count-params
    let stdout = run_ok(&["count-params", "--ckpt", spd_ckpt.to_str().unwrap()]);
    assert!(stdout.contains("total"), "{stdout}");
    assert!(stdout.contains("spd.backbone"), "{stdout}");

}

#[test]
fn cli_fails_cleanly_on_bad_inputs() {
    let tmp = workdir();
    let dir = tmp.path().to_path_buf();
    // nonexistent checkpoint
    run_err(&[
        "count-params",
        "--ckpt",
        dir.join("missing.ckpt").to_str().unwrap(),
    ]);
    // compose without assets
    run_err(&[
        "compose",
        "--fg-dir",
        dir.to_str().unwrap(),
        "--bg-dir",
        dir.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    // malformed method spec
    run_err(&[
        "compare",
        "--images-dir",
        dir.to_str().unwrap(),
        "--method",
        "no-equals-sign",
        "--out-dir",
        dir.join("sheets").to_str().unwrap(),
    ]);
}
