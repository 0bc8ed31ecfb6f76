//! Ablation study on the desk-scale task: train the full matting branch and
//! its no-fusion / no-refinement variants against one frozen distillation
//! branch, then score each on a held-out multi-object composite.
//!
//!     cargo run --example ablation_study
//!
//! `ABLATION_STEPS` and `ABLATION_SEEDS` override the defaults (150 and
//! "11,12,13") for quicker experiments.

use spgim::data::{self, synth, CompositionParams};
use spgim::harness::{self, Branch, TrainConfig};
use spgim::metrics;
use spgim::nn::ParamStore;
use spgim::spgm::SpgmNetwork;

fn main() -> anyhow::Result<()> {
    let steps: u64 = std::env::var("ABLATION_STEPS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(150);
    let seeds: Vec<u64> = std::env::var("ABLATION_SEEDS")
        .unwrap_or_else(|_| "11,12,13".into())
        .split(',')
        .filter_map(|s| s.trim().parse().ok())
        .collect();

    // Training covers one, two, and three objects across all shape kinds;
    // the held-out scene is a new three-object arrangement of seen kinds
    // and colors.
    let params = CompositionParams::default();
    let train_set: Vec<_> = (0..4u64)
        .map(|i| {
            let fg = match i {
                0 => synth::synth_foreground(300, 64, 64).0,
                1 => synth::synth_foreground(301, 64, 64).0,
                2 => synth::synth_multi_foreground(502, 64, 64, 2).0,
                _ => synth::synth_multi_foreground(603, 64, 64, 3).0,
            };
            let (bg, bg_id) = synth::synth_background(400 + 11 * i, 64, 64);
            data::compose_sample(&fg, &bg, &bg_id, i, &params).unwrap()
        })
        .collect();
    let heldout = {
        let (fg, _) = synth::synth_multi_foreground(990, 64, 64, 3);
        let (bg, bg_id) = synth::synth_background(991, 64, 64);
        data::compose_sample(&fg, &bg, &bg_id, 99, &params).unwrap()
    };

    // One frozen distillation branch shared by every run.
    let mut spd_cfg = TrainConfig::desk_profile(Branch::Spd);
    spd_cfg.seed = 90;
    spd_cfg.epochs = 200;
    spd_cfg.milestones = vec![130];
    let spd_samples: Vec<_> = train_set
        .iter()
        .map(|s| {
            (
                s.image.clone(),
                data::SaliencyTarget {
                    values: s.saliency_target.values.clone(),
                    downsample: 16,
                },
            )
        })
        .collect();
    let (spd, spd_ps, spd_report) = harness::train_spd(&spd_cfg, &spd_samples, None, |_, _| {})?;
    println!(
        "distillation branch: loss {:.4} -> {:.4}",
        spd_report.first_loss, spd_report.final_loss
    );

    let matting: Vec<_> = train_set
        .iter()
        .map(|s| (s.image.clone(), s.alpha_gt.clone()))
        .collect();
    let guided = harness::guide_samples(&spd, &spd_ps, &matting)?;

    println!("{:>6} {:>12} {:>12} {:>12}", "seed", "full", "no-fusion", "no-refine");
    for &seed in &seeds {
        let mut row = Vec::new();
        for (use_tst, use_aft) in [(true, true), (false, true), (true, false)] {
            let mut cfg = TrainConfig::desk_profile(Branch::Spgm);
            cfg.seed = seed;
            cfg.epochs = steps;
            cfg.milestones = vec![steps * 2 / 3];
            let mut net_cfg = cfg.spgm_config();
            net_cfg.use_tst = use_tst;
            net_cfg.use_aft = use_aft;
            let mut ps = ParamStore::new(seed);
            let net = SpgmNetwork::new(&mut ps, "spgm", net_cfg)?;
            harness::train_spgm(&cfg, &net, &mut ps, &guided, |_, _| {})?;
            let (mask, pyramid) = spd.forward(&spd_ps, &heldout.image)?;
            let out = net.forward(&ps, &heldout.image, &mask, Some(&pyramid))?;
            row.push(metrics::sad(&out.final_alpha().0, &heldout.alpha_gt.0, None)?);
        }
        println!(
            "{seed:>6} {:>12.4} {:>12.4} {:>12.4}",
            row[0], row[1], row[2]
        );
    }
    Ok(())
}
