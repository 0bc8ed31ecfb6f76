//! Captioner contracts: grid arithmetic, softmax normalization, causality,
//! attention-map normalization, backward-direction symmetry, gradient
//! checks, and toy-corpus convergence.

use ndarray::Array2;

use crate::data::synth::synth_captioned_scene;
use crate::nn::{BackboneConfig, Fwd, ParamStore, SgdMomentum};
use crate::tensor::Graph;
use crate::verify::gradcheck_params;

use super::corpus::{toy_corpus, toy_tokenizer};
use super::tokenizer::{EOS, SOS};
use super::*;

fn micro_config(vocab_size: usize, share: bool) -> CaptionerConfig {
    CaptionerConfig {
        backbone: BackboneConfig {
            in_channels: 3,
            width_multiplier: 0.125,
            blocks_per_stage: [1, 1, 1, 1],
        },
        layers: 1,
        heads: 2,
        model_width: 8,
        vocab_size,
        max_len: 8,
        dropout: 0.0,
        share_backward_decoder: share,
    }
}

fn micro_grid(seed: u64, n: usize, d: usize) -> GridFeatures {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let tokens = Array2::from_shape_fn((n, d), |_| rng.random_range(-0.5..0.5));
    GridFeatures {
        tokens,
        grid_h: 1,
        grid_w: n,
    }
}

#[test]
fn encode_image_token_counts() {
    let mut ps = ParamStore::new(1);
    let cap = Captioner::new(&mut ps, "captioner", micro_config(6, false)).unwrap();
    let (img, _) = synth_captioned_scene(5, 64, 64);
    let grid = cap.encode_image(&ps, &img).unwrap();
    assert_eq!(grid.tokens.nrows(), 4, "64x64 -> 2x2 grid");
    assert_eq!(grid.tokens.ncols(), 8);
    assert!(grid.tokens.iter().all(|v| v.is_finite()));

    // Token count is (H/32)(W/32) regardless of width: 224x224 -> 49.
    let (img, _) = synth_captioned_scene(6, 224, 224);
    let grid = cap.encode_image(&ps, &img).unwrap();
    assert_eq!(grid.tokens.nrows(), 49);
}

#[test]
fn encode_image_rejects_non_divisible_with_padding_hint() {
    let mut ps = ParamStore::new(1);
    let cap = Captioner::new(&mut ps, "captioner", micro_config(6, false)).unwrap();
    let (img, _) = synth_captioned_scene(7, 48, 64);
    let err = cap.encode_image(&ps, &img).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("48") && msg.contains("64") && msg.contains("16"), "{msg}");
}

#[test]
fn encode_image_is_deterministic() {
    let mut ps = ParamStore::new(2);
    let cap = Captioner::new(&mut ps, "captioner", micro_config(6, false)).unwrap();
    let (img, _) = synth_captioned_scene(8, 64, 64);
    let a = cap.encode_image(&ps, &img).unwrap();
    let b = cap.encode_image(&ps, &img).unwrap();
    assert_eq!(a.tokens, b.tokens);
}

#[test]
fn caption_step_distribution_sums_to_one() {
    let mut ps = ParamStore::new(3);
    let cap = Captioner::new(&mut ps, "captioner", micro_config(6, false)).unwrap();
    let grid = micro_grid(1, 4, 8);
    let dist = cap.caption_step(&ps, &grid, &[SOS, 4, 5]).unwrap();
    assert_eq!(dist.len(), 6);
    assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-5);
    assert!(dist.iter().all(|&p| p >= 0.0));
}

#[test]
fn caption_step_validates_prefix() {
    let mut ps = ParamStore::new(3);
    let cap = Captioner::new(&mut ps, "captioner", micro_config(6, false)).unwrap();
    let grid = micro_grid(1, 4, 8);
    assert!(cap.caption_step(&ps, &grid, &[4, 5]).is_err());
    let long = vec![SOS, 4, 5, 4, 5, 4, 5, 4, 5];
    assert!(matches!(
        cap.caption_step(&ps, &grid, &long),
        Err(crate::Error::SequenceTooLong { .. })
    ));
}

#[test]
fn causal_mask_keeps_earlier_logits_stable() {
    let mut ps = ParamStore::new(4);
    let cap = Captioner::new(&mut ps, "captioner", micro_config(6, false)).unwrap();
    let grid = micro_grid(2, 4, 8);
    let short = cap.prefix_logits(&ps, &grid, &[SOS]).unwrap();
    let long = cap.prefix_logits(&ps, &grid, &[SOS, 4]).unwrap();
    let longer = cap.prefix_logits(&ps, &grid, &[SOS, 4, 5, 4]).unwrap();
    for j in 0..6 {
        assert!((short[[0, j]] - long[[0, j]]).abs() < 1e-6);
        assert!((long[[0, j]] - longer[[0, j]]).abs() < 1e-6);
        assert!((long[[1, j]] - longer[[1, j]]).abs() < 1e-6);
    }
}

#[test]
fn cross_attention_rows_sum_to_one() {
    let mut ps = ParamStore::new(5);
    let cap = Captioner::new(&mut ps, "captioner", micro_config(6, false)).unwrap();
    let grid = micro_grid(3, 6, 8);
    let seq = CaptionSequence::forward(vec![SOS, 4, 5, 4, EOS]);
    let probs = cap.cross_attention_probs(&ps, &grid, &seq).unwrap();
    let (h, t, _) = probs.dim();
    for hi in 0..h {
        for ti in 0..t {
            let s: f64 = probs.index_axis(ndarray::Axis(0), hi).row(ti).sum();
            assert!((s - 1.0).abs() < 1e-5, "row sum {s}");
        }
    }
}

#[test]
fn word_attention_maps_normalized_and_counted() {
    let mut ps = ParamStore::new(6);
    let cap = Captioner::new(&mut ps, "captioner", micro_config(6, false)).unwrap();
    let grid = GridFeatures {
        grid_h: 2,
        grid_w: 3,
        ..micro_grid(4, 6, 8)
    };
    let seq = CaptionSequence::forward(vec![SOS, 4, 5, 4, EOS]);
    let out = cap.export_word_attention(&ps, &grid, &seq, 0).unwrap();
    assert_eq!(out.maps.len(), 3, "one map per word, delimiters excluded");
    assert!(out.warning.is_some(), "untrained weights carry a watermark");
    for map in &out.maps {
        assert_eq!(map.dim(), (2, 3));
        assert!(map.iter().all(|&v| v >= 0.0));
        assert!((map.sum() - 1.0).abs() < 1e-5);
    }
    let trained = cap.export_word_attention(&ps, &grid, &seq, 10).unwrap();
    assert!(trained.warning.is_none());
}

#[test]
fn head_average_matches_explicit_loop() {
    let mut ps = ParamStore::new(7);
    let cap = Captioner::new(&mut ps, "captioner", micro_config(6, false)).unwrap();
    let grid = GridFeatures {
        grid_h: 2,
        grid_w: 3,
        ..micro_grid(5, 6, 8)
    };
    let seq = CaptionSequence::forward(vec![SOS, 5, 4, EOS]);
    let out = cap.export_word_attention(&ps, &grid, &seq, 1).unwrap();
    let probs = cap.cross_attention_probs(&ps, &grid, &seq).unwrap();
    let (heads, _, n) = probs.dim();
    for (k, map) in out.maps.iter().enumerate() {
        for ni in 0..n {
            let mut acc = 0.0;
            for hi in 0..heads {
                acc += probs[[hi, k + 1, ni]];
            }
            acc /= heads as f64;
            let got = map[[ni / 3, ni % 3]];
            assert!((got - acc).abs() < 1e-12, "word {k} cell {ni}");
        }
    }
}

#[test]
fn palindrome_loss_matches_under_shared_decoder() {
    let mut ps = ParamStore::new(8);
    let cap = Captioner::new(&mut ps, "captioner", micro_config(6, true)).unwrap();
    let grid = micro_grid(6, 4, 8);
    // palindrome: 4 5 4
    let seq = CaptionSequence::forward(vec![SOS, 4, 5, 4, EOS]);

    let mut g = Graph::new();
    let mut f = Fwd::inference(&mut g, &ps);
    let grid_var = {
        let (n, d) = grid.tokens.dim();
        let arr = ndarray::ArrayD::from_shape_fn(ndarray::IxDyn(&[1, n, d]), |ix| {
            grid.tokens[[ix[1], ix[2]]]
        });
        f.g.constant(arr)
    };
    let fwd = cap
        .caption_loss(&mut f, grid_var, std::slice::from_ref(&seq), Direction::Forward)
        .unwrap();
    let rev = seq.reversed();
    assert_eq!(rev.tokens, seq.tokens, "palindrome reverses to itself");
    let bwd = cap
        .caption_loss(&mut f, grid_var, &[rev], Direction::Backward)
        .unwrap();
    let lf = crate::tensor::to_scalar(f.g.value(fwd));
    let lb = crate::tensor::to_scalar(f.g.value(bwd));
    assert!((lf - lb).abs() < 1e-12, "forward {lf} vs backward {lb}");
}

#[test]
fn caption_loss_gradcheck_micro_decoder() {
    // 1 decoder layer, width 8, two-word vocabulary. The visual grid enters
    // as a parameter so its gradient is checked too.
    let mut ps = ParamStore::new(9);
    let cap = Captioner::new(&mut ps, "captioner", micro_config(6, false)).unwrap();
    ps.register("test.grid", &[1, 4, 8], crate::nn::Init::Normal { std: 0.5 });
    let captions = vec![
        CaptionSequence::forward(vec![SOS, 4, 5, 5, EOS]),
        CaptionSequence::forward(vec![SOS, 5, 4, EOS]),
    ];
    // The grid enters directly, so the visual front-end (backbone and
    // projection) stays out of this graph.
    let report = gradcheck_params(
        &ps,
        |name| !name.contains("backbone") && !name.contains(".proj"),
        6,
        1e-5,
        1e-8,
        |f| {
            let grid = f.param("test.grid");
            let grid2 = {
                let parts = [grid, grid];
                f.g.concat(0, &parts)
            };
            cap.bicaption_loss(f, grid2, &captions).unwrap()
        },
    );
    assert!(report.checked > 50, "checked {} elements", report.checked);
    assert!(
        report.max_rel_err < 1e-3,
        "max relative error {} at {:?}",
        report.max_rel_err,
        report.worst
    );
}

#[test]
fn toy_corpus_loss_halves_in_200_steps() {
    let corpus = toy_corpus(5, 32);
    let tok = toy_tokenizer(&corpus);
    let mut ps = ParamStore::new(10);
    let mut cfg = micro_config(tok.vocab_size(), false);
    cfg.model_width = 32;
    cfg.heads = 4;
    let cap = Captioner::new(&mut ps, "captioner", cfg).unwrap();
    let schedule = PretrainSchedule::new(220, 20);
    let mut opt = SgdMomentum::new(schedule.momentum, schedule.weight_decay);
    let mut first = None;
    let mut last = f64::INFINITY;
    for step in 0..200 {
        let report =
            train_bicaption(&cap, &mut ps, &tok, &corpus, &schedule, &mut opt, step).unwrap();
        assert_eq!(report.skipped_empty, 0);
        if step == 0 {
            first = Some(report.loss);
        }
        last = report.loss;
    }
    let first = first.unwrap();
    assert!(
        last < first / 2.0,
        "teacher-forced loss {last} did not halve from {first}"
    );
}

#[test]
fn empty_captions_are_skipped_with_count() {
    let corpus = toy_corpus(2, 32);
    let tok = toy_tokenizer(&corpus);
    let mut ps = ParamStore::new(11);
    let cap = Captioner::new(&mut ps, "captioner", micro_config(tok.vocab_size(), false)).unwrap();
    let schedule = PretrainSchedule::new(10, 2);
    let mut opt = SgdMomentum::new(schedule.momentum, schedule.weight_decay);
    let mut batch = corpus.clone();
    batch.push((corpus[0].0.clone(), "  ,, !".to_string()));
    let report = train_bicaption(&cap, &mut ps, &tok, &batch, &schedule, &mut opt, 0).unwrap();
    assert_eq!(report.skipped_empty, 1);

    let all_empty = vec![(corpus[0].0.clone(), "!!".to_string())];
    assert!(train_bicaption(&cap, &mut ps, &tok, &all_empty, &schedule, &mut opt, 1).is_err());
}

#[test]
fn schedule_shape_and_defaults() {
    let schedule = PretrainSchedule::new(100, 10);
    assert_eq!(schedule.backbone_max_lr, 0.2);
    assert_eq!(schedule.decoder_max_lr, 1e-3);
    assert_eq!(schedule.momentum, 0.9);
    assert_eq!(schedule.weight_decay, 1e-4);
    assert!(schedule.backbone_lr(0) < schedule.backbone_max_lr);
    assert!(schedule.decoder_lr(99) < 1e-9);
    assert!(PretrainSchedule::new(10, 0).validate().is_err());
}
