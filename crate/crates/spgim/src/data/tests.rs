//! Oracle-backed tests for composition, trimaps, saliency targets, and
//! manifest planning.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::*;

fn uniform_alpha(h: usize, w: usize, v: f64) -> AlphaMatte {
    AlphaMatte(Array2::from_elem((h, w), v))
}

fn rand_plane(h: usize, w: usize, rng: &mut ChaCha20Rng) -> Array2<f64> {
    let mut a = Array2::zeros((h, w));
    for v in a.iter_mut() {
        *v = rng.random::<f64>();
    }
    a
}

fn rand_image(h: usize, w: usize, rng: &mut ChaCha20Rng) -> ImagePlane {
    let mut a = Array3::zeros((3, h, w));
    for v in a.iter_mut() {
        *v = rng.random::<f64>();
    }
    ImagePlane(a)
}

#[test]
fn compose_identity_cases() {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let bg = rand_image(8, 8, &mut rng);
    let fg_plane = rand_image(8, 8, &mut rng);

    // alpha == 1 everywhere -> I = F
    let fg = ForegroundAsset {
        foreground: fg_plane.clone(),
        alpha: uniform_alpha(8, 8, 1.0),
        id: "fg".into(),
    };
    let out = compose(&fg, &bg).unwrap();
    assert_eq!(out.0, fg_plane.0);

    // alpha == 0 everywhere -> I = B
    let fg0 = ForegroundAsset {
        foreground: fg_plane.clone(),
        alpha: uniform_alpha(8, 8, 0.0),
        id: "fg".into(),
    };
    let out = compose(&fg0, &bg).unwrap();
    assert_eq!(out.0, bg.0);

    // alpha 0.25, F all ones, B all zeros -> I = 0.25
    let fg_q = ForegroundAsset {
        foreground: ImagePlane(Array3::from_elem((3, 8, 8), 1.0)),
        alpha: uniform_alpha(8, 8, 0.25),
        id: "fg".into(),
    };
    let out = compose(&fg_q, &ImagePlane(Array3::zeros((3, 8, 8)))).unwrap();
    for &v in out.0.iter() {
        assert!((v - 0.25).abs() < 1e-15);
    }
}

#[test]
fn compose_rejects_bad_asset() {
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let fg = ForegroundAsset {
        foreground: rand_image(8, 8, &mut rng),
        alpha: AlphaMatte(Array2::from_elem((8, 8), 1.5)),
        id: "bad".into(),
    };
    assert!(compose(&fg, &rand_image(8, 8, &mut rng)).is_err());

    let fg = ForegroundAsset {
        foreground: rand_image(8, 8, &mut rng),
        alpha: uniform_alpha(6, 8, 1.0),
        id: "bad".into(),
    };
    let err = compose(&fg, &rand_image(8, 8, &mut rng)).unwrap_err();
    assert!(err.to_string().contains('8'), "dimensions reported: {err}");
}

#[test]
fn compose_resizes_background_to_cover() {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let fg = ForegroundAsset {
        foreground: rand_image(16, 16, &mut rng),
        alpha: uniform_alpha(16, 16, 0.5),
        id: "fg".into(),
    };
    let bg = rand_image(9, 23, &mut rng);
    let out = compose(&fg, &bg).unwrap();
    assert_eq!((out.height(), out.width()), (16, 16));
}

#[test]
fn compositing_residual_after_quantization() {
    // Quantize F, B, alpha to 8 bits as they would exist on disk, compose,
    // quantize the composite, and verify the blend residual stays within
    // 1/255.
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    for _ in 0..100 {
        let q = |v: f64| (v * 255.0).round() / 255.0;
        let fg_plane = ImagePlane(rand_image(16, 16, &mut rng).0.mapv(q));
        let alpha = AlphaMatte(rand_plane(16, 16, &mut rng).mapv(q));
        let bg = ImagePlane(rand_image(16, 16, &mut rng).0.mapv(q));
        let fg = ForegroundAsset {
            foreground: fg_plane.clone(),
            alpha: alpha.clone(),
            id: "fg".into(),
        };
        let out = compose(&fg, &bg).unwrap();
        for c in 0..3 {
            for y in 0..16 {
                for x in 0..16 {
                    let quantized = q(out.0[[c, y, x]]);
                    let expected = alpha.0[[y, x]] * fg_plane.0[[c, y, x]]
                        + (1.0 - alpha.0[[y, x]]) * bg.0[[c, y, x]];
                    assert!(
                        (quantized - expected).abs() <= 1.0 / 255.0 + 1e-12,
                        "residual {} at ({c},{y},{x})",
                        (quantized - expected).abs()
                    );
                }
            }
        }
    }
}

#[test]
fn saliency_target_constant_planes() {
    let one = make_saliency_target(&uniform_alpha(32, 32, 1.0), 2, 1.0).unwrap();
    for &v in one.values.iter() {
        assert!((v - 1.0).abs() < 1e-12);
    }
    let zero = make_saliency_target(&uniform_alpha(32, 32, 0.0), 2, 1.0).unwrap();
    for &v in zero.values.iter() {
        assert!(v.abs() < 1e-12);
    }
}

#[test]
fn saliency_target_checkerboard_matches_convolution_oracle() {
    // 8x8 checkerboard, downsample 2, sigma 1.0. Oracle: direct (non
    // separable) 2-d convolution with the outer-product kernel and
    // reflective padding, applied to an independently downsampled plane.
    let mut alpha = Array2::zeros((8, 8));
    for y in 0..8 {
        for x in 0..8 {
            alpha[[y, x]] = ((x + y) % 2) as f64;
        }
    }
    let got = make_saliency_target(&AlphaMatte(alpha.clone()), 2, 1.0).unwrap();

    // oracle downsample: plain 2x2 means
    let mut small = Array2::zeros((4, 4));
    for y in 0..4 {
        for x in 0..4 {
            small[[y, x]] = (alpha[[2 * y, 2 * x]]
                + alpha[[2 * y, 2 * x + 1]]
                + alpha[[2 * y + 1, 2 * x]]
                + alpha[[2 * y + 1, 2 * x + 1]])
                / 4.0;
        }
    }
    // oracle blur: dense 2-d kernel k(i)k(j)
    let k = gaussian_kernel(1.0);
    let r = k.len() / 2;
    let reflect = |i: isize, len: usize| -> usize {
        let len = len as isize;
        let mut i = i;
        loop {
            if i < 0 {
                i = -i - 1;
            } else if i >= len {
                i = 2 * len - 1 - i;
            } else {
                return i as usize;
            }
        }
    };
    for y in 0..4usize {
        for x in 0..4usize {
            let mut acc = 0.0;
            for (ki, kv) in k.iter().enumerate() {
                for (kj, kw) in k.iter().enumerate() {
                    let sy = reflect(y as isize + ki as isize - r as isize, 4);
                    let sx = reflect(x as isize + kj as isize - r as isize, 4);
                    acc += kv * kw * small[[sy, sx]];
                }
            }
            assert!(
                (got.values[[y, x]] - acc).abs() < 1e-12,
                "({y},{x}): got {} oracle {acc}",
                got.values[[y, x]]
            );
        }
    }
}

#[test]
fn saliency_target_mass_preservation_and_range() {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    for _ in 0..20 {
        let alpha = AlphaMatte(rand_plane(32, 32, &mut rng));
        let target = make_saliency_target(&alpha, 4, 1.0).unwrap();
        let down = area_downsample(&alpha.0, 4);
        let mean_t = target.values.mean().unwrap();
        let mean_d = down.mean().unwrap();
        assert!((mean_t - mean_d).abs() <= 1e-3, "mass drift {}", mean_t - mean_d);
        for &v in target.values.iter() {
            assert!((0.0..=1.0).contains(&v));
        }
    }
}

#[test]
fn saliency_target_validates_inputs() {
    assert!(make_saliency_target(&uniform_alpha(8, 8, 2.0), 2, 1.0).is_err());
    assert!(make_saliency_target(&uniform_alpha(8, 8, 0.5), 0, 1.0).is_err());
    assert!(make_saliency_target(&uniform_alpha(8, 8, 0.5), 2, 0.0).is_err());
}

#[test]
fn trimap_binary_alpha_no_unknown() {
    let mut alpha = Array2::zeros((10, 10));
    for y in 0..5 {
        for x in 0..10 {
            alpha[[y, x]] = 1.0;
        }
    }
    let tm = make_trimap(&AlphaMatte(alpha), 0.0, 1.0, (0, 0), 7).unwrap();
    assert!(tm.labels.iter().all(|&v| v != TRIMAP_UNKNOWN));
    assert!(!tm.degenerate);
}

#[test]
fn trimap_all_half_is_degenerate_unknown() {
    let tm = make_trimap(&uniform_alpha(6, 6, 0.5), 0.0, 1.0, (1, 15), 3).unwrap();
    assert!(tm.labels.iter().all(|&v| v == TRIMAP_UNKNOWN));
    assert!(tm.degenerate);
}

#[test]
fn trimap_single_pixel_dilation_matches_morphology_oracle() {
    // One fractional pixel at (4,4), radius 2: the unknown region must be
    // exactly the 5x5 Chebyshev disk. Oracle: brute-force dilation by
    // iterating the 8-connected neighborhood twice.
    let mut alpha = Array2::zeros((9, 9));
    alpha[[4, 4]] = 0.5;
    let tm = make_trimap_with_radius(&AlphaMatte(alpha.clone()), 0.0, 1.0, 2).unwrap();

    let mut oracle = Array2::<bool>::from_elem((9, 9), false);
    oracle[[4, 4]] = true;
    for _ in 0..2 {
        let prev = oracle.clone();
        for y in 0..9i32 {
            for x in 0..9i32 {
                'probe: for dy in -1..=1i32 {
                    for dx in -1..=1i32 {
                        let (sy, sx) = (y + dy, x + dx);
                        if (0..9).contains(&sy)
                            && (0..9).contains(&sx)
                            && prev[[sy as usize, sx as usize]]
                        {
                            oracle[[y as usize, x as usize]] = true;
                            break 'probe;
                        }
                    }
                }
            }
        }
    }
    for y in 0..9 {
        for x in 0..9 {
            let expect = if oracle[[y, x]] {
                TRIMAP_UNKNOWN
            } else {
                TRIMAP_BACKGROUND
            };
            assert_eq!(tm.labels[[y, x]], expect, "at ({y},{x})");
        }
    }
}

#[test]
fn trimap_fractional_pixels_stay_unknown() {
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    for seed in 0..10u64 {
        let alpha = AlphaMatte(rand_plane(12, 12, &mut rng).mapv(|v| (v * 4.0).round() / 4.0));
        let tm = make_trimap(&alpha, 0.0, 1.0, (1, 15), seed).unwrap();
        for y in 0..12 {
            for x in 0..12 {
                let a = alpha.0[[y, x]];
                if a > 0.0 && a < 1.0 {
                    assert_eq!(tm.labels[[y, x]], TRIMAP_UNKNOWN);
                }
            }
        }
    }
}

#[test]
fn trimap_rejects_bad_thresholds() {
    assert!(make_trimap(&uniform_alpha(4, 4, 0.5), 0.5, 0.5, (1, 2), 0).is_err());
    assert!(make_trimap(&uniform_alpha(4, 4, 0.5), -0.1, 1.0, (1, 2), 0).is_err());
    assert!(make_trimap(&uniform_alpha(4, 4, 0.5), 0.0, 1.1, (1, 2), 0).is_err());
}

#[test]
fn plan_counts_and_determinism() {
    let fgs: Vec<String> = (0..2).map(|i| format!("fg{i}")).collect();
    let bgs: Vec<String> = (0..5).map(|i| format!("bg{i}")).collect();
    let plan = plan_composition(&fgs, &bgs, 3, Split::Train, 42).unwrap();
    assert_eq!(plan.pairs.len(), 6);
    assert!(!plan.sampled_with_replacement);

    let plan2 = plan_composition(&fgs, &bgs, 3, Split::Train, 42).unwrap();
    assert_eq!(plan.pairs, plan2.pairs);

    let plan3 = plan_composition(&fgs, &bgs, 3, Split::Train, 43).unwrap();
    assert_ne!(plan.pairs, plan3.pairs);

    // no repeats within one foreground when the pool suffices
    for fg in 0..2 {
        let mut seen: Vec<usize> = plan
            .pairs
            .iter()
            .filter(|p| p.fg_index == fg)
            .map(|p| p.bg_index)
            .collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 3);
    }
}

#[test]
fn plan_small_pool_falls_back_to_replacement() {
    let fgs = vec!["fg0".to_string()];
    let bgs = vec!["bg0".to_string(), "bg1".to_string()];
    let plan = plan_composition(&fgs, &bgs, 5, Split::Test, 1).unwrap();
    assert_eq!(plan.pairs.len(), 5);
    assert!(plan.sampled_with_replacement);
    assert!(plan_composition(&fgs, &[], 5, Split::Test, 1).is_err());
    assert!(plan_composition(&fgs, &bgs, 0, Split::Test, 1).is_err());
}

#[test]
fn manifest_jsonl_field_order() {
    let manifest = DatasetManifest {
        records: vec![ManifestRecord {
            image: "img/0.png".into(),
            alpha: "alpha/0.png".into(),
            trimap: "trimap/0.png".into(),
            saliency: "sal/0.png".into(),
            fg_id: "fg0".into(),
            bg_id: "bg0".into(),
            seed: 7,
            flags: vec![],
        }],
        split: Split::Train,
        composition_ratio: 100,
    };
    let line = manifest.to_jsonl().unwrap();
    assert_eq!(
        line,
        "{\"image\":\"img/0.png\",\"alpha\":\"alpha/0.png\",\"trimap\":\"trimap/0.png\",\"saliency\":\"sal/0.png\",\"fg_id\":\"fg0\",\"bg_id\":\"bg0\",\"seed\":7,\"flags\":[]}\n"
    );
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    fn alpha_strategy() -> impl Strategy<Value = AlphaMatte> {
        proptest::collection::vec(0.0f64..=1.0, 64).prop_map(|v| {
            AlphaMatte(Array2::from_shape_vec((8, 8), v).unwrap().mapv(|x| (x * 255.0).round() / 255.0))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        // Blend residual stays within one quantization step after an 8-bit
        // round-trip of every operand.
        #[test]
        fn compositing_residual_bounded(alpha in alpha_strategy(), seed in 0u64..1000) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let q = |v: f64| (v * 255.0).round() / 255.0;
            let fg_plane = ImagePlane(rand_image(8, 8, &mut rng).0.mapv(q));
            let bg = ImagePlane(rand_image(8, 8, &mut rng).0.mapv(q));
            let fg = ForegroundAsset {
                foreground: fg_plane.clone(),
                alpha: alpha.clone(),
                id: "p".into(),
            };
            let out = compose(&fg, &bg).unwrap();
            for c in 0..3 {
                for y in 0..8 {
                    for x in 0..8 {
                        let expect = alpha.0[[y, x]] * fg_plane.0[[c, y, x]]
                            + (1.0 - alpha.0[[y, x]]) * bg.0[[c, y, x]];
                        prop_assert!((q(out.0[[c, y, x]]) - expect).abs() <= 1.0 / 255.0 + 1e-12);
                    }
                }
            }
        }

        // Every fractional-alpha pixel lands in the unknown band, for any
        // drawn dilation radius.
        #[test]
        fn trimap_unknown_covers_fractional(alpha in alpha_strategy(), seed in 0u64..1000) {
            let tm = make_trimap(&alpha, 0.0, 1.0, (1, 15), seed).unwrap();
            for y in 0..8 {
                for x in 0..8 {
                    let a = alpha.0[[y, x]];
                    if a > 0.0 && a < 1.0 {
                        prop_assert_eq!(tm.labels[[y, x]], TRIMAP_UNKNOWN);
                    }
                }
            }
        }

        // Saliency targets stay in range and preserve mean mass.
        #[test]
        fn saliency_target_range_and_mass(alpha in alpha_strategy(), sigma in 0.5f64..2.5) {
            let target = make_saliency_target(&alpha, 2, sigma).unwrap();
            let down = area_downsample(&alpha.0, 2);
            prop_assert!(target.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((target.values.mean().unwrap() - down.mean().unwrap()).abs() <= 1e-3);
        }
    }
}

#[test]
fn synth_scenes_are_deterministic_and_valid() {
    let (fg1, cap1) = synth::synth_foreground(11, 32, 32);
    let (fg2, cap2) = synth::synth_foreground(11, 32, 32);
    assert_eq!(fg1.alpha.0, fg2.alpha.0);
    assert_eq!(cap1, cap2);
    fg1.validate().unwrap();
    // soft edge produces fractional alphas
    assert!(fg1.alpha.0.iter().any(|&v| v > 0.0 && v < 1.0));
    let (img, caption) = synth::synth_captioned_scene(3, 32, 32);
    assert_eq!(img.height(), 32);
    assert!(caption.contains("over a"));
}
