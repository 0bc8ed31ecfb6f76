//! Metric tests against independent oracles: plain-loop SAD/MSE, a separable
//! convolution route for Grad, and a union-find reimplementation of the
//! connectivity sweep.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::*;

fn rand_plane(h: usize, w: usize, rng: &mut ChaCha20Rng) -> Array2<f64> {
    let mut a = Array2::zeros((h, w));
    for v in a.iter_mut() {
        *v = rng.random::<f64>();
    }
    a
}

/// Union-find based reimplementation of the connectivity error.
pub fn conn_oracle(pred: &Array2<f64>, gt: &Array2<f64>, step: f64) -> f64 {
    let (h, w) = pred.dim();
    let n_steps = (1.0 / step).floor() as usize;

    fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }

    let mut l_map = vec![-1.0f64; h * w];
    for k in 1..=n_steps {
        let theta = k as f64 * step;
        let both: Vec<bool> = (0..h * w)
            .map(|p| pred[[p / w, p % w]] >= theta && gt[[p / w, p % w]] >= theta)
            .collect();
        let mut parent: Vec<usize> = (0..h * w).collect();
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                if !both[p] {
                    continue;
                }
                if x + 1 < w && both[p + 1] {
                    let (a, b) = (find(&mut parent, p), find(&mut parent, p + 1));
                    parent[a.max(b)] = a.min(b);
                }
                if y + 1 < h && both[p + w] {
                    let (a, b) = (find(&mut parent, p), find(&mut parent, p + w));
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        // size and first-pixel index per root
        let mut size = vec![0usize; h * w];
        let mut first = vec![usize::MAX; h * w];
        for p in 0..h * w {
            if both[p] {
                let r = find(&mut parent, p);
                size[r] += 1;
                first[r] = first[r].min(p);
            }
        }
        let best_root = (0..h * w)
            .filter(|&p| size[p] > 0)
            .max_by(|&a, &b| size[a].cmp(&size[b]).then(first[b].cmp(&first[a])));
        let prev = (k - 1) as f64 * step;
        for p in 0..h * w {
            let in_omega = match best_root {
                Some(r) => both[p] && find(&mut parent, p) == r,
                None => false,
            };
            if l_map[p] == -1.0 && !in_omega {
                l_map[p] = prev;
            }
        }
    }
    let mut acc = 0.0;
    for p in 0..h * w {
        let l = if l_map[p] == -1.0 { 1.0 } else { l_map[p] };
        let pd = pred[[p / w, p % w]] - l;
        let gd = gt[[p / w, p % w]] - l;
        let phi_p = 1.0 - pd * f64::from(pd >= CONN_THETA);
        let phi_g = 1.0 - gd * f64::from(gd >= CONN_THETA);
        acc += (phi_p - phi_g).abs();
    }
    acc / 1000.0
}

/// Separable route for the gradient amplitude: 1-d Gaussian along one axis,
/// 1-d derivative along the other, then divide by the independently computed
/// L2 norm of the dense kernel.
pub fn grad_oracle(pred: &Array2<f64>, gt: &Array2<f64>, sigma: f64) -> f64 {
    let epsilon = 1e-2;
    let halfsize = (sigma
        * (-2.0 * ((2.0 * std::f64::consts::PI).sqrt() * sigma * epsilon).ln()).sqrt())
    .ceil() as usize;
    let gauss = |x: f64| {
        (-x * x / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
    };
    let dgauss = |x: f64| -x / (sigma * sigma) * gauss(x);
    let g1: Vec<f64> = (0..=2 * halfsize)
        .map(|i| gauss(i as f64 - halfsize as f64))
        .collect();
    let d1: Vec<f64> = (0..=2 * halfsize)
        .map(|i| dgauss(i as f64 - halfsize as f64))
        .collect();
    let mut norm_sq = 0.0;
    for a in &g1 {
        for b in &d1 {
            norm_sq += (a * b) * (a * b);
        }
    }
    let norm = norm_sq.sqrt();

    let replicate = |i: isize, len: usize| i.clamp(0, len as isize - 1) as usize;
    let pass_rows = |plane: &Array2<f64>, k: &[f64]| {
        let (h, w) = plane.dim();
        let r = k.len() / 2;
        let mut out = Array2::<f64>::zeros((h, w));
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (ki, kv) in k.iter().enumerate() {
                    let sx = replicate(x as isize + ki as isize - r as isize, w);
                    acc += kv * plane[[y, sx]];
                }
                out[[y, x]] = acc;
            }
        }
        out
    };
    let pass_cols = |plane: &Array2<f64>, k: &[f64]| {
        let (h, w) = plane.dim();
        let r = k.len() / 2;
        let mut out = Array2::<f64>::zeros((h, w));
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (ki, kv) in k.iter().enumerate() {
                    let sy = replicate(y as isize + ki as isize - r as isize, h);
                    acc += kv * plane[[sy, x]];
                }
                out[[y, x]] = acc;
            }
        }
        out
    };
    let amp = |plane: &Array2<f64>| {
        let gx = pass_rows(&pass_cols(plane, &g1), &d1).mapv(|v| v / norm);
        let gy = pass_cols(&pass_rows(plane, &g1), &d1).mapv(|v| v / norm);
        let mut a = Array2::<f64>::zeros(plane.dim());
        for ((o, x), y) in a.iter_mut().zip(gx.iter()).zip(gy.iter()) {
            *o = (x * x + y * y).sqrt();
        }
        a
    };
    let ap = amp(pred);
    let ag = amp(gt);
    let mut acc = 0.0;
    for (p, g) in ap.iter().zip(ag.iter()) {
        acc += (p - g) * (p - g);
    }
    acc / 1000.0
}

#[test]
fn sad_arithmetic_and_scaling() {
    let pred = Array2::from_shape_vec((1, 2), vec![0.5, 1.0]).unwrap();
    let gt = Array2::from_shape_vec((1, 2), vec![0.0, 1.0]).unwrap();
    let v = sad(&pred, &gt, None).unwrap();
    assert!((v - 0.0005).abs() < 1e-15);
    assert_eq!(sad(&gt, &gt, None).unwrap(), 0.0);
}

#[test]
fn mse_identities() {
    let ones = Array2::from_elem((4, 4), 1.0);
    let zeros = Array2::zeros((4, 4));
    assert_eq!(mse(&ones, &ones, None).unwrap(), 0.0);
    assert!((mse(&ones, &zeros, None).unwrap() - 1.0).abs() < 1e-15);
}

#[test]
fn sad_mse_match_loop_oracle() {
    let mut rng = ChaCha20Rng::seed_from_u64(10);
    for _ in 0..20 {
        let pred = rand_plane(16, 16, &mut rng);
        let gt = rand_plane(16, 16, &mut rng);
        let mut sad_o = 0.0;
        let mut mse_o = 0.0;
        for y in 0..16 {
            for x in 0..16 {
                sad_o += (pred[[y, x]] - gt[[y, x]]).abs();
                mse_o += (pred[[y, x]] - gt[[y, x]]).powi(2);
            }
        }
        sad_o /= 1000.0;
        mse_o /= 256.0;
        assert_eq!(sad(&pred, &gt, None).unwrap(), sad_o);
        assert!((mse(&pred, &gt, None).unwrap() - mse_o).abs() < 1e-15);
    }
}

#[test]
fn grad_zero_for_constant_and_equal() {
    let a = Array2::from_elem((16, 16), 0.6);
    let b = Array2::from_elem((16, 16), 0.1);
    assert!(grad(&a, &b, GRAD_SIGMA, None).unwrap().abs() < 1e-18);
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let p = rand_plane(16, 16, &mut rng);
    assert_eq!(grad(&p, &p, GRAD_SIGMA, None).unwrap(), 0.0);
}

#[test]
fn grad_step_edge_vs_ramp_matches_separable_oracle() {
    let mut step_img = Array2::zeros((16, 16));
    let mut ramp = Array2::zeros((16, 16));
    for y in 0..16 {
        for x in 0..16 {
            step_img[[y, x]] = f64::from(x >= 8);
            ramp[[y, x]] = x as f64 / 15.0;
        }
    }
    let got = grad(&step_img, &ramp, GRAD_SIGMA, None).unwrap();
    let oracle = grad_oracle(&step_img, &ramp, GRAD_SIGMA);
    assert!(
        (got - oracle).abs() <= 1e-9 * oracle.abs().max(1.0),
        "got {got}, oracle {oracle}"
    );
}

#[test]
fn grad_rejects_small_mattes() {
    let tiny = Array2::zeros((4, 4));
    assert!(grad(&tiny, &tiny, GRAD_SIGMA, None).is_err());
}

#[test]
fn conn_identities() {
    let ones = Array2::from_elem((8, 8), 1.0);
    assert_eq!(conn(&ones, &ones, CONN_STEP, None).unwrap(), 0.0);
    let mut rng = ChaCha20Rng::seed_from_u64(12);
    let p = rand_plane(8, 8, &mut rng);
    assert_eq!(conn(&p, &p, CONN_STEP, None).unwrap(), 0.0);
}

#[test]
fn conn_detached_island_matches_reference_oracle() {
    // Connected ground truth blob; prediction adds a detached 0.6 island.
    let mut gt = Array2::zeros((8, 8));
    for y in 1..5 {
        for x in 1..5 {
            gt[[y, x]] = 1.0;
        }
    }
    let mut pred = gt.clone();
    pred[[6, 6]] = 0.6;
    pred[[6, 7]] = 0.6;
    let got = conn(&pred, &gt, CONN_STEP, None).unwrap();
    let oracle = conn_oracle(&pred, &gt, CONN_STEP);
    assert!((got - oracle).abs() < 1e-12, "got {got}, oracle {oracle}");
    assert!(got > 0.0);
}

#[test]
fn conn_matches_reference_oracle_on_random_pairs() {
    let mut rng = ChaCha20Rng::seed_from_u64(13);
    for _ in 0..20 {
        let pred = rand_plane(8, 8, &mut rng);
        let gt = rand_plane(8, 8, &mut rng);
        let got = conn(&pred, &gt, CONN_STEP, None).unwrap();
        let oracle = conn_oracle(&pred, &gt, CONN_STEP);
        assert!((got - oracle).abs() < 1e-12, "got {got}, oracle {oracle}");
    }
}

#[test]
fn zero_iff_equal_all_metrics() {
    let mut rng = ChaCha20Rng::seed_from_u64(14);
    let p = rand_plane(16, 16, &mut rng);
    let report = evaluate_pair(&p, &p, None, Region::WholeImage).unwrap();
    assert_eq!(report.sad, 0.0);
    assert_eq!(report.mse, 0.0);
    assert_eq!(report.grad, 0.0);
    assert_eq!(report.conn, 0.0);

    let mut q = p.clone();
    q[[3, 3]] += 1e-6;
    q[[3, 3]] = q[[3, 3]].min(1.0);
    let report = evaluate_pair(&q, &p, None, Region::WholeImage).unwrap();
    assert!(report.sad > 0.0);
    assert!(report.mse > 0.0);
}

#[test]
fn symmetry_where_defined() {
    let mut rng = ChaCha20Rng::seed_from_u64(15);
    let p = rand_plane(16, 16, &mut rng);
    let g = rand_plane(16, 16, &mut rng);
    assert_eq!(sad(&p, &g, None).unwrap(), sad(&g, &p, None).unwrap());
    assert!((mse(&p, &g, None).unwrap() - mse(&g, &p, None).unwrap()).abs() < 1e-18);
    assert!(
        (grad(&p, &g, GRAD_SIGMA, None).unwrap() - grad(&g, &p, GRAD_SIGMA, None).unwrap()).abs()
            < 1e-15
    );
    // conn's operands are semantically directional (prediction scored
    // against truth); no symmetry contract is asserted either way.
    let _ = conn(&p, &g, CONN_STEP, None).unwrap();
}

#[test]
fn scale_sanity_linear_sad_quadratic_mse() {
    let mut rng = ChaCha20Rng::seed_from_u64(16);
    let gt = rand_plane(16, 16, &mut rng).mapv(|v| 0.25 + v * 0.5);
    let dir = rand_plane(16, 16, &mut rng).mapv(|v| v - 0.5);
    let eps = 1e-3;
    let p1 = &gt + &dir.mapv(|v| v * eps);
    let p2 = &gt + &dir.mapv(|v| v * 2.0 * eps);
    let s1 = sad(&p1, &gt, None).unwrap();
    let s2 = sad(&p2, &gt, None).unwrap();
    assert!((s2 / s1 - 2.0).abs() < 1e-9, "SAD ratio {}", s2 / s1);
    let m1 = mse(&p1, &gt, None).unwrap();
    let m2 = mse(&p2, &gt, None).unwrap();
    assert!((m2 / m1 - 4.0).abs() < 1e-9, "MSE ratio {}", m2 / m1);
}

#[test]
fn region_masking_matches_zero_weighted_complement() {
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    for _ in 0..10 {
        let p = rand_plane(16, 16, &mut rng);
        let g = rand_plane(16, 16, &mut rng);
        let mask = Array2::from_shape_fn((16, 16), |(y, x)| (y + x) % 3 != 0 && y >= 2);
        let s = sad(&p, &g, Some(&mask)).unwrap();
        let m = mse(&p, &g, Some(&mask)).unwrap();
        let mut s_o = 0.0;
        let mut m_o = 0.0;
        let mut n = 0;
        for y in 0..16 {
            for x in 0..16 {
                let wgt = f64::from(mask[[y, x]]);
                s_o += wgt * (p[[y, x]] - g[[y, x]]).abs();
                m_o += wgt * (p[[y, x]] - g[[y, x]]).powi(2);
                n += mask[[y, x]] as usize;
            }
        }
        assert_eq!(s, s_o / 1000.0);
        assert!((m - m_o / n as f64).abs() < 1e-18);

        let gr = grad(&p, &g, GRAD_SIGMA, Some(&mask)).unwrap();
        let ap = gradient_amplitude(&p, GRAD_SIGMA);
        let ag = gradient_amplitude(&g, GRAD_SIGMA);
        let mut gr_o = 0.0;
        for y in 0..16 {
            for x in 0..16 {
                if mask[[y, x]] {
                    gr_o += (ap[[y, x]] - ag[[y, x]]).powi(2);
                }
            }
        }
        assert!((gr - gr_o / 1000.0).abs() < 1e-18);
    }
}

#[test]
fn empty_region_rejected() {
    let p = Array2::zeros((4, 4));
    let mask = Array2::from_elem((4, 4), false);
    assert!(mse(&p, &p, Some(&mask)).is_err());
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    fn plane_strategy() -> impl Strategy<Value = Array2<f64>> {
        proptest::collection::vec(0.0f64..=1.0, 16 * 16)
            .prop_map(|v| Array2::from_shape_vec((16, 16), v).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn symmetric_metrics_commute(p in plane_strategy(), g in plane_strategy()) {
            prop_assert_eq!(sad(&p, &g, None).unwrap(), sad(&g, &p, None).unwrap());
            prop_assert!((mse(&p, &g, None).unwrap() - mse(&g, &p, None).unwrap()).abs() < 1e-18);
            prop_assert!(
                (grad(&p, &g, GRAD_SIGMA, None).unwrap() - grad(&g, &p, GRAD_SIGMA, None).unwrap())
                    .abs()
                    < 1e-15
            );
        }

        #[test]
        fn all_metrics_vanish_on_equal_inputs(p in plane_strategy()) {
            let report = evaluate_pair(&p, &p, None, Region::WholeImage).unwrap();
            prop_assert_eq!(report.sad, 0.0);
            prop_assert_eq!(report.mse, 0.0);
            prop_assert_eq!(report.grad, 0.0);
            prop_assert_eq!(report.conn, 0.0);
        }
    }
}

#[test]
fn unknown_mask_reads_trimap_labels() {
    let mut tm = Array2::<u8>::zeros((4, 4));
    tm[[1, 1]] = crate::data::TRIMAP_UNKNOWN;
    tm[[2, 2]] = crate::data::TRIMAP_FOREGROUND;
    let m = unknown_mask(&tm);
    assert!(m[[1, 1]]);
    assert!(!m[[2, 2]]);
    assert!(!m[[0, 0]]);
}
