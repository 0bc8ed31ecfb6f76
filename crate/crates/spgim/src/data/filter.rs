//! Plane filtering: Gaussian kernels, reflective-padding blur, and area
//! downsampling. These run outside the autodiff graph.

use ndarray::Array2;

/// Normalized 1-d Gaussian, truncated at ceil(3*sigma).
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    assert!(sigma > 0.0);
    let radius = (3.0 * sigma).ceil() as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - radius as f64;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

fn reflect(idx: isize, len: usize) -> usize {
    // Edge-inclusive reflection: -1 -> 0, len -> len-1. With a normalized
    // symmetric kernel this padding conserves total mass exactly.
    let len = len as isize;
    let mut i = idx;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= len {
            i = 2 * len - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Separable Gaussian blur with reflective padding.
pub fn blur_reflect(plane: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let kernel = gaussian_kernel(sigma);
    let radius = kernel.len() / 2;
    let (h, w) = plane.dim();
    let mut tmp = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let sx = reflect(x as isize + ki as isize - radius as isize, w);
                acc += kv * plane[[y, sx]];
            }
            tmp[[y, x]] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let sy = reflect(y as isize + ki as isize - radius as isize, h);
                acc += kv * tmp[[sy, x]];
            }
            out[[y, x]] = acc;
        }
    }
    out
}

/// Mean-pooling downsample by an integer factor. Ragged edges average over
/// the pixels that exist.
pub fn area_downsample(plane: &Array2<f64>, factor: usize) -> Array2<f64> {
    assert!(factor >= 1);
    if factor == 1 {
        return plane.clone();
    }
    let (h, w) = plane.dim();
    let oh = h.div_ceil(factor);
    let ow = w.div_ceil(factor);
    let mut out = Array2::<f64>::zeros((oh, ow));
    for oy in 0..oh {
        for ox in 0..ow {
            let y1 = ((oy + 1) * factor).min(h);
            let x1 = ((ox + 1) * factor).min(w);
            let mut acc = 0.0;
            let mut n = 0usize;
            for y in oy * factor..y1 {
                for x in ox * factor..x1 {
                    acc += plane[[y, x]];
                    n += 1;
                }
            }
            out[[oy, ox]] = acc / n as f64;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        for sigma in [0.5, 1.0, 1.4, 2.3] {
            let k = gaussian_kernel(sigma);
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for i in 0..k.len() / 2 {
                assert!((k[i] - k[k.len() - 1 - i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn reflect_indexing() {
        assert_eq!(reflect(-1, 5), 0);
        assert_eq!(reflect(-2, 5), 1);
        assert_eq!(reflect(5, 5), 4);
        assert_eq!(reflect(6, 5), 3);
        assert_eq!(reflect(2, 5), 2);
    }

    #[test]
    fn blur_conserves_mass_exactly() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(9);
        for (h, w) in [(4, 4), (7, 5), (16, 16)] {
            let mut plane = Array2::zeros((h, w));
            for v in plane.iter_mut() {
                *v = rng.random::<f64>();
            }
            let out = blur_reflect(&plane, 1.4);
            assert!((out.sum() - plane.sum()).abs() < 1e-9);
        }
    }

    #[test]
    fn blur_of_constant_is_constant() {
        let plane = Array2::from_elem((9, 7), 0.37);
        let out = blur_reflect(&plane, 1.0);
        for &v in out.iter() {
            assert!((v - 0.37).abs() < 1e-12);
        }
    }

    #[test]
    fn area_downsample_averages_cells() {
        let mut plane = Array2::zeros((4, 4));
        plane[[0, 0]] = 1.0;
        plane[[0, 1]] = 1.0;
        let out = area_downsample(&plane, 2);
        assert_eq!(out.dim(), (2, 2));
        assert!((out[[0, 0]] - 0.5).abs() < 1e-12);
        assert_eq!(out[[1, 1]], 0.0);
    }
}
