//! Softmax, normalization layers, embedding lookup, dropout, and the masked
//! cross-entropy reduction used by the caption decoder.

use ndarray::{Array1, Array2, ArrayD};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use super::graph::{Graph, Var};

/// Row-major view of the last axis: (rows, d).
fn rows_of(a: &ArrayD<f64>) -> (usize, usize) {
    let d = *a.shape().last().expect("non-scalar");
    (a.len() / d, d)
}

impl Graph {
    /// Softmax over the last axis. Rows sum to 1.
    pub fn softmax_last(&mut self, x: Var) -> Var {
        let xv = self.value_arc(x);
        let (rows, d) = rows_of(&xv);
        let x2 = xv.view().into_shape_with_order((rows, d)).unwrap();
        let mut out = Array2::<f64>::zeros((rows, d));
        for (mut orow, xrow) in out.rows_mut().into_iter().zip(x2.rows()) {
            let m = xrow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (o, &v) in orow.iter_mut().zip(xrow.iter()) {
                *o = (v - m).exp();
                z += *o;
            }
            orow.mapv_inplace(|v| v / z);
        }
        let shape = xv.shape().to_vec();
        let value = out.into_shape_with_order(shape.as_slice()).unwrap().into_dyn();
        let sv = value.clone();
        self.op(
            value,
            &[x],
            Box::new(move |g, need| {
                vec![need[0].then(|| {
                    let (rows, d) = rows_of(&sv);
                    let s2 = sv.view().into_shape_with_order((rows, d)).unwrap();
                    let g2 = g.view().into_shape_with_order((rows, d)).unwrap();
                    let mut out = Array2::<f64>::zeros((rows, d));
                    for i in 0..rows {
                        let dot: f64 = (0..d).map(|j| g2[[i, j]] * s2[[i, j]]).sum();
                        for j in 0..d {
                            out[[i, j]] = s2[[i, j]] * (g2[[i, j]] - dot);
                        }
                    }
                    out.into_shape_with_order(sv.shape()).unwrap().into_dyn()
                })]
            }),
        )
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax_last(&mut self, x: Var) -> Var {
        let xv = self.value_arc(x);
        let (rows, d) = rows_of(&xv);
        let x2 = xv.view().into_shape_with_order((rows, d)).unwrap();
        let mut out = Array2::<f64>::zeros((rows, d));
        for (mut orow, xrow) in out.rows_mut().into_iter().zip(x2.rows()) {
            let m = xrow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + xrow.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            for (o, &v) in orow.iter_mut().zip(xrow.iter()) {
                *o = v - lse;
            }
        }
        let shape = xv.shape().to_vec();
        let value = out.into_shape_with_order(shape.as_slice()).unwrap().into_dyn();
        let lv = value.clone();
        self.op(
            value,
            &[x],
            Box::new(move |g, need| {
                vec![need[0].then(|| {
                    let (rows, d) = rows_of(&lv);
                    let l2 = lv.view().into_shape_with_order((rows, d)).unwrap();
                    let g2 = g.view().into_shape_with_order((rows, d)).unwrap();
                    let mut out = Array2::<f64>::zeros((rows, d));
                    for i in 0..rows {
                        let gsum: f64 = (0..d).map(|j| g2[[i, j]]).sum();
                        for j in 0..d {
                            out[[i, j]] = g2[[i, j]] - l2[[i, j]].exp() * gsum;
                        }
                    }
                    out.into_shape_with_order(lv.shape()).unwrap().into_dyn()
                })]
            }),
        )
    }

    /// Mean negative log-likelihood over weighted rows of a (rows, vocab)
    /// log-probability matrix. Rows with weight 0 are ignored.
    pub fn nll_mean(&mut self, logp: Var, targets: &[usize], weights: &[f64]) -> Var {
        let lv = self.value_arc(logp);
        let (rows, d) = rows_of(&lv);
        assert_eq!(targets.len(), rows, "nll targets/rows mismatch");
        assert_eq!(weights.len(), rows, "nll weights/rows mismatch");
        let l2 = lv.view().into_shape_with_order((rows, d)).unwrap();
        let wsum: f64 = weights.iter().sum();
        assert!(wsum > 0.0, "nll: all rows masked out");
        let mut acc = 0.0;
        for (i, (&t, &wt)) in targets.iter().zip(weights.iter()).enumerate() {
            if wt != 0.0 {
                acc -= wt * l2[[i, t]];
            }
        }
        let value = super::scalar(acc / wsum);
        let targets_b = targets.to_vec();
        let weights_b = weights.to_vec();
        self.op(
            value,
            &[logp],
            Box::new(move |g, need| {
                vec![need[0].then(|| {
                    let gv = super::to_scalar(g);
                    let mut out = Array2::<f64>::zeros((rows, d));
                    for (i, (&t, &wt)) in targets_b.iter().zip(weights_b.iter()).enumerate() {
                        if wt != 0.0 {
                            out[[i, t]] = -gv * wt / wsum;
                        }
                    }
                    out.into_shape_with_order(lv.shape()).unwrap().into_dyn()
                })]
            }),
        )
    }

    /// Layer normalization over the last axis with affine parameters.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value_arc(x);
        let gv = self.value_arc(gamma);
        let bv = self.value_arc(beta);
        let (rows, d) = rows_of(&xv);
        assert_eq!(gv.len(), d, "layer_norm gamma length");
        assert_eq!(bv.len(), d, "layer_norm beta length");
        let x2 = xv.view().into_shape_with_order((rows, d)).unwrap();
        let mut xhat = Array2::<f64>::zeros((rows, d));
        let mut inv_std = Array1::<f64>::zeros(rows);
        let mut out = Array2::<f64>::zeros((rows, d));
        for i in 0..rows {
            let row = x2.row(i);
            let mean = row.mean().unwrap();
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[i] = istd;
            for j in 0..d {
                let xh = (row[j] - mean) * istd;
                xhat[[i, j]] = xh;
                out[[i, j]] = xh * gv[[j]] + bv[[j]];
            }
        }
        let shape = xv.shape().to_vec();
        let value = out.into_shape_with_order(shape.as_slice()).unwrap().into_dyn();
        self.op(
            value,
            &[x, gamma, beta],
            Box::new(move |g, need| {
                let g2 = g.view().into_shape_with_order((rows, d)).unwrap();
                let gx = need[0].then(|| {
                    let mut out = Array2::<f64>::zeros((rows, d));
                    for i in 0..rows {
                        // dy_hat = g * gamma; dx = istd*(dy_hat - mean(dy_hat) - xhat*mean(dy_hat*xhat))
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..d {
                            let dyh = g2[[i, j]] * gv[[j]];
                            m1 += dyh;
                            m2 += dyh * xhat[[i, j]];
                        }
                        m1 /= d as f64;
                        m2 /= d as f64;
                        for j in 0..d {
                            let dyh = g2[[i, j]] * gv[[j]];
                            out[[i, j]] = inv_std[i] * (dyh - m1 - xhat[[i, j]] * m2);
                        }
                    }
                    out.into_shape_with_order(xv.shape()).unwrap().into_dyn()
                });
                let ggamma = need[1].then(|| {
                    let mut out = Array1::<f64>::zeros(d);
                    for i in 0..rows {
                        for j in 0..d {
                            out[j] += g2[[i, j]] * xhat[[i, j]];
                        }
                    }
                    out.into_dyn()
                });
                let gbeta = need[2].then(|| {
                    let mut out = Array1::<f64>::zeros(d);
                    for i in 0..rows {
                        for j in 0..d {
                            out[j] += g2[[i, j]];
                        }
                    }
                    out.into_dyn()
                });
                vec![gx, ggamma, gbeta]
            }),
        )
    }

    /// Group normalization over (N,C,H,W) with per-channel affine parameters.
    /// Channel groups are contiguous memory blocks, so the hot loops run on
    /// raw slices.
    pub fn group_norm(&mut self, x: Var, groups: usize, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value_arc(x);
        let gv = self.value_arc(gamma);
        let bv = self.value_arc(beta);
        let shape = xv.shape().to_vec();
        assert_eq!(shape.len(), 4, "group_norm input 4-d");
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        assert!(c % groups == 0, "group_norm: {c} channels not divisible by {groups} groups");
        assert_eq!(gv.len(), c, "group_norm gamma length");
        let cg = c / groups;
        let plane = h * w;
        let block = cg * plane;
        let gsize = block as f64;

        let xs = xv.as_slice().expect("standard layout");
        let gvs = gv.as_slice().unwrap();
        let bvs = bv.as_slice().unwrap();
        let mut xhat = vec![0.0f64; n * c * plane];
        let mut inv_std = vec![0.0f64; n * groups];
        let mut out = ArrayD::<f64>::zeros(xv.raw_dim());
        let os = out.as_slice_mut().unwrap();
        for ni in 0..n {
            for gi in 0..groups {
                let base = ni * c * plane + gi * block;
                let src = &xs[base..base + block];
                let mean = src.iter().sum::<f64>() / gsize;
                let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / gsize;
                let istd = 1.0 / (var + eps).sqrt();
                inv_std[ni * groups + gi] = istd;
                for cj in 0..cg {
                    let ci = gi * cg + cj;
                    let (ga, be) = (gvs[ci], bvs[ci]);
                    let off = base + cj * plane;
                    for k in 0..plane {
                        let xh = (xs[off + k] - mean) * istd;
                        xhat[off + k] = xh;
                        os[off + k] = xh * ga + be;
                    }
                }
            }
        }
        self.op(
            out,
            &[x, gamma, beta],
            Box::new(move |g, need| {
                let gs = g.as_slice().expect("standard layout");
                let gvs = gv.as_slice().unwrap();
                let gx = need[0].then(|| {
                    let mut out = ArrayD::<f64>::zeros(g.raw_dim());
                    let os = out.as_slice_mut().unwrap();
                    for ni in 0..n {
                        for gi in 0..groups {
                            let base = ni * c * plane + gi * block;
                            let mut m1 = 0.0;
                            let mut m2 = 0.0;
                            for cj in 0..cg {
                                let ga = gvs[gi * cg + cj];
                                let off = base + cj * plane;
                                for k in 0..plane {
                                    let dyh = gs[off + k] * ga;
                                    m1 += dyh;
                                    m2 += dyh * xhat[off + k];
                                }
                            }
                            m1 /= gsize;
                            m2 /= gsize;
                            let istd = inv_std[ni * groups + gi];
                            for cj in 0..cg {
                                let ga = gvs[gi * cg + cj];
                                let off = base + cj * plane;
                                for k in 0..plane {
                                    let dyh = gs[off + k] * ga;
                                    os[off + k] = istd * (dyh - m1 - xhat[off + k] * m2);
                                }
                            }
                        }
                    }
                    out
                });
                let ggamma = need[1].then(|| {
                    let mut out = Array1::<f64>::zeros(c);
                    for ni in 0..n {
                        for ci in 0..c {
                            let off = (ni * c + ci) * plane;
                            let mut acc = 0.0;
                            for k in 0..plane {
                                acc += gs[off + k] * xhat[off + k];
                            }
                            out[ci] += acc;
                        }
                    }
                    out.into_dyn()
                });
                let gbeta = need[2].then(|| {
                    let mut out = Array1::<f64>::zeros(c);
                    for ni in 0..n {
                        for ci in 0..c {
                            let off = (ni * c + ci) * plane;
                            out[ci] += gs[off..off + plane].iter().sum::<f64>();
                        }
                    }
                    out.into_dyn()
                });
                vec![gx, ggamma, gbeta]
            }),
        )
    }

    /// Embedding lookup: weight (V, D), ids (rows) -> (rows, D).
    pub fn embedding(&mut self, weight: Var, ids: &[usize]) -> Var {
        let wv = self.value_arc(weight);
        let w2 = wv.view().into_dimensionality::<ndarray::Ix2>().expect("embedding weight 2-d");
        let (v, d) = w2.dim();
        let mut out = Array2::<f64>::zeros((ids.len(), d));
        for (i, &id) in ids.iter().enumerate() {
            assert!(id < v, "token id {id} out of vocab {v}");
            out.row_mut(i).assign(&w2.row(id));
        }
        let ids_b = ids.to_vec();
        self.op(
            out.into_dyn(),
            &[weight],
            Box::new(move |g, need| {
                vec![need[0].then(|| {
                    let g2 = g.view().into_dimensionality::<ndarray::Ix2>().unwrap();
                    let mut gw = Array2::<f64>::zeros((v, d));
                    for (i, &id) in ids_b.iter().enumerate() {
                        let mut row = gw.row_mut(id);
                        row += &g2.row(i);
                    }
                    gw.into_dyn()
                })]
            }),
        )
    }

    /// Inverted dropout driven by a caller-provided seeded stream.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut ChaCha12Rng) -> Var {
        assert!((0.0..1.0).contains(&p));
        if p == 0.0 {
            return x;
        }
        let keep = 1.0 - p;
        let mask: ArrayD<f64> = {
            let mut m = ArrayD::zeros(self.value(x).raw_dim());
            for v in m.iter_mut() {
                *v = if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 };
            }
            m
        };
        let mv = mask.clone();
        let value = self.value(x) * &mask;
        self.op(
            value,
            &[x],
            Box::new(move |g, need| vec![need[0].then(|| g * &mv)]),
        )
    }
}
