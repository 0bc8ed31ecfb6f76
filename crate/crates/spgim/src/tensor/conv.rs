//! 2-d convolution and pooling, NCHW layout. Convolution lowers to a matrix
//! product via im2col; the input gradient goes back through col2im.

use ndarray::{Array2, Array4, ArrayD, ArrayView4, Axis};

use super::graph::{Graph, Var};

#[derive(Clone, Copy, Debug)]
pub struct ConvSpec {
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub dilation: (usize, usize),
}

impl ConvSpec {
    pub fn unit() -> Self {
        ConvSpec {
            stride: (1, 1),
            pad: (0, 0),
            dilation: (1, 1),
        }
    }

    pub fn out_size(&self, h: usize, w: usize, kh: usize, kw: usize) -> (usize, usize) {
        let eff_kh = self.dilation.0 * (kh - 1) + 1;
        let eff_kw = self.dilation.1 * (kw - 1) + 1;
        let oh = (h + 2 * self.pad.0).checked_sub(eff_kh).expect("kernel larger than padded input") / self.stride.0 + 1;
        let ow = (w + 2 * self.pad.1).checked_sub(eff_kw).expect("kernel larger than padded input") / self.stride.1 + 1;
        (oh, ow)
    }
}

/// Valid output-column range for one kernel tap: the `oj` values whose
/// source index `oj*stride + offset` lands inside `[0, len)`.
#[inline]
fn tap_range(out_len: usize, stride: usize, offset: isize, len: usize) -> (usize, usize) {
    let lo = if offset >= 0 {
        0
    } else {
        ((-offset) as usize).div_ceil(stride)
    };
    // largest oj with oj*stride + offset < len
    let hi = if len as isize <= offset {
        0
    } else {
        (((len as isize - 1 - offset) as usize) / stride + 1).min(out_len)
    };
    (lo.min(hi), hi)
}

/// Lower one image (C,H,W at batch index `n`) into a (C*kh*kw, oh*ow)
/// column matrix. Operates on the raw standard-layout slice.
pub(crate) fn im2col(
    x: &ArrayView4<f64>,
    n: usize,
    kh: usize,
    kw: usize,
    spec: &ConvSpec,
    oh: usize,
    ow: usize,
) -> Array2<f64> {
    let (_, c, h, w) = x.dim();
    let xs = x.to_slice().expect("conv input is standard layout");
    let mut cols = Array2::<f64>::zeros((c * kh * kw, oh * ow));
    let cs = cols.as_slice_mut().unwrap();
    let (sy, sx) = spec.stride;
    let (dy, dx) = spec.dilation;
    let (py, px) = spec.pad;
    for ci in 0..c {
        let x_chan = (n * c + ci) * h * w;
        for ki in 0..kh {
            let off_y = (ki * dy) as isize - py as isize;
            for kj in 0..kw {
                let off_x = (kj * dx) as isize - px as isize;
                let row_base = ((ci * kh + ki) * kw + kj) * (oh * ow);
                let (jlo, jhi) = tap_range(ow, sx, off_x, w);
                if jlo >= jhi {
                    continue;
                }
                for oi in 0..oh {
                    let ii = (oi * sy) as isize + off_y;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    let x_row = x_chan + ii as usize * w;
                    let out_row = row_base + oi * ow;
                    if sx == 1 {
                        let src_lo = (jlo as isize + off_x) as usize;
                        let len = jhi - jlo;
                        cs[out_row + jlo..out_row + jhi]
                            .copy_from_slice(&xs[x_row + src_lo..x_row + src_lo + len]);
                    } else {
                        for oj in jlo..jhi {
                            let jj = (oj * sx) as isize + off_x;
                            cs[out_row + oj] = xs[x_row + jj as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter a column-matrix gradient back onto the input plane of batch item
/// `n`, accumulating into `gx`.
pub(crate) fn col2im(
    gcols: &Array2<f64>,
    gx: &mut Array4<f64>,
    n: usize,
    kh: usize,
    kw: usize,
    spec: &ConvSpec,
    oh: usize,
    ow: usize,
) {
    let (_, c, h, w) = gx.dim();
    let gcols = gcols.as_standard_layout();
    let gs = gcols.as_slice().expect("column grads are standard layout");
    let xs = gx.as_slice_mut().expect("input grads are standard layout");
    let (sy, sx) = spec.stride;
    let (dy, dx) = spec.dilation;
    let (py, px) = spec.pad;
    for ci in 0..c {
        let x_chan = (n * c + ci) * h * w;
        for ki in 0..kh {
            let off_y = (ki * dy) as isize - py as isize;
            for kj in 0..kw {
                let off_x = (kj * dx) as isize - px as isize;
                let row_base = ((ci * kh + ki) * kw + kj) * (oh * ow);
                let (jlo, jhi) = tap_range(ow, sx, off_x, w);
                if jlo >= jhi {
                    continue;
                }
                for oi in 0..oh {
                    let ii = (oi * sy) as isize + off_y;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    let x_row = x_chan + ii as usize * w;
                    let g_row = row_base + oi * ow;
                    if sx == 1 {
                        let dst_lo = (jlo as isize + off_x) as usize;
                        for (dst, src) in xs[x_row + dst_lo..x_row + dst_lo + (jhi - jlo)]
                            .iter_mut()
                            .zip(&gs[g_row + jlo..g_row + jhi])
                        {
                            *dst += src;
                        }
                    } else {
                        for oj in jlo..jhi {
                            let jj = (oj * sx) as isize + off_x;
                            xs[x_row + jj as usize] += gs[g_row + oj];
                        }
                    }
                }
            }
        }
    }
}

impl Graph {
    /// 2-d convolution: x (N,C,H,W), weight (O,C,kh,kw), optional bias (O).
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, spec: ConvSpec) -> Var {
        let xv = self.value_arc(x);
        let wv = self.value_arc(weight);
        let x4 = xv.view().into_dimensionality::<ndarray::Ix4>().expect("conv input 4-d");
        let w4 = wv.view().into_dimensionality::<ndarray::Ix4>().expect("conv weight 4-d");
        let (n, c, h, w) = x4.dim();
        let (o, cw, kh, kw) = w4.dim();
        assert_eq!(c, cw, "conv2d: input channels {} != weight channels {}", c, cw);
        let (oh, ow) = spec.out_size(h, w, kh, kw);

        let wmat = w4
            .to_shape((o, c * kh * kw))
            .expect("weight reshape")
            .to_owned();
        let mut out = Array4::<f64>::zeros((n, o, oh, ow));
        for ni in 0..n {
            let cols = im2col(&x4, ni, kh, kw, &spec, oh, ow);
            let prod = wmat.dot(&cols); // (o, oh*ow)
            let planes = prod.to_shape((o, oh, ow)).unwrap();
            out.index_axis_mut(Axis(0), ni).assign(&planes);
        }

        let value = match bias {
            Some(b) => {
                let bv = self.value_arc(b);
                for oi in 0..o {
                    out.index_axis_mut(Axis(1), oi).mapv_inplace(|v| v + bv[[oi]]);
                }
                out.into_dyn()
            }
            None => out.into_dyn(),
        };

        let parents: Vec<Var> = match bias {
            Some(b) => vec![x, weight, b],
            None => vec![x, weight],
        };
        let has_bias = bias.is_some();
        self.op(
            value,
            &parents,
            Box::new(move |g, need| {
                let g4 = g.view().into_dimensionality::<ndarray::Ix4>().unwrap();
                let x4 = xv.view().into_dimensionality::<ndarray::Ix4>().unwrap();
                let w4 = wv.view().into_dimensionality::<ndarray::Ix4>().unwrap();
                let wmat = w4.to_shape((o, c * kh * kw)).unwrap().to_owned();

                let mut gx = need[0].then(|| Array4::<f64>::zeros((n, c, h, w)));
                let mut gw = need[1].then(|| Array2::<f64>::zeros((o, c * kh * kw)));
                for ni in 0..n {
                    let gplane = g4
                        .index_axis(Axis(0), ni)
                        .to_shape((o, oh * ow))
                        .unwrap()
                        .to_owned();
                    if gw.is_some() || gx.is_some() {
                        if let Some(gw) = gw.as_mut() {
                            let cols = im2col(&x4, ni, kh, kw, &spec, oh, ow);
                            *gw += &gplane.dot(&cols.t());
                        }
                        if let Some(gx) = gx.as_mut() {
                            let gcols = wmat.t().dot(&gplane); // (c*kh*kw, oh*ow)
                            col2im(&gcols, gx, ni, kh, kw, &spec, oh, ow);
                        }
                    }
                }

                let mut grads: Vec<Option<ArrayD<f64>>> = vec![
                    gx.map(|a| a.into_dyn()),
                    gw.map(|a| {
                        a.into_shape_with_order((o, c, kh, kw))
                            .unwrap()
                            .into_dyn()
                    }),
                ];
                if has_bias {
                    grads.push(need[2].then(|| {
                        let mut gb = ndarray::Array1::<f64>::zeros(o);
                        for oi in 0..o {
                            gb[oi] = g4.index_axis(Axis(1), oi).sum();
                        }
                        gb.into_dyn()
                    }));
                }
                grads
            }),
        )
    }

    /// Max pooling with square kernel. Records argmax positions for backward.
    pub fn max_pool2d(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Var {
        let xv = self.value_arc(x);
        let x4 = xv.view().into_dimensionality::<ndarray::Ix4>().expect("pool input 4-d");
        let (n, c, h, w) = x4.dim();
        let oh = (h + 2 * pad - kernel) / stride + 1;
        let ow = (w + 2 * pad - kernel) / stride + 1;
        let mut out = Array4::<f64>::zeros((n, c, oh, ow));
        let mut argmax = vec![0usize; n * c * oh * ow];
        for ni in 0..n {
            for ci in 0..c {
                for oi in 0..oh {
                    for oj in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0usize;
                        for ki in 0..kernel {
                            let ii = (oi * stride + ki) as isize - pad as isize;
                            if ii < 0 || ii >= h as isize {
                                continue;
                            }
                            for kj in 0..kernel {
                                let jj = (oj * stride + kj) as isize - pad as isize;
                                if jj < 0 || jj >= w as isize {
                                    continue;
                                }
                                let v = x4[[ni, ci, ii as usize, jj as usize]];
                                if v > best {
                                    best = v;
                                    best_idx = ii as usize * w + jj as usize;
                                }
                            }
                        }
                        out[[ni, ci, oi, oj]] = best;
                        argmax[((ni * c + ci) * oh + oi) * ow + oj] = best_idx;
                    }
                }
            }
        }
        self.op(
            out.into_dyn(),
            &[x],
            Box::new(move |g, need| {
                vec![need[0].then(|| {
                    let g4 = g.view().into_dimensionality::<ndarray::Ix4>().unwrap();
                    let mut gx = Array4::<f64>::zeros((n, c, h, w));
                    for ni in 0..n {
                        for ci in 0..c {
                            for oi in 0..oh {
                                for oj in 0..ow {
                                    let idx = argmax[((ni * c + ci) * oh + oi) * ow + oj];
                                    gx[[ni, ci, idx / w, idx % w]] += g4[[ni, ci, oi, oj]];
                                }
                            }
                        }
                    }
                    gx.into_dyn()
                })]
            }),
        )
    }

    /// Mean over the spatial axes: (N,C,H,W) -> (N,C,1,1).
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let xv = self.value_arc(x);
        let x4 = xv.view().into_dimensionality::<ndarray::Ix4>().expect("pool input 4-d");
        let (n, c, h, w) = x4.dim();
        let mut out = Array4::<f64>::zeros((n, c, 1, 1));
        for ni in 0..n {
            for ci in 0..c {
                out[[ni, ci, 0, 0]] = x4
                    .index_axis(Axis(0), ni)
                    .index_axis(Axis(0), ci)
                    .mean()
                    .unwrap();
            }
        }
        self.op(
            out.into_dyn(),
            &[x],
            Box::new(move |g, need| {
                vec![need[0].then(|| {
                    let g4 = g.view().into_dimensionality::<ndarray::Ix4>().unwrap();
                    let mut gx = Array4::<f64>::zeros((n, c, h, w));
                    let scale = 1.0 / (h * w) as f64;
                    for ni in 0..n {
                        for ci in 0..c {
                            let gv = g4[[ni, ci, 0, 0]] * scale;
                            gx.index_axis_mut(Axis(0), ni)
                                .index_axis_mut(Axis(0), ci)
                                .fill(gv);
                        }
                    }
                    gx.into_dyn()
                })]
            }),
        )
    }

    /// Non-overlapping average pool by integer factor (area downsampling).
    pub fn avg_pool2d(&mut self, x: Var, factor: usize) -> Var {
        assert!(factor >= 1);
        let xv = self.value_arc(x);
        let x4 = xv.view().into_dimensionality::<ndarray::Ix4>().expect("pool input 4-d");
        let (n, c, h, w) = x4.dim();
        assert!(h % factor == 0 && w % factor == 0, "avg_pool2d: size not divisible");
        let (oh, ow) = (h / factor, w / factor);
        let inv = 1.0 / (factor * factor) as f64;
        let mut out = Array4::<f64>::zeros((n, c, oh, ow));
        for ni in 0..n {
            for ci in 0..c {
                for oi in 0..oh {
                    for oj in 0..ow {
                        let mut acc = 0.0;
                        for ki in 0..factor {
                            for kj in 0..factor {
                                acc += x4[[ni, ci, oi * factor + ki, oj * factor + kj]];
                            }
                        }
                        out[[ni, ci, oi, oj]] = acc * inv;
                    }
                }
            }
        }
        self.op(
            out.into_dyn(),
            &[x],
            Box::new(move |g, need| {
                vec![need[0].then(|| {
                    let g4 = g.view().into_dimensionality::<ndarray::Ix4>().unwrap();
                    let mut gx = Array4::<f64>::zeros((n, c, h, w));
                    for ni in 0..n {
                        for ci in 0..c {
                            for oi in 0..oh {
                                for oj in 0..ow {
                                    let gv = g4[[ni, ci, oi, oj]] * inv;
                                    for ki in 0..factor {
                                        for kj in 0..factor {
                                            gx[[ni, ci, oi * factor + ki, oj * factor + kj]] = gv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    gx.into_dyn()
                })]
            }),
        )
    }
}
