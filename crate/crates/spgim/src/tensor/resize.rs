//! Bilinear resampling (half-pixel centers) with exact-transpose backward.

use ndarray::Array4;

use super::graph::{Graph, Var};

/// Per-axis interpolation taps: for each output index, the two source
/// indices and their weights.
fn taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f64, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            let w1 = s - i0 as f64;
            (i0, i1, 1.0 - w1, w1)
        })
        .collect()
}

impl Graph {
    /// Bilinear resize of an NCHW tensor to (out_h, out_w).
    pub fn resize_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Var {
        let xv = self.value_arc(x);
        let x4 = xv
            .view()
            .into_dimensionality::<ndarray::Ix4>()
            .expect("resize input 4-d");
        let (n, c, h, w) = x4.dim();
        if (h, w) == (out_h, out_w) {
            // Identity resize still records a pass-through node.
            let value = (*xv).clone();
            return self.op(
                value,
                &[x],
                Box::new(move |g, need| vec![need[0].then(|| g.clone())]),
            );
        }
        let ty = taps(out_h, h);
        let tx = taps(out_w, w);
        let xs = xv.as_slice().expect("standard layout");
        let mut out = Array4::<f64>::zeros((n, c, out_h, out_w));
        {
            let os = out.as_slice_mut().unwrap();
            for plane in 0..n * c {
                let src = &xs[plane * h * w..(plane + 1) * h * w];
                let dst = &mut os[plane * out_h * out_w..(plane + 1) * out_h * out_w];
                for (oi, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                    let r0 = &src[y0 * w..y0 * w + w];
                    let r1 = &src[y1 * w..y1 * w + w];
                    let drow = &mut dst[oi * out_w..(oi + 1) * out_w];
                    for (oj, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                        drow[oj] = wy0 * (wx0 * r0[x0] + wx1 * r0[x1])
                            + wy1 * (wx0 * r1[x0] + wx1 * r1[x1]);
                    }
                }
            }
        }
        let ty_b = ty.clone();
        let tx_b = tx.clone();
        self.op(
            out.into_dyn(),
            &[x],
            Box::new(move |g, need| {
                vec![need[0].then(|| {
                    let gs = g.as_slice().expect("standard layout");
                    let mut gx = Array4::<f64>::zeros((n, c, h, w));
                    {
                        let xs = gx.as_slice_mut().unwrap();
                        for plane in 0..n * c {
                            let src = &gs[plane * out_h * out_w..(plane + 1) * out_h * out_w];
                            let dst = &mut xs[plane * h * w..(plane + 1) * h * w];
                            for (oi, &(y0, y1, wy0, wy1)) in ty_b.iter().enumerate() {
                                let grow = &src[oi * out_w..(oi + 1) * out_w];
                                for (oj, &(x0, x1, wx0, wx1)) in tx_b.iter().enumerate() {
                                    let gv = grow[oj];
                                    dst[y0 * w + x0] += wy0 * wx0 * gv;
                                    dst[y0 * w + x1] += wy0 * wx1 * gv;
                                    dst[y1 * w + x0] += wy1 * wx0 * gv;
                                    dst[y1 * w + x1] += wy1 * wx1 * gv;
                                }
                            }
                        }
                    }
                    gx.into_dyn()
                })]
            }),
        )
    }

    /// Bilinear upsample by an integer factor.
    pub fn upsample_bilinear(&mut self, x: Var, factor: usize) -> Var {
        let shape = self.shape(x);
        let (h, w) = (shape[2], shape[3]);
        self.resize_bilinear(x, h * factor, w * factor)
    }
}

/// Plain-array bilinear resize of a single plane, used outside the graph
/// (ground-truth pyramids, mask handoff on constants).
pub fn resize_plane_bilinear(
    src: &ndarray::Array2<f64>,
    out_h: usize,
    out_w: usize,
) -> ndarray::Array2<f64> {
    let (h, w) = src.dim();
    if (h, w) == (out_h, out_w) {
        return src.clone();
    }
    let ty = taps(out_h, h);
    let tx = taps(out_w, w);
    let mut out = ndarray::Array2::<f64>::zeros((out_h, out_w));
    for (oi, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
        for (oj, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
            out[[oi, oj]] = wy0 * wx0 * src[[y0, x0]]
                + wy0 * wx1 * src[[y0, x1]]
                + wy1 * wx0 * src[[y1, x0]]
                + wy1 * wx1 * src[[y1, x1]];
        }
    }
    out
}
