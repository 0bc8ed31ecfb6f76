//! Elementwise ops, reductions, shape ops, and matrix products.

use ndarray::{Array2, ArrayD, Axis, Ix2, Ix3, IxDyn};

use super::graph::{Graph, Var};

fn same_shape(g: &Graph, a: Var, b: Var, what: &str) {
    assert_eq!(
        g.shape(a),
        g.shape(b),
        "{what}: operand shapes differ ({:?} vs {:?})",
        g.shape(a),
        g.shape(b)
    );
}

impl Graph {
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, a, b, "add");
        let value = &*self.value_arc(a) + &*self.value_arc(b);
        self.op(
            value,
            &[a, b],
            Box::new(move |g, need| {
                vec![
                    need[0].then(|| g.clone()),
                    need[1].then(|| g.clone()),
                ]
            }),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, a, b, "sub");
        let value = &*self.value_arc(a) - &*self.value_arc(b);
        self.op(
            value,
            &[a, b],
            Box::new(move |g, need| {
                vec![
                    need[0].then(|| g.clone()),
                    need[1].then(|| g.mapv(|x| -x)),
                ]
            }),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, a, b, "mul");
        let av = self.value_arc(a);
        let bv = self.value_arc(b);
        let value = &*av * &*bv;
        self.op(
            value,
            &[a, b],
            Box::new(move |g, need| {
                vec![
                    need[0].then(|| g * &*bv),
                    need[1].then(|| g * &*av),
                ]
            }),
        )
    }

    /// `scale * x + shift`, elementwise with scalars.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(x).mapv(|v| scale * v + shift);
        self.op(
            value,
            &[x],
            Box::new(move |g, need| vec![need[0].then(|| g.mapv(|v| v * scale))]),
        )
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.affine(x, -1.0, 0.0)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value_arc(x);
        let value = xv.mapv(|v| v.max(0.0));
        self.op(
            value,
            &[x],
            Box::new(move |g, need| {
                vec![need[0].then(|| {
                    let mut out = g.clone();
                    out.zip_mut_with(&xv, |gv, &x| {
                        if x <= 0.0 {
                            *gv = 0.0;
                        }
                    });
                    out
                })]
            }),
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(|v| 1.0 / (1.0 + (-v).exp()));
        let sv = value.clone();
        self.op(
            value,
            &[x],
            Box::new(move |g, need| {
                vec![need[0].then(|| {
                    let mut out = g.clone();
                    out.zip_mut_with(&sv, |gv, &s| *gv *= s * (1.0 - s));
                    out
                })]
            }),
        )
    }

    /// Tanh-approximation GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        const A: f64 = 0.044715;
        let xv = self.value_arc(x);
        let value = xv.mapv(|v| 0.5 * v * (1.0 + (C * (v + A * v * v * v)).tanh()));
        self.op(
            value,
            &[x],
            Box::new(move |g, need| {
                vec![need[0].then(|| {
                    let mut out = g.clone();
                    out.zip_mut_with(&xv, |gv, &v| {
                        let inner = C * (v + A * v * v * v);
                        let t = inner.tanh();
                        let dinner = C * (1.0 + 3.0 * A * v * v);
                        let d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner;
                        *gv *= d;
                    });
                    out
                })]
            }),
        )
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let xv = self.value_arc(x);
        let value = xv.mapv(f64::abs);
        self.op(
            value,
            &[x],
            Box::new(move |g, need| {
                vec![need[0].then(|| {
                    let mut out = g.clone();
                    out.zip_mut_with(&xv, |gv, &v| *gv *= v.signum() * f64::from(v != 0.0));
                    out
                })]
            }),
        )
    }

    pub fn square(&mut self, x: Var) -> Var {
        let xv = self.value_arc(x);
        let value = xv.mapv(|v| v * v);
        self.op(
            value,
            &[x],
            Box::new(move |g, need| {
                vec![need[0].then(|| {
                    let mut out = g.clone();
                    out.zip_mut_with(&xv, |gv, &v| *gv *= 2.0 * v);
                    out
                })]
            }),
        )
    }

    /// Elementwise square root. The derivative is clamped near zero so exact
    /// zeros do not produce infinities.
    pub fn sqrt(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(f64::sqrt);
        let sv = value.clone();
        self.op(
            value,
            &[x],
            Box::new(move |g, need| {
                vec![need[0].then(|| {
                    let mut out = g.clone();
                    out.zip_mut_with(&sv, |gv, &s| *gv *= 0.5 / s.max(1e-12));
                    out
                })]
            }),
        )
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let value = super::scalar(self.value(x).sum() / n);
        let shape: Vec<usize> = self.shape(x).to_vec();
        self.op(
            value,
            &[x],
            Box::new(move |g, need| {
                let gv = super::to_scalar(g) / n;
                vec![need[0].then(|| ArrayD::from_elem(IxDyn(&shape), gv))]
            }),
        )
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let value = super::scalar(self.value(x).sum());
        let shape: Vec<usize> = self.shape(x).to_vec();
        self.op(
            value,
            &[x],
            Box::new(move |g, need| {
                let gv = super::to_scalar(g);
                vec![need[0].then(|| ArrayD::from_elem(IxDyn(&shape), gv))]
            }),
        )
    }

    /// Mean over the last axis of a 2-d tensor: `(r, c) -> (r,)`.
    pub fn mean_per_row(&mut self, x: Var) -> Var {
        let xv = self.value(x).view().into_dimensionality::<Ix2>().unwrap();
        let (r, c) = (xv.nrows(), xv.ncols());
        let value = xv.mean_axis(Axis(1)).unwrap().into_dyn();
        self.op(
            value,
            &[x],
            Box::new(move |g, need| {
                vec![need[0].then(|| {
                    let mut out = ArrayD::zeros(IxDyn(&[r, c]));
                    for i in 0..r {
                        let gi = g[[i]] / c as f64;
                        for j in 0..c {
                            out[[i, j]] = gi;
                        }
                    }
                    out
                })]
            }),
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let n: usize = shape.iter().product();
        assert_eq!(n, self.value(x).len(), "reshape: element count mismatch");
        let old_shape: Vec<usize> = self.shape(x).to_vec();
        let value = self
            .value(x)
            .to_shape(IxDyn(shape))
            .expect("contiguous reshape")
            .to_owned();
        self.op(
            value,
            &[x],
            Box::new(move |g, need| {
                vec![need[0].then(|| {
                    g.to_shape(IxDyn(&old_shape))
                        .expect("contiguous reshape")
                        .to_owned()
                })]
            }),
        )
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Var {
        let axes_v: Vec<usize> = axes.to_vec();
        let mut inverse = vec![0usize; axes_v.len()];
        for (i, &a) in axes_v.iter().enumerate() {
            inverse[a] = i;
        }
        let value = self
            .value(x)
            .view()
            .permuted_axes(IxDyn(&axes_v))
            .as_standard_layout()
            .to_owned();
        self.op(
            value,
            &[x],
            Box::new(move |g, need| {
                vec![need[0].then(|| {
                    g.view()
                        .permuted_axes(IxDyn(&inverse))
                        .as_standard_layout()
                        .to_owned()
                })]
            }),
        )
    }

    /// Contiguous slice along axis 0. The backward pass zero-pads the
    /// complement.
    pub fn slice_axis0(&mut self, x: Var, start: usize, end: usize) -> Var {
        let shape: Vec<usize> = self.shape(x).to_vec();
        assert!(start < end && end <= shape[0], "slice_axis0 bounds");
        let value = self
            .value(x)
            .slice_axis(Axis(0), ndarray::Slice::from(start..end))
            .to_owned();
        self.op(
            value,
            &[x],
            Box::new(move |g, need| {
                vec![need[0].then(|| {
                    let mut out = ArrayD::zeros(IxDyn(&shape));
                    out.slice_axis_mut(Axis(0), ndarray::Slice::from(start..end))
                        .assign(g);
                    out
                })]
            }),
        )
    }

    /// Concatenate along an axis.
    pub fn concat(&mut self, axis: usize, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|&p| self.value_arc(p)).collect();
        let value = ndarray::concatenate(
            Axis(axis),
            &views.iter().map(|v| v.view()).collect::<Vec<_>>(),
        )
        .expect("concat shapes");
        let sizes: Vec<usize> = views.iter().map(|v| v.shape()[axis]).collect();
        self.op(
            value,
            parts,
            Box::new(move |g, need| {
                let mut out = Vec::with_capacity(sizes.len());
                let mut offset = 0;
                for (i, &sz) in sizes.iter().enumerate() {
                    if need[i] {
                        let slice = g
                            .slice_axis(Axis(axis), ndarray::Slice::from(offset..offset + sz))
                            .to_owned();
                        out.push(Some(slice));
                    } else {
                        out.push(None);
                    }
                    offset += sz;
                }
                out
            }),
        )
    }

    /// 2-d matrix product `(m, k) x (k, n) -> (m, n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let av = self.value_arc(a);
        let bv = self.value_arc(b);
        let a2 = av.view().into_dimensionality::<Ix2>().expect("matmul lhs 2-d");
        let b2 = bv.view().into_dimensionality::<Ix2>().expect("matmul rhs 2-d");
        assert_eq!(a2.ncols(), b2.nrows(), "matmul inner dims");
        let value = a2.dot(&b2).into_dyn();
        self.op(
            value,
            &[a, b],
            Box::new(move |g, need| {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let a2 = av.view().into_dimensionality::<Ix2>().unwrap();
                let b2 = bv.view().into_dimensionality::<Ix2>().unwrap();
                vec![
                    need[0].then(|| g2.dot(&b2.t()).into_dyn()),
                    need[1].then(|| a2.t().dot(&g2).into_dyn()),
                ]
            }),
        )
    }

    /// Batched matrix product `(b, m, k) x (b, k, n) -> (b, m, n)`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Var {
        let av = self.value_arc(a);
        let bv = self.value_arc(b);
        let a3 = av.view().into_dimensionality::<Ix3>().expect("bmm lhs 3-d");
        let b3 = bv.view().into_dimensionality::<Ix3>().expect("bmm rhs 3-d");
        let (nb, m, k) = a3.dim();
        let (nb2, k2, n) = b3.dim();
        assert_eq!(nb, nb2, "bmm batch dims");
        assert_eq!(k, k2, "bmm inner dims");
        let mut value = ndarray::Array3::<f64>::zeros((nb, m, n));
        for i in 0..nb {
            let prod: Array2<f64> = a3.index_axis(Axis(0), i).dot(&b3.index_axis(Axis(0), i));
            value.index_axis_mut(Axis(0), i).assign(&prod);
        }
        self.op(
            value.into_dyn(),
            &[a, b],
            Box::new(move |g, need| {
                let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
                let a3 = av.view().into_dimensionality::<Ix3>().unwrap();
                let b3 = bv.view().into_dimensionality::<Ix3>().unwrap();
                let ga = need[0].then(|| {
                    let mut out = ndarray::Array3::<f64>::zeros(a3.dim());
                    for i in 0..nb {
                        let prod = g3
                            .index_axis(Axis(0), i)
                            .dot(&b3.index_axis(Axis(0), i).t());
                        out.index_axis_mut(Axis(0), i).assign(&prod);
                    }
                    out.into_dyn()
                });
                let gb = need[1].then(|| {
                    let mut out = ndarray::Array3::<f64>::zeros(b3.dim());
                    for i in 0..nb {
                        let prod = a3
                            .index_axis(Axis(0), i)
                            .t()
                            .dot(&g3.index_axis(Axis(0), i));
                        out.index_axis_mut(Axis(0), i).assign(&prod);
                    }
                    out.into_dyn()
                });
                vec![ga, gb]
            }),
        )
    }

    /// Batched product against a transposed rhs:
    /// `(b, m, k) x (b, n, k) -> (b, m, n)`.
    pub fn bmm_transpose_b(&mut self, a: Var, b: Var) -> Var {
        let av = self.value_arc(a);
        let bv = self.value_arc(b);
        let a3 = av.view().into_dimensionality::<Ix3>().expect("bmm lhs 3-d");
        let b3 = bv.view().into_dimensionality::<Ix3>().expect("bmm rhs 3-d");
        let (nb, m, k) = a3.dim();
        let (nb2, n, k2) = b3.dim();
        assert_eq!(nb, nb2, "bmm batch dims");
        assert_eq!(k, k2, "bmm inner dims");
        let mut value = ndarray::Array3::<f64>::zeros((nb, m, n));
        for i in 0..nb {
            let prod = a3
                .index_axis(Axis(0), i)
                .dot(&b3.index_axis(Axis(0), i).t());
            value.index_axis_mut(Axis(0), i).assign(&prod);
        }
        self.op(
            value.into_dyn(),
            &[a, b],
            Box::new(move |g, need| {
                let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
                let a3 = av.view().into_dimensionality::<Ix3>().unwrap();
                let b3 = bv.view().into_dimensionality::<Ix3>().unwrap();
                let ga = need[0].then(|| {
                    let mut out = ndarray::Array3::<f64>::zeros(a3.dim());
                    for i in 0..nb {
                        let prod = g3
                            .index_axis(Axis(0), i)
                            .dot(&b3.index_axis(Axis(0), i));
                        out.index_axis_mut(Axis(0), i).assign(&prod);
                    }
                    out.into_dyn()
                });
                let gb = need[1].then(|| {
                    let mut out = ndarray::Array3::<f64>::zeros(b3.dim());
                    for i in 0..nb {
                        let prod = g3
                            .index_axis(Axis(0), i)
                            .t()
                            .dot(&a3.index_axis(Axis(0), i));
                        out.index_axis_mut(Axis(0), i).assign(&prod);
                    }
                    out.into_dyn()
                });
                vec![ga, gb]
            }),
        )
    }

    /// Add a bias vector over the channel axis of an NCHW tensor.
    pub fn add_bias_nchw(&mut self, x: Var, bias: Var) -> Var {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 4, "add_bias_nchw expects NCHW");
        assert_eq!(self.shape(bias), &[xs[1]], "bias length != channels");
        let bv = self.value_arc(bias);
        let mut value = (*self.value_arc(x)).clone();
        {
            let mut v4 = value.view_mut().into_dimensionality::<ndarray::Ix4>().unwrap();
            for c in 0..xs[1] {
                v4.index_axis_mut(Axis(1), c).mapv_inplace(|v| v + bv[[c]]);
            }
        }
        self.op(
            value,
            &[x, bias],
            Box::new(move |g, need| {
                let gx = need[0].then(|| g.clone());
                let gb = need[1].then(|| {
                    let g4 = g.view().into_dimensionality::<ndarray::Ix4>().unwrap();
                    let c = g4.dim().1;
                    let mut out = ndarray::Array1::<f64>::zeros(c);
                    for ci in 0..c {
                        out[ci] = g4.index_axis(Axis(1), ci).sum();
                    }
                    out.into_dyn()
                });
                vec![gx, gb]
            }),
        )
    }

    /// Add a bias vector over the last axis of a tensor of any rank.
    pub fn add_bias_last(&mut self, x: Var, bias: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let d = *xs.last().expect("non-scalar");
        assert_eq!(self.shape(bias), &[d], "bias length != last axis");
        let bv = self.value_arc(bias);
        let mut value = (*self.value_arc(x)).clone();
        {
            let rows = value.len() / d;
            let mut v2 = value.view_mut().into_shape_with_order((rows, d)).unwrap();
            for mut row in v2.rows_mut() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v += bv[[j]];
                }
            }
        }
        self.op(
            value,
            &[x, bias],
            Box::new(move |g, need| {
                let gx = need[0].then(|| g.clone());
                let gb = need[1].then(|| {
                    let rows = g.len() / d;
                    let g2 = g.view().into_shape_with_order((rows, d)).unwrap();
                    g2.sum_axis(Axis(0)).into_dyn()
                });
                vec![gx, gb]
            }),
        )
    }
}
