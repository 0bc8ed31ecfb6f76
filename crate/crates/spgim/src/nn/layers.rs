//! Layer building blocks. Each layer owns its parameter names and
//! hyperparameters; values live in the [`ParamStore`].

use crate::tensor::{ConvSpec, Var};

use super::{Fwd, Init, ParamStore};

/// Largest divisor of `c` that is at most 8, for group-norm groups.
pub fn group_count(c: usize) -> usize {
    (1..=8.min(c)).rev().find(|g| c % g == 0).unwrap_or(1)
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    weight: String,
    bias: Option<String>,
    pub spec: ConvSpec,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamStore,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize),
        spec: ConvSpec,
        bias: bool,
    ) -> Self {
        let weight = format!("{prefix}.weight");
        ps.register(
            &weight,
            &[c_out, c_in, kernel.0, kernel.1],
            Init::HeNormal {
                fan_in: c_in * kernel.0 * kernel.1,
            },
        );
        let bias = bias.then(|| {
            let b = format!("{prefix}.bias");
            ps.register(&b, &[c_out], Init::Zeros);
            b
        });
        Conv2d { weight, bias, spec }
    }

    /// Square kernel with "same" padding at stride 1 (or halving at stride 2).
    pub fn same(
        ps: &mut ParamStore,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        dilation: usize,
        bias: bool,
    ) -> Self {
        let pad = dilation * (k - 1) / 2;
        Conv2d::new(
            ps,
            prefix,
            c_in,
            c_out,
            (k, k),
            ConvSpec {
                stride: (stride, stride),
                pad: (pad, pad),
                dilation: (dilation, dilation),
            },
            bias,
        )
    }

    pub fn forward(&self, f: &mut Fwd, x: Var) -> Var {
        let w = f.param(&self.weight);
        let b = self.bias.as_ref().map(|b| f.param(b));
        f.g.conv2d(x, w, b, self.spec)
    }
}

#[derive(Clone, Debug)]
pub struct GroupNorm {
    gamma: String,
    beta: String,
    groups: usize,
}

impl GroupNorm {
    pub fn new(ps: &mut ParamStore, prefix: &str, channels: usize) -> Self {
        let gamma = format!("{prefix}.gamma");
        let beta = format!("{prefix}.beta");
        ps.register(&gamma, &[channels], Init::Ones);
        ps.register(&beta, &[channels], Init::Zeros);
        GroupNorm {
            gamma,
            beta,
            groups: group_count(channels),
        }
    }

    pub fn forward(&self, f: &mut Fwd, x: Var) -> Var {
        let gamma = f.param(&self.gamma);
        let beta = f.param(&self.beta);
        f.g.group_norm(x, self.groups, gamma, beta, 1e-5)
    }
}

/// Conv → group norm → ReLU, the default encoder/decoder unit.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub conv: Conv2d,
    norm: GroupNorm,
}

impl ConvBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamStore,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        dilation: usize,
    ) -> Self {
        ConvBlock {
            conv: Conv2d::same(ps, &format!("{prefix}.conv"), c_in, c_out, k, stride, dilation, false),
            norm: GroupNorm::new(ps, &format!("{prefix}.norm"), c_out),
        }
    }

    pub fn forward(&self, f: &mut Fwd, x: Var) -> Var {
        let y = self.conv.forward(f, x);
        let y = self.norm.forward(f, y);
        f.g.relu(y)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    weight: String, // (in, out)
    bias: Option<String>,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, prefix: &str, d_in: usize, d_out: usize, bias: bool) -> Self {
        let weight = format!("{prefix}.weight");
        ps.register(&weight, &[d_in, d_out], Init::Normal { std: 0.02 });
        let bias = bias.then(|| {
            let b = format!("{prefix}.bias");
            ps.register(&b, &[d_out], Init::Zeros);
            b
        });
        Linear { weight, bias }
    }

    /// Input (..., d_in) -> (..., d_out); leading axes preserved.
    pub fn forward(&self, f: &mut Fwd, x: Var) -> Var {
        let shape = f.g.shape(x).to_vec();
        let d_in = *shape.last().expect("linear input rank");
        let rows: usize = shape[..shape.len() - 1].iter().product();
        let w = f.param(&self.weight);
        let d_out = f.g.shape(w)[1];
        let flat = f.g.reshape(x, &[rows, d_in]);
        let mut y = f.g.matmul(flat, w);
        if let Some(b) = &self.bias {
            let bv = f.param(b);
            y = f.g.add_bias_last(y, bv);
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = d_out;
        f.g.reshape(y, &out_shape)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    gamma: String,
    beta: String,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, prefix: &str, d: usize) -> Self {
        let gamma = format!("{prefix}.gamma");
        let beta = format!("{prefix}.beta");
        ps.register(&gamma, &[d], Init::Ones);
        ps.register(&beta, &[d], Init::Zeros);
        LayerNorm { gamma, beta }
    }

    pub fn forward(&self, f: &mut Fwd, x: Var) -> Var {
        let gamma = f.param(&self.gamma);
        let beta = f.param(&self.beta);
        f.g.layer_norm(x, gamma, beta, 1e-5)
    }
}

#[derive(Clone, Debug)]
pub struct Embedding {
    weight: String,
}

impl Embedding {
    pub fn new(ps: &mut ParamStore, prefix: &str, vocab: usize, d: usize) -> Self {
        let weight = format!("{prefix}.weight");
        ps.register(&weight, &[vocab, d], Init::Normal { std: 0.02 });
        Embedding { weight }
    }

    pub fn forward(&self, f: &mut Fwd, ids: &[usize]) -> Var {
        let w = f.param(&self.weight);
        f.g.embedding(w, ids)
    }
}
