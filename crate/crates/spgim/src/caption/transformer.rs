//! Transformer decoder blocks: masked self-attention over the token stream
//! and cross-attention over grid visual features.

use ndarray::{ArrayD, IxDyn};

use crate::nn::{Fwd, LayerNorm, Linear, ParamStore};
use crate::tensor::Var;

pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    pub heads: usize,
}

/// Attention probabilities recorded during a forward pass, shaped
/// (batch*heads, queries, keys).
pub struct AttentionTrace {
    pub probs: Var,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(ps: &mut ParamStore, prefix: &str, width: usize, heads: usize) -> Self {
        assert!(width % heads == 0, "model width {width} not divisible by {heads} heads");
        MultiHeadAttention {
            q: Linear::new(ps, &format!("{prefix}.q"), width, width, true),
            k: Linear::new(ps, &format!("{prefix}.k"), width, width, true),
            v: Linear::new(ps, &format!("{prefix}.v"), width, width, true),
            out: Linear::new(ps, &format!("{prefix}.out"), width, width, true),
            heads,
        }
    }

    /// queries (B,T,D) attend over keys/values (B,S,D). `causal` restricts
    /// position t to keys at most t (requires T == S).
    pub fn forward(
        &self,
        f: &mut Fwd,
        queries: Var,
        keys_values: Var,
        causal: bool,
    ) -> (Var, AttentionTrace) {
        let (b, t, d) = dims3(f, queries);
        let (_, s, _) = dims3(f, keys_values);
        let h = self.heads;
        let dh = d / h;

        let q = self.q.forward(f, queries);
        let k = self.k.forward(f, keys_values);
        let v = self.v.forward(f, keys_values);
        let q = split_heads(f, q, b, t, h, dh);
        let k = split_heads(f, k, b, s, h, dh);
        let v = split_heads(f, v, b, s, h, dh);

        let scores = f.g.bmm_transpose_b(q, k);
        let scores = f.g.affine(scores, 1.0 / (dh as f64).sqrt(), 0.0);
        let scores = if causal {
            assert_eq!(t, s, "causal attention requires square score matrix");
            let mask = causal_mask(b * h, t);
            let mask = f.g.constant(mask);
            f.g.add(scores, mask)
        } else {
            scores
        };
        let probs = f.g.softmax_last(scores);
        let ctx = f.g.bmm(probs, v);
        let merged = merge_heads(f, ctx, b, t, h, dh);
        let out = self.out.forward(f, merged);
        (out, AttentionTrace { probs, heads: h })
    }
}

fn dims3(f: &Fwd, x: Var) -> (usize, usize, usize) {
    let s = f.g.shape(x);
    assert_eq!(s.len(), 3, "expected (batch, tokens, width), got {s:?}");
    (s[0], s[1], s[2])
}

fn split_heads(f: &mut Fwd, x: Var, b: usize, t: usize, h: usize, dh: usize) -> Var {
    let x = f.g.reshape(x, &[b, t, h, dh]);
    let x = f.g.permute(x, &[0, 2, 1, 3]);
    f.g.reshape(x, &[b * h, t, dh])
}

fn merge_heads(f: &mut Fwd, x: Var, b: usize, t: usize, h: usize, dh: usize) -> Var {
    let x = f.g.reshape(x, &[b, h, t, dh]);
    let x = f.g.permute(x, &[0, 2, 1, 3]);
    f.g.reshape(x, &[b, t, h * dh])
}

fn causal_mask(rows: usize, t: usize) -> ArrayD<f64> {
    let mut m = ArrayD::zeros(IxDyn(&[rows, t, t]));
    for r in 0..rows {
        for i in 0..t {
            for j in i + 1..t {
                m[[r, i, j]] = f64::NEG_INFINITY.max(-1e30);
            }
        }
    }
    m
}

pub struct DecoderLayer {
    ln_self: LayerNorm,
    self_attn: MultiHeadAttention,
    ln_cross: LayerNorm,
    cross_attn: MultiHeadAttention,
    ln_mlp: LayerNorm,
    mlp_in: Linear,
    mlp_out: Linear,
    dropout: f64,
}

impl DecoderLayer {
    pub fn new(ps: &mut ParamStore, prefix: &str, width: usize, heads: usize, dropout: f64) -> Self {
        DecoderLayer {
            ln_self: LayerNorm::new(ps, &format!("{prefix}.ln_self"), width),
            self_attn: MultiHeadAttention::new(ps, &format!("{prefix}.self_attn"), width, heads),
            ln_cross: LayerNorm::new(ps, &format!("{prefix}.ln_cross"), width),
            cross_attn: MultiHeadAttention::new(ps, &format!("{prefix}.cross_attn"), width, heads),
            ln_mlp: LayerNorm::new(ps, &format!("{prefix}.ln_mlp"), width),
            mlp_in: Linear::new(ps, &format!("{prefix}.mlp_in"), width, width * 4, true),
            mlp_out: Linear::new(ps, &format!("{prefix}.mlp_out"), width * 4, width, true),
            dropout,
        }
    }

    /// Pre-norm residual block. Returns the layer output and the
    /// cross-attention trace for word-level attention maps.
    pub fn forward(&self, f: &mut Fwd, x: Var, grid: Var) -> (Var, AttentionTrace) {
        let normed = self.ln_self.forward(f, x);
        let (sa, _) = self.self_attn.forward(f, normed, normed, true);
        let sa = self.maybe_dropout(f, sa);
        let x = f.g.add(x, sa);

        let normed = self.ln_cross.forward(f, x);
        let (ca, trace) = self.cross_attn.forward(f, normed, grid, false);
        let ca = self.maybe_dropout(f, ca);
        let x = f.g.add(x, ca);

        let normed = self.ln_mlp.forward(f, x);
        let hm = self.mlp_in.forward(f, normed);
        let hm = f.g.gelu(hm);
        let hm = self.mlp_out.forward(f, hm);
        let hm = self.maybe_dropout(f, hm);
        (f.g.add(x, hm), trace)
    }

    fn maybe_dropout(&self, f: &mut Fwd, x: Var) -> Var {
        if f.train && self.dropout > 0.0 {
            f.g.dropout(x, self.dropout, &mut f.dropout_rng)
        } else {
            x
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use crate::tensor::Graph;
    use ndarray::{ArrayD, IxDyn};
    use rand::{Rng, SeedableRng};

    #[test]
    fn self_attention_rows_sum_to_one_and_respect_causality() {
        let mut ps = ParamStore::new(3);
        let mha = MultiHeadAttention::new(&mut ps, "attn", 8, 2);
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(1);
        let x = ArrayD::from_shape_fn(IxDyn(&[2, 5, 8]), |_| rng.random_range(-1.0..1.0));
        let mut g = Graph::new();
        let mut f = Fwd::inference(&mut g, &ps);
        let xv = f.g.constant(x);
        let (_, trace) = mha.forward(&mut f, xv, xv, true);
        let probs = g.value(trace.probs);
        let (bh, t, s) = (probs.shape()[0], probs.shape()[1], probs.shape()[2]);
        assert_eq!((bh, t, s), (4, 5, 5));
        for b in 0..bh {
            for i in 0..t {
                let sum: f64 = (0..s).map(|j| probs[[b, i, j]]).sum();
                assert!((sum - 1.0).abs() < 1e-5, "row sum {sum}");
                for j in i + 1..s {
                    assert!(
                        probs[[b, i, j]] < 1e-12,
                        "future position {j} visible from {i}"
                    );
                }
            }
        }
    }
}
