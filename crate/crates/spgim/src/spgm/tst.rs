//! Non-local fusion of guidance features into the matting stream. Both
//! feature maps are projected to key/value pairs; each matting location
//! attends over every guidance location (row softmax of the key-similarity
//! matrix), and the retrieved guidance values are concatenated onto the
//! matting values along the channel axis.

use crate::nn::{Conv2d, Fwd, ParamStore};
use crate::tensor::Var;

#[derive(Clone, Debug)]
pub struct TstBlock {
    key_guid: Conv2d,
    value_guid: Conv2d,
    key_matt: Conv2d,
    value_matt: Conv2d,
    pub key_dim: usize,
    pub value_dim: usize,
}

/// Projected streams, flattened row-major over the spatial grid.
/// Shapes: keys (N, tokens, key_dim), values (N, tokens, value_dim).
pub struct TstStreams {
    pub key_guid: Var,
    pub value_guid: Var,
    pub key_matt: Var,
    pub value_matt: Var,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl TstBlock {
    pub fn new(
        ps: &mut ParamStore,
        prefix: &str,
        c_guid: usize,
        c_matt: usize,
        key_dim: usize,
        value_dim: usize,
    ) -> Self {
        TstBlock {
            key_guid: Conv2d::same(ps, &format!("{prefix}.key_guid"), c_guid, key_dim, 1, 1, 1, true),
            value_guid: Conv2d::same(ps, &format!("{prefix}.value_guid"), c_guid, value_dim, 1, 1, 1, true),
            key_matt: Conv2d::same(ps, &format!("{prefix}.key_matt"), c_matt, key_dim, 1, 1, 1, true),
            value_matt: Conv2d::same(ps, &format!("{prefix}.value_matt"), c_matt, value_dim, 1, 1, 1, true),
            key_dim,
            value_dim,
        }
    }

    /// Project both feature maps into key/value token streams. The features
    /// must share the spatial grid (same stride).
    pub fn project(&self, f: &mut Fwd, feat_guid: Var, feat_matt: Var) -> TstStreams {
        let gs = f.g.shape(feat_guid).to_vec();
        let ms = f.g.shape(feat_matt).to_vec();
        assert_eq!(
            (gs[2], gs[3]),
            (ms[2], ms[3]),
            "guidance and matting features must share stride: {gs:?} vs {ms:?}"
        );
        let (gh, gw) = (ms[2], ms[3]);
        let to_tokens = |f: &mut Fwd, x: Var, d: usize| {
            let n = f.g.shape(x)[0];
            let flat = f.g.reshape(x, &[n, d, gh * gw]);
            f.g.permute(flat, &[0, 2, 1])
        };
        let kg = self.key_guid.forward(f, feat_guid);
        let vg = self.value_guid.forward(f, feat_guid);
        let km = self.key_matt.forward(f, feat_matt);
        let vm = self.value_matt.forward(f, feat_matt);
        TstStreams {
            key_guid: to_tokens(f, kg, self.key_dim),
            value_guid: to_tokens(f, vg, self.value_dim),
            key_matt: to_tokens(f, km, self.key_dim),
            value_matt: to_tokens(f, vm, self.value_dim),
            grid_h: gh,
            grid_w: gw,
        }
    }

    /// Full fusion: project, attend, concatenate. Output is NCHW with
    /// 2*value_dim channels (matting values first, retrieved second).
    pub fn fuse(&self, f: &mut Fwd, feat_guid: Var, feat_matt: Var) -> Var {
        self.fuse_traced(f, feat_guid, feat_matt).0
    }

    /// Fusion plus the attention matrix (N, matting tokens, guidance
    /// tokens) for dumping.
    pub fn fuse_traced(&self, f: &mut Fwd, feat_guid: Var, feat_matt: Var) -> (Var, Var) {
        let streams = self.project(f, feat_guid, feat_matt);
        let attn = tst_attention(f, &streams);
        let retrieved = f.g.bmm(attn, streams.value_guid);
        let cat = f.g.concat(2, &[streams.value_matt, retrieved]);
        let spatial = f.g.permute(cat, &[0, 2, 1]);
        let n = f.g.shape(streams.value_matt)[0];
        let fused = f.g.reshape(
            spatial,
            &[n, 2 * self.value_dim, streams.grid_h, streams.grid_w],
        );
        (fused, attn)
    }
}

/// The non-local core: attention scores between matting and guidance keys,
/// row-softmax over guidance locations, retrieval of guidance values, and
/// channel concatenation. Returns NCHW (N, 2*value_dim, H, W).
pub fn tst_attend(f: &mut Fwd, streams: &TstStreams) -> Var {
    let ms = f.g.shape(streams.key_matt).to_vec();
    let (n, tokens_m, _) = (ms[0], ms[1], ms[2]);
    let vs = f.g.shape(streams.value_matt).to_vec();
    let value_dim = vs[2];
    assert_eq!(
        tokens_m,
        streams.grid_h * streams.grid_w,
        "matting token count must match the spatial grid"
    );

    // scores[m, g] = k_matt[m] . k_guid[g]; rows normalize over guidance.
    let scores = f.g.bmm_transpose_b(streams.key_matt, streams.key_guid);
    let attn = f.g.softmax_last(scores);
    let retrieved = f.g.bmm(attn, streams.value_guid);
    let cat = f.g.concat(2, &[streams.value_matt, retrieved]);
    let spatial = f.g.permute(cat, &[0, 2, 1]);
    f.g.reshape(
        spatial,
        &[n, 2 * value_dim, streams.grid_h, streams.grid_w],
    )
}

/// Attention probabilities alone, for inspection and dumping.
pub fn tst_attention(f: &mut Fwd, streams: &TstStreams) -> Var {
    let scores = f.g.bmm_transpose_b(streams.key_matt, streams.key_guid);
    f.g.softmax_last(scores)
}
