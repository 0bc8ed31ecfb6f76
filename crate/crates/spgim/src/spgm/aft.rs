//! Focal-region refinement. Each level splits into a large-receptive-field
//! body path over the upsampled previous alpha and a small-kernel boundary
//! path over the focal-masked alpha, then fuses both into the next alpha.

use ndarray::{Array2, ArrayD};

use crate::nn::{Conv2d, ConvBlock, Fwd, GroupNorm, ParamStore};
use crate::tensor::{ConvSpec, Var};

/// Binary focal mask: 1 exactly where the previous alpha is fractional.
/// `eps` relaxes the open interval so sigmoid outputs near 0/1 count as
/// confident.
pub fn focal_mask(a_prev: &Array2<f64>, eps: f64) -> Array2<f64> {
    a_prev.mapv(|a| f64::from(a > eps && a < 1.0 - eps))
}

/// In-graph focal mask over an (N,1,h,w) alpha. The mask is a constant
/// (hard threshold); gradients flow through the alpha it multiplies.
pub fn focal_mask_var(f: &mut Fwd, a_prev: Var, eps: f64) -> Var {
    let value = f.g.value(a_prev);
    let mask: ArrayD<f64> = value.mapv(|a| f64::from(a > eps && a < 1.0 - eps));
    f.g.constant(mask)
}

/// Conv + group norm + ReLU with a rectangular dilated kernel, for the
/// spatially separable body stack.
#[derive(Clone, Debug)]
struct RectBlock {
    conv: Conv2d,
    norm: GroupNorm,
}

impl RectBlock {
    fn new(
        ps: &mut ParamStore,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize),
        dilation: (usize, usize),
    ) -> Self {
        let pad = (
            dilation.0 * (kernel.0 - 1) / 2,
            dilation.1 * (kernel.1 - 1) / 2,
        );
        RectBlock {
            conv: Conv2d::new(
                ps,
                &format!("{prefix}.conv"),
                c_in,
                c_out,
                kernel,
                ConvSpec {
                    stride: (1, 1),
                    pad,
                    dilation,
                },
                false,
            ),
            norm: GroupNorm::new(ps, &format!("{prefix}.norm"), c_out),
        }
    }

    fn forward(&self, f: &mut Fwd, x: Var) -> Var {
        let y = self.conv.forward(f, x);
        let y = self.norm.forward(f, y);
        f.g.relu(y)
    }
}

pub struct AftLevel {
    body_col: RectBlock,
    body_row: RectBlock,
    boundary1: ConvBlock,
    boundary2: ConvBlock,
    fuse: ConvBlock,
    head: Conv2d,
    pub eps: f64,
}

impl AftLevel {
    pub fn new(ps: &mut ParamStore, prefix: &str, feat_channels: usize, eps: f64) -> Self {
        let w = feat_channels;
        let c_in = w + 1;
        AftLevel {
            body_col: RectBlock::new(ps, &format!("{prefix}.body_col"), c_in, w, (5, 1), (2, 1)),
            body_row: RectBlock::new(ps, &format!("{prefix}.body_row"), w, w, (1, 5), (1, 2)),
            boundary1: ConvBlock::new(ps, &format!("{prefix}.boundary1"), c_in, w, 3, 1, 1),
            boundary2: ConvBlock::new(ps, &format!("{prefix}.boundary2"), w, w, 3, 1, 1),
            fuse: ConvBlock::new(ps, &format!("{prefix}.fuse"), 2 * w, w, 3, 1, 1),
            head: Conv2d::same(ps, &format!("{prefix}.head"), w, 1, 1, 1, 1, true),
            eps,
        }
    }

    /// Refine the previous alpha against this level's feature map. `a_prev`
    /// is (N,1,h,w) at the coarser resolution; `feat` is (N,C,H,W) at this
    /// level's resolution. Returns the next alpha (N,1,H,W) in [0,1].
    pub fn refine(&self, f: &mut Fwd, a_prev: Var, feat: Var) -> Var {
        let fs = f.g.shape(feat).to_vec();
        let (out_h, out_w) = (fs[2], fs[3]);
        let ps = f.g.shape(a_prev).to_vec();
        assert_eq!(ps[1], 1, "previous alpha must be single-channel");
        assert!(
            out_h % ps[2] == 0 && out_w % ps[3] == 0,
            "feature resolution {out_h}x{out_w} not an integer upsample of alpha {}x{}",
            ps[2],
            ps[3]
        );

        let a_up = f.g.resize_bilinear(a_prev, out_h, out_w);
        let u = focal_mask_var(f, a_prev, self.eps);
        let masked = f.g.mul(a_prev, u);
        let masked_up = f.g.resize_bilinear(masked, out_h, out_w);

        let body_in = f.g.concat(1, &[a_up, feat]);
        let body = self.body_col.forward(f, body_in);
        let body = self.body_row.forward(f, body);

        let boundary_in = f.g.concat(1, &[masked_up, feat]);
        let boundary = self.boundary1.forward(f, boundary_in);
        let boundary = self.boundary2.forward(f, boundary);

        let merged = f.g.concat(1, &[body, boundary]);
        let fused = self.fuse.forward(f, merged);
        let logits = self.head.forward(f, fused);
        f.g.sigmoid(logits)
    }
}

/// Single-path refinement used by the no-refinement ablation: plain
/// convolutions over (upsampled alpha, feature), no focal split.
pub struct PlainLevel {
    conv1: ConvBlock,
    conv2: ConvBlock,
    head: Conv2d,
}

impl PlainLevel {
    pub fn new(ps: &mut ParamStore, prefix: &str, feat_channels: usize) -> Self {
        let w = feat_channels;
        PlainLevel {
            conv1: ConvBlock::new(ps, &format!("{prefix}.conv1"), w + 1, w, 3, 1, 1),
            conv2: ConvBlock::new(ps, &format!("{prefix}.conv2"), w, w, 3, 1, 1),
            head: Conv2d::same(ps, &format!("{prefix}.head"), w, 1, 1, 1, 1, true),
        }
    }

    pub fn refine(&self, f: &mut Fwd, a_prev: Var, feat: Var) -> Var {
        let fs = f.g.shape(feat).to_vec();
        let a_up = f.g.resize_bilinear(a_prev, fs[2], fs[3]);
        let x = f.g.concat(1, &[a_up, feat]);
        let x = self.conv1.forward(f, x);
        let x = self.conv2.forward(f, x);
        let logits = self.head.forward(f, x);
        f.g.sigmoid(logits)
    }
}
