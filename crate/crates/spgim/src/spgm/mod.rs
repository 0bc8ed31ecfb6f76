//! Guided matting branch: a four-channel encoder over (RGB, saliency mask),
//! non-local fusion of distillation features at stages 2-4, a merge decoder,
//! and three focal refinement levels emitting alphas at strides 8, 4, 1,
//! trained with a weighted multi-level L1 alpha loss.

mod aft;
mod tst;

pub use aft::{focal_mask, focal_mask_var, AftLevel, PlainLevel};
pub use tst::{tst_attend, tst_attention, TstBlock, TstStreams};

use ndarray::{Array2, Array4, ArrayD, Axis, IxDyn};

use crate::data::{AlphaMatte, ImagePlane};
use crate::error::{Error, Result};
use crate::nn::{Adam, Backbone, BackboneConfig, Conv2d, ConvBlock, Fwd, ParamStore, PyramidVars};
use crate::spd::{FeaturePyramid, SaliencyMask};
use crate::tensor::{resize_plane_bilinear, to_scalar, Graph, Var};

pub const LEVEL_STRIDES: [usize; 3] = [8, 4, 1];
pub const DEFAULT_LOSS_WEIGHTS: [f64; 3] = [1.0, 2.0, 3.0];
pub const FOCAL_EPS: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct SpgmConfig {
    /// Four-channel encoder (RGB plus the saliency mask).
    pub backbone: BackboneConfig,
    /// Channel counts of the guidance pyramid stages 2..4 (from the
    /// distillation branch).
    pub guidance_channels: [usize; 3],
    pub use_tst: bool,
    pub use_aft: bool,
    /// Permit running without a guidance pyramid (skips fusion).
    pub allow_unguided: bool,
    pub focal_eps: f64,
}

impl SpgmConfig {
    pub fn desk(width_multiplier: f64) -> Self {
        let backbone = BackboneConfig::desk(4, width_multiplier);
        let ch = backbone.stage_channels();
        SpgmConfig {
            backbone,
            guidance_channels: [ch[1], ch[2], ch[3]],
            use_tst: true,
            use_aft: true,
            allow_unguided: false,
            focal_eps: FOCAL_EPS,
        }
    }

    pub fn full_scale() -> Self {
        let backbone = BackboneConfig::full_scale(4);
        SpgmConfig {
            backbone,
            guidance_channels: [512, 1024, 2048],
            use_tst: true,
            use_aft: true,
            allow_unguided: false,
            focal_eps: FOCAL_EPS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.backbone.in_channels != 4 {
            return Err(Error::InvalidArgument(format!(
                "matting encoder expects 4 input channels, got {}",
                self.backbone.in_channels
            )));
        }
        if !(0.0..0.5).contains(&self.focal_eps) {
            return Err(Error::InvalidArgument(format!(
                "focal eps {} out of range",
                self.focal_eps
            )));
        }
        Ok(())
    }
}

/// Coarse-to-fine alpha predictions; the last entry is full resolution.
#[derive(Clone, Debug)]
pub struct MattingOutput {
    pub alphas: Vec<AlphaMatte>,
}

impl MattingOutput {
    pub fn final_alpha(&self) -> &AlphaMatte {
        self.alphas.last().expect("at least one level")
    }
}

enum Level {
    Focal(AftLevel),
    Plain(PlainLevel),
}

impl Level {
    fn refine(&self, f: &mut Fwd, a_prev: Var, feat: Var) -> Var {
        match self {
            Level::Focal(l) => l.refine(f, a_prev, feat),
            Level::Plain(l) => l.refine(f, a_prev, feat),
        }
    }
}

pub struct SpgmNetwork {
    pub config: SpgmConfig,
    pub prefix: String,
    pub encoder: Backbone,
    tst: Option<[TstBlock; 3]>,
    compress: Option<[ConvBlock; 3]>,
    p4: ConvBlock,
    p3: ConvBlock,
    m3: ConvBlock,
    p2: ConvBlock,
    g1: ConvBlock,
    p1: ConvBlock,
    g2: ConvBlock,
    shallow: ConvBlock,
    g3: ConvBlock,
    a0_head: Conv2d,
    levels: [Level; 3],
}

/// In-graph outputs: the seed alpha, the three level alphas, and (when
/// fusion ran) the per-stage attention matrices.
pub struct SpgmVars {
    pub a0: Var,
    pub alphas: Vec<Var>,
    pub attention: Vec<Var>,
}

/// Guidance stage features already inside the graph.
#[derive(Clone, Copy)]
pub struct GuidanceVars {
    pub s2: Var,
    pub s3: Var,
    pub s4: Var,
}

impl SpgmNetwork {
    pub fn new(ps: &mut ParamStore, prefix: &str, config: SpgmConfig) -> Result<Self> {
        config.validate()?;
        let encoder = Backbone::new(ps, &format!("{prefix}.encoder"), config.backbone.clone());
        let ch = config.backbone.stage_channels();
        let (c1, c2, c3, c4) = (ch[0], ch[1], ch[2], ch[3]);
        let gd = config.guidance_channels;

        let tst = config.use_tst.then(|| {
            let mk = |stage: usize, c_guid: usize, c_matt: usize, ps: &mut ParamStore| {
                TstBlock::new(
                    ps,
                    &format!("{prefix}.tst.stage{stage}"),
                    c_guid,
                    c_matt,
                    (c_matt / 8).max(4),
                    c_matt / 2,
                )
            };
            [
                mk(2, gd[0], c2, ps),
                mk(3, gd[1], c3, ps),
                mk(4, gd[2], c4, ps),
            ]
        });
        let compress = config.use_tst.then(|| {
            [
                ConvBlock::new(ps, &format!("{prefix}.post_tst.stage2"), 2 * (c2 / 2), c2, 1, 1, 1),
                ConvBlock::new(ps, &format!("{prefix}.post_tst.stage3"), 2 * (c3 / 2), c3, 1, 1, 1),
                ConvBlock::new(ps, &format!("{prefix}.post_tst.stage4"), 2 * (c4 / 2), c4, 1, 1, 1),
            ]
        });

        let cs = (c1 / 4).max(8);
        let p4 = ConvBlock::new(ps, &format!("{prefix}.decoder.p4"), c4, c2, 1, 1, 1);
        let p3 = ConvBlock::new(ps, &format!("{prefix}.decoder.p3"), c3, c2, 1, 1, 1);
        let m3 = ConvBlock::new(ps, &format!("{prefix}.decoder.m3"), 2 * c2, c2, 3, 1, 1);
        let p2 = ConvBlock::new(ps, &format!("{prefix}.decoder.p2"), c2, c2, 1, 1, 1);
        let g1 = ConvBlock::new(ps, &format!("{prefix}.decoder.g1"), 2 * c2, c2, 3, 1, 1);
        let p1 = ConvBlock::new(ps, &format!("{prefix}.decoder.p1"), c1, c1, 1, 1, 1);
        let g2 = ConvBlock::new(ps, &format!("{prefix}.decoder.g2"), c2 + c1, c1, 3, 1, 1);
        let shallow = ConvBlock::new(ps, &format!("{prefix}.decoder.shallow"), 4, cs, 3, 1, 1);
        let g3 = ConvBlock::new(ps, &format!("{prefix}.decoder.g3"), c1 + cs, cs, 3, 1, 1);
        let a0_head = Conv2d::same(ps, &format!("{prefix}.decoder.a0_head"), c4, 1, 1, 1, 1, true);

        let mk_level = |idx: usize, width: usize, ps: &mut ParamStore| -> Level {
            if config.use_aft {
                Level::Focal(AftLevel::new(
                    ps,
                    &format!("{prefix}.aft.level{idx}"),
                    width,
                    config.focal_eps,
                ))
            } else {
                Level::Plain(PlainLevel::new(
                    ps,
                    &format!("{prefix}.refine.level{idx}"),
                    width,
                ))
            }
        };
        let levels = [
            mk_level(1, c2, ps),
            mk_level(2, c1, ps),
            mk_level(3, cs, ps),
        ];

        Ok(SpgmNetwork {
            config,
            prefix: prefix.to_string(),
            encoder,
            tst,
            compress,
            p4,
            p3,
            m3,
            p2,
            g1,
            p1,
            g2,
            shallow,
            g3,
            a0_head,
            levels,
        })
    }

    /// In-graph forward. `input` is the (N,4,H,W) concatenation of RGB and
    /// the upsampled saliency mask; `guidance` carries the distillation
    /// stage features at matching strides.
    pub fn forward_vars(
        &self,
        f: &mut Fwd,
        input: Var,
        guidance: Option<GuidanceVars>,
    ) -> Result<SpgmVars> {
        let shape = f.g.shape(input).to_vec();
        if shape[1] != 4 {
            return Err(Error::shape("spgm input", &[4], &[shape[1]]));
        }
        let (h, w) = (shape[2], shape[3]);
        let enc: PyramidVars = self.encoder.forward(f, input);

        let mut attention = Vec::new();
        let fused: [Var; 3] = match (&self.tst, guidance) {
            (Some(blocks), Some(guid)) => {
                let compress = self.compress.as_ref().expect("compress exists with tst");
                let mut out = [enc.s2; 3];
                for (i, (block, (enc_feat, guid_feat))) in blocks
                    .iter()
                    .zip([
                        (enc.s2, guid.s2),
                        (enc.s3, guid.s3),
                        (enc.s4, guid.s4),
                    ])
                    .enumerate()
                {
                    let (cat, attn) = block.fuse_traced(f, guid_feat, enc_feat);
                    attention.push(attn);
                    out[i] = compress[i].forward(f, cat);
                }
                out
            }
            (Some(_), None) if !self.config.allow_unguided => {
                return Err(Error::InvalidArgument(
                    "guidance pyramid missing and unguided fallback not configured".into(),
                ))
            }
            _ => [enc.s2, enc.s3, enc.s4],
        };

        let [f2, f3, f4] = fused;
        let a0 = {
            let logits = self.a0_head.forward(f, f4);
            f.g.sigmoid(logits)
        };
        let t4 = self.p4.forward(f, f4);
        let t4 = f.g.upsample_bilinear(t4, 2);
        let t3 = self.p3.forward(f, f3);
        let cat3 = f.g.concat(1, &[t4, t3]);
        let m3 = self.m3.forward(f, cat3);
        let m3u = f.g.upsample_bilinear(m3, 2);
        let t2 = self.p2.forward(f, f2);
        let cat2 = f.g.concat(1, &[m3u, t2]);
        let feat1 = self.g1.forward(f, cat2); // stride 8

        let e1 = self.p1.forward(f, enc.s1);
        let f1u = f.g.upsample_bilinear(feat1, 2);
        let cat1 = f.g.concat(1, &[f1u, e1]);
        let feat2 = self.g2.forward(f, cat1); // stride 4

        let sh = self.shallow.forward(f, input);
        let f2u = f.g.resize_bilinear(feat2, h, w);
        let cat0 = f.g.concat(1, &[f2u, sh]);
        let feat3 = self.g3.forward(f, cat0); // stride 1

        let a1 = self.levels[0].refine(f, a0, feat1);
        let a2 = self.levels[1].refine(f, a1, feat2);
        let a3 = self.levels[2].refine(f, a2, feat3);
        Ok(SpgmVars {
            a0,
            alphas: vec![a1, a2, a3],
            attention,
        })
    }

    /// Public single-image forward: predicts the coarse-to-fine alphas from
    /// an image and its saliency mask, optionally guided by the
    /// distillation pyramid.
    pub fn forward(
        &self,
        ps: &ParamStore,
        image: &ImagePlane,
        mask: &SaliencyMask,
        guidance: Option<&FeaturePyramid>,
    ) -> Result<MattingOutput> {
        let (h, w) = (image.height(), image.width());
        for side in [h, w] {
            if side % 32 != 0 {
                let pad = 32 - side % 32;
                return Err(Error::NotDivisible {
                    side,
                    divisor: 32,
                    padded: side + pad,
                    pad,
                });
            }
        }
        let mut g = Graph::new();
        let mut f = Fwd::inference(&mut g, ps);
        let input = {
            let arr = assemble_input(image, mask)?;
            f.g.constant(arr.into_dyn())
        };
        let guidance_vars = match guidance {
            Some(p) => Some(pyramid_constants(&mut f, std::slice::from_ref(&p))?),
            None => None,
        };
        let vars = self.forward_vars(&mut f, input, guidance_vars)?;
        let mut alphas = Vec::with_capacity(vars.alphas.len());
        for v in &vars.alphas {
            let a = g.value(*v);
            let (ah, aw) = (a.shape()[2], a.shape()[3]);
            alphas.push(AlphaMatte(Array2::from_shape_fn((ah, aw), |(y, x)| {
                a[[0, 0, y, x]]
            })));
        }
        Ok(MattingOutput { alphas })
    }
}

/// RGB (3,H,W) plus mask upsampled bilinearly to (H,W) -> (1,4,H,W).
pub fn assemble_input(image: &ImagePlane, mask: &SaliencyMask) -> Result<Array4<f64>> {
    let (h, w) = (image.height(), image.width());
    let mask_up = resize_plane_bilinear(&mask.values, h, w);
    let mut out = Array4::zeros((1, 4, h, w));
    for c in 0..3 {
        out.index_axis_mut(Axis(0), 0)
            .index_axis_mut(Axis(0), c)
            .assign(&image.0.index_axis(Axis(0), c));
    }
    out.index_axis_mut(Axis(0), 0)
        .index_axis_mut(Axis(0), 3)
        .assign(&mask_up);
    Ok(out)
}

/// Batch of per-sample guidance pyramids into graph constants.
pub fn pyramid_constants(f: &mut Fwd, pyramids: &[&FeaturePyramid]) -> Result<GuidanceVars> {
    assert!(!pyramids.is_empty());
    let stack = |f: &mut Fwd, sel: &dyn Fn(&FeaturePyramid) -> &ndarray::Array3<f64>| {
        let (c, h, w) = sel(pyramids[0]).dim();
        let mut arr = Array4::zeros((pyramids.len(), c, h, w));
        for (i, p) in pyramids.iter().enumerate() {
            arr.index_axis_mut(Axis(0), i).assign(sel(p));
        }
        f.g.constant(arr.into_dyn())
    };
    Ok(GuidanceVars {
        s2: stack(f, &|p| &p.s2),
        s3: stack(f, &|p| &p.s3),
        s4: stack(f, &|p| &p.s4),
    })
}

/// Weighted multi-level L1 loss, in-graph. `targets` are constants at each
/// level's resolution.
pub fn spgm_loss_var(f: &mut Fwd, alphas: &[Var], targets: &[Var], weights: &[f64]) -> Result<Var> {
    if weights.len() != alphas.len() {
        return Err(Error::InvalidArgument(format!(
            "{} loss weights for {} levels",
            weights.len(),
            alphas.len()
        )));
    }
    let mut total: Option<Var> = None;
    for ((&a, &t), &lambda) in alphas.iter().zip(targets.iter()).zip(weights.iter()) {
        let diff = f.g.sub(a, t);
        let l1 = f.g.abs(diff);
        let mean = f.g.mean_all(l1);
        let weighted = f.g.affine(mean, lambda, 0.0);
        total = Some(match total {
            Some(acc) => f.g.add(acc, weighted),
            None => weighted,
        });
    }
    Ok(total.expect("at least one level"))
}

/// Plane-level loss: downsamples the ground truth to each level by area
/// averaging.
pub fn spgm_loss(out: &MattingOutput, a_star: &AlphaMatte, weights: &[f64]) -> Result<f64> {
    if weights.len() != out.alphas.len() {
        return Err(Error::InvalidArgument(format!(
            "{} loss weights for {} levels",
            weights.len(),
            out.alphas.len()
        )));
    }
    let mut total = 0.0;
    for (a, &lambda) in out.alphas.iter().zip(weights.iter()) {
        let (ah, aw) = a.0.dim();
        let (gh, gw) = a_star.0.dim();
        if gh % ah != 0 || gw % aw != 0 {
            return Err(Error::shape("spgm_loss level", &[ah, aw], &[gh, gw]));
        }
        let factor = gh / ah;
        if gw / aw != factor {
            return Err(Error::shape("spgm_loss level", &[ah, aw], &[gh, gw]));
        }
        let target = crate::data::area_downsample(&a_star.0, factor);
        let mut acc = 0.0;
        for (p, t) in a.0.iter().zip(target.iter()) {
            acc += (p - t).abs();
        }
        total += lambda * acc / (ah * aw) as f64;
    }
    Ok(total)
}

/// One training sample with its frozen-branch guidance precomputed.
pub struct GuidedSample {
    pub image: ImagePlane,
    pub alpha_gt: AlphaMatte,
    pub mask: SaliencyMask,
    pub pyramid: FeaturePyramid,
}

/// Per-level ground-truth constants for a batch.
fn level_targets(
    f: &mut Fwd,
    batch: &[&GuidedSample],
    level_shapes: &[(usize, usize)],
) -> Vec<Var> {
    level_shapes
        .iter()
        .map(|&(lh, lw)| {
            let mut arr = ArrayD::zeros(IxDyn(&[batch.len(), 1, lh, lw]));
            for (i, s) in batch.iter().enumerate() {
                let (gh, _) = s.alpha_gt.0.dim();
                let t = crate::data::area_downsample(&s.alpha_gt.0, gh / lh);
                for y in 0..lh {
                    for x in 0..lw {
                        arr[[i, 0, y, x]] = t[[y, x]];
                    }
                }
            }
            f.g.constant(arr)
        })
        .collect()
}

/// One Adam step over guided samples. Returns the loss before the update.
pub fn train_step(
    net: &SpgmNetwork,
    ps: &mut ParamStore,
    optimizer: &mut Adam,
    batch: &[&GuidedSample],
    weights: &[f64],
    lr: f64,
    step_seed: u64,
) -> Result<f64> {
    assert!(!batch.is_empty());
    let mut g = Graph::new();
    let mut f = Fwd::training(&mut g, ps, step_seed);
    let input = {
        let mut arr = Array4::zeros((
            batch.len(),
            4,
            batch[0].image.height(),
            batch[0].image.width(),
        ));
        for (i, s) in batch.iter().enumerate() {
            let one = assemble_input(&s.image, &s.mask)?;
            arr.index_axis_mut(Axis(0), i)
                .assign(&one.index_axis(Axis(0), 0));
        }
        f.g.constant(arr.into_dyn())
    };
    let pyramids: Vec<&FeaturePyramid> = batch.iter().map(|s| &s.pyramid).collect();
    let guidance = pyramid_constants(&mut f, &pyramids)?;
    let vars = net.forward_vars(&mut f, input, Some(guidance))?;
    let shapes: Vec<(usize, usize)> = vars
        .alphas
        .iter()
        .map(|&a| {
            let s = f.g.shape(a);
            (s[2], s[3])
        })
        .collect();
    let targets = level_targets(&mut f, batch, &shapes);
    let loss = spgm_loss_var(&mut f, &vars.alphas, &targets, weights)?;
    let loss_value = to_scalar(g.value(loss));
    let grads = g.backward(loss);
    optimizer.step(ps, &grads, lr);
    Ok(loss_value)
}
