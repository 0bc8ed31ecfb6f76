//! Saliency distillation branch: the caption-pretrained visual encoder is
//! spliced to a multi-rate dilated-convolution bridge and a small upsampling
//! decoder that predicts a semantic saliency mask, supervised by the
//! Gaussian-blurred thumbnail of the ground-truth alpha.


use ndarray::{Array2, Array3, Axis};

use crate::data::{ImagePlane, SaliencyTarget};
use crate::error::{Error, Result};
use crate::nn::{Adam, Backbone, BackboneConfig, Conv2d, ConvBlock, Fwd, GroupNorm, ParamStore, PyramidVars};
use crate::tensor::{to_scalar, Graph, Var};

/// Multi-rate context bridge configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct AsppConfig {
    pub dilation_rates: Vec<usize>,
    pub branch_channels: usize,
    pub global_pool_branch: bool,
}

impl AsppConfig {
    pub fn standard(width_multiplier: f64) -> Self {
        AsppConfig {
            dilation_rates: vec![6, 12, 18],
            branch_channels: crate::nn::scale_channels(256, width_multiplier),
            global_pool_branch: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for &r in &self.dilation_rates {
            if r < 1 {
                return Err(Error::InvalidArgument("dilation rate must be >= 1".into()));
            }
            if !seen.insert(r) {
                return Err(Error::InvalidArgument(format!("duplicate dilation rate {r}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpdConfig {
    pub backbone: BackboneConfig,
    pub aspp: AsppConfig,
    /// Output stride of the mask head; matches the saliency-target
    /// downsample factor.
    pub mask_stride: usize,
}

impl SpdConfig {
    pub fn desk(width_multiplier: f64) -> Self {
        SpdConfig {
            backbone: BackboneConfig::desk(3, width_multiplier),
            aspp: AsppConfig::standard(width_multiplier),
            mask_stride: 16,
        }
    }

    pub fn full_scale() -> Self {
        SpdConfig {
            backbone: BackboneConfig::full_scale(3),
            aspp: AsppConfig::standard(1.0),
            mask_stride: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.aspp.validate()?;
        if !self.mask_stride.is_power_of_two() || self.mask_stride > 32 {
            return Err(Error::InvalidArgument(format!(
                "mask stride {} must be a power of two <= 32",
                self.mask_stride
            )));
        }
        Ok(())
    }
}

/// Predicted saliency plane in [0,1] at input/mask_stride resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMask {
    pub values: Array2<f64>,
    pub stride: usize,
}

/// Stage features (single image, channel-first) handed to the matting
/// branch for guidance.
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    pub s2: Array3<f64>,
    pub s3: Array3<f64>,
    pub s4: Array3<f64>,
}

struct AsppBranch {
    conv: Conv2d,
    norm: GroupNorm,
}

pub struct SpdNetwork {
    pub config: SpdConfig,
    pub prefix: String,
    pub backbone: Backbone,
    branches: Vec<AsppBranch>,
    pool_branch: Option<AsppBranch>,
    project: ConvBlock,
    up_blocks: Vec<ConvBlock>,
    tail: ConvBlock,
    head: Conv2d,
}

/// In-graph forward outputs.
pub struct SpdVars {
    pub mask: Var,
    pub pyramid: PyramidVars,
}

impl SpdNetwork {
    pub fn new(ps: &mut ParamStore, prefix: &str, config: SpdConfig) -> Result<Self> {
        config.validate()?;
        let backbone = Backbone::new(ps, &format!("{prefix}.backbone"), config.backbone.clone());
        let c4 = config.backbone.final_channels();
        let bc = config.aspp.branch_channels;

        let mut branches = Vec::new();
        branches.push(AsppBranch {
            conv: Conv2d::same(ps, &format!("{prefix}.aspp.point.conv"), c4, bc, 1, 1, 1, false),
            norm: GroupNorm::new(ps, &format!("{prefix}.aspp.point.norm"), bc),
        });
        for &rate in &config.aspp.dilation_rates {
            branches.push(AsppBranch {
                conv: Conv2d::same(
                    ps,
                    &format!("{prefix}.aspp.rate{rate}.conv"),
                    c4,
                    bc,
                    3,
                    1,
                    rate,
                    false,
                ),
                norm: GroupNorm::new(ps, &format!("{prefix}.aspp.rate{rate}.norm"), bc),
            });
        }
        let pool_branch = config.aspp.global_pool_branch.then(|| AsppBranch {
            conv: Conv2d::same(ps, &format!("{prefix}.aspp.pool.conv"), c4, bc, 1, 1, 1, false),
            norm: GroupNorm::new(ps, &format!("{prefix}.aspp.pool.norm"), bc),
        });
        let n_branches = branches.len() + pool_branch.is_some() as usize;
        let project = ConvBlock::new(
            ps,
            &format!("{prefix}.aspp.project"),
            bc * n_branches,
            bc,
            1,
            1,
            1,
        );

        let n_up = (32 / config.mask_stride).trailing_zeros() as usize;
        let mut up_blocks = Vec::with_capacity(n_up);
        let mut c = bc;
        for i in 0..n_up {
            let c_out = (c / 2).max(8);
            up_blocks.push(ConvBlock::new(
                ps,
                &format!("{prefix}.decoder.up{i}"),
                c,
                c_out,
                3,
                1,
                1,
            ));
            c = c_out;
        }
        let tail_out = (c / 2).max(8);
        let tail = ConvBlock::new(ps, &format!("{prefix}.decoder.tail"), c, tail_out, 3, 1, 1);
        let head = Conv2d::same(ps, &format!("{prefix}.decoder.head"), tail_out, 1, 1, 1, 1, true);

        Ok(SpdNetwork {
            config,
            prefix: prefix.to_string(),
            backbone,
            branches,
            pool_branch,
            project,
            up_blocks,
            tail,
            head,
        })
    }

    /// In-graph forward over a batch: images (N,3,H,W) -> sigmoid mask at
    /// `mask_stride` plus the stage features for guidance.
    pub fn forward_vars(&self, f: &mut Fwd, images: Var) -> SpdVars {
        let pyramid = self.backbone.forward(f, images);
        let s4 = pyramid.s4;
        let s4_shape = f.g.shape(s4).to_vec();
        let (gh, gw) = (s4_shape[2], s4_shape[3]);

        let mut outs = Vec::new();
        for b in &self.branches {
            let y = b.conv.forward(f, s4);
            let y = b.norm.forward(f, y);
            outs.push(f.g.relu(y));
        }
        if let Some(b) = &self.pool_branch {
            let pooled = f.g.global_avg_pool(s4);
            let y = b.conv.forward(f, pooled);
            let y = b.norm.forward(f, y);
            let y = f.g.relu(y);
            outs.push(f.g.resize_bilinear(y, gh, gw));
        }
        let cat = f.g.concat(1, &outs);
        let mut x = self.project.forward(f, cat);
        for block in &self.up_blocks {
            x = f.g.upsample_bilinear(x, 2);
            x = block.forward(f, x);
        }
        let x = self.tail.forward(f, x);
        let logits = self.head.forward(f, x);
        let mask = f.g.sigmoid(logits);
        SpdVars { mask, pyramid }
    }

    /// Single-image forward returning concrete planes.
    pub fn forward(
        &self,
        ps: &ParamStore,
        image: &ImagePlane,
    ) -> Result<(SaliencyMask, FeaturePyramid)> {
        self.check_initialized(ps)?;
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
        let batch = crate::caption::image_batch(&[image]);
        let images = f.g.constant(batch.into_dyn());
        let vars = self.forward_vars(&mut f, images);
        let mask_v = g.value(vars.mask);
        let (mh, mw) = (mask_v.shape()[2], mask_v.shape()[3]);
        let values = Array2::from_shape_fn((mh, mw), |(y, x)| mask_v[[0, 0, y, x]]);
        let take = |v: Var| {
            let a = g.value(v);
            let (c, fh, fw) = (a.shape()[1], a.shape()[2], a.shape()[3]);
            Array3::from_shape_fn((c, fh, fw), |(ci, y, x)| a[[0, ci, y, x]])
        };
        Ok((
            SaliencyMask {
                values,
                stride: self.config.mask_stride,
            },
            FeaturePyramid {
                s2: take(vars.pyramid.s2),
                s3: take(vars.pyramid.s3),
                s4: take(vars.pyramid.s4),
            },
        ))
    }

    fn check_initialized(&self, ps: &ParamStore) -> Result<()> {
        let probe = format!("{}.backbone.stem.conv.weight", self.prefix);
        if !ps.contains(&probe) {
            return Err(Error::Uninitialized(format!(
                "parameter store holds no weights under {}",
                self.prefix
            )));
        }
        Ok(())
    }
}

/// Per-sample root-mean-square error between mask and target, averaged over
/// the batch (in-graph).
pub fn spd_loss_var(f: &mut Fwd, mask: Var, target: Var) -> Var {
    let ms = f.g.shape(mask).to_vec();
    let ts = f.g.shape(target).to_vec();
    assert_eq!(ms, ts, "spd loss operands must share shape");
    let n = ms[0];
    let pixels: usize = ms.iter().skip(1).product();
    let diff = f.g.sub(mask, target);
    let sq = f.g.square(diff);
    let flat = f.g.reshape(sq, &[n, pixels]);
    let per_sample = f.g.mean_per_row(flat);
    let rmse = f.g.sqrt(per_sample);
    f.g.mean_all(rmse)
}

/// Concrete-plane version of the loss.
pub fn spd_loss(mask: &SaliencyMask, target: &SaliencyTarget) -> Result<f64> {
    if mask.values.dim() != target.values.dim() {
        return Err(Error::shape(
            "spd_loss",
            &[target.values.dim().0, target.values.dim().1],
            &[mask.values.dim().0, mask.values.dim().1],
        ));
    }
    let n = mask.values.len() as f64;
    let mut acc = 0.0;
    for (m, t) in mask.values.iter().zip(target.values.iter()) {
        acc += (m - t) * (m - t);
    }
    Ok((acc / n).sqrt())
}

/// One Adam step over a batch of (image, saliency target) pairs. Returns the
/// loss before the update.
pub fn train_step(
    net: &SpdNetwork,
    ps: &mut ParamStore,
    optimizer: &mut Adam,
    batch: &[(&ImagePlane, &SaliencyTarget)],
    lr: f64,
    step_seed: u64,
) -> Result<f64> {
    assert!(!batch.is_empty());
    let images: Vec<&ImagePlane> = batch.iter().map(|(i, _)| *i).collect();
    let mut g = Graph::new();
    let mut f = Fwd::training(&mut g, ps, step_seed);
    let images_var = {
        let arr = crate::caption::image_batch(&images);
        f.g.constant(arr.into_dyn())
    };
    let vars = net.forward_vars(&mut f, images_var);
    let mask_shape = f.g.shape(vars.mask).to_vec();
    let (mh, mw) = (mask_shape[2], mask_shape[3]);
    let mut target = ndarray::Array4::<f64>::zeros((batch.len(), 1, mh, mw));
    for (i, (_, t)) in batch.iter().enumerate() {
        if t.values.dim() != (mh, mw) {
            return Err(Error::shape("spd target", &[mh, mw], &[t.values.dim().0, t.values.dim().1]));
        }
        target
            .index_axis_mut(Axis(0), i)
            .index_axis_mut(Axis(0), 0)
            .assign(&t.values);
    }
    let target = f.g.constant(target.into_dyn());
    let loss = spd_loss_var(&mut f, vars.mask, target);
    let loss_value = to_scalar(g.value(loss));
    let grads = g.backward(loss);
    optimizer.step(ps, &grads, lr);
    Ok(loss_value)
}
