//! End-to-end inference: distillation forward feeding guided matting, with
//! arbitrary-size inputs handled by replicate padding to a multiple of 32
//! and cropping back afterwards.

use ndarray::{Array2, Array3};

use crate::caption::image_batch;
use crate::data::{AlphaMatte, ImagePlane};
use crate::error::{Error, Result};
use crate::nn::{Fwd, ParamStore};
use crate::spd::{SaliencyMask, SpdNetwork};
use crate::spgm::{assemble_input, MattingOutput, SpgmNetwork, SpgmVars};
use crate::tensor::Graph;

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;

/// Everything one forward pass produces.
pub struct PipelineOutput {
    /// Final alpha at the original input resolution.
    pub alpha: AlphaMatte,
    pub saliency_mask: SaliencyMask,
    /// Coarse-to-fine level alphas (padded resolution).
    pub level_alphas: Vec<AlphaMatte>,
    /// Per-stage mean attention over guidance locations, as (gh, gw)
    /// planes, coarse stages last.
    pub attention_maps: Vec<Array2<f64>>,
}

/// Fields that must agree between the two branch configs for the pipeline
/// to be coherent.
pub fn check_compatible(spd_cfg: &TrainConfig, spgm_cfg: &TrainConfig) -> Result<()> {
    let mut mismatched = Vec::new();
    if spd_cfg.width_multiplier != spgm_cfg.width_multiplier {
        mismatched.push("width_multiplier".to_string());
    }
    if spd_cfg.blocks_per_stage != spgm_cfg.blocks_per_stage {
        mismatched.push("blocks_per_stage".to_string());
    }
    if spd_cfg.mask_stride != spgm_cfg.mask_stride {
        mismatched.push("mask_stride".to_string());
    }
    if mismatched.is_empty() {
        Ok(())
    } else {
        Err(Error::ConfigMismatch { fields: mismatched })
    }
}

/// Replicate-pad an image on the right/bottom to the next multiple of 32.
pub fn pad_to_multiple(image: &ImagePlane, multiple: usize) -> (ImagePlane, usize, usize) {
    let (h, w) = (image.height(), image.width());
    let ph = h.div_ceil(multiple) * multiple;
    let pw = w.div_ceil(multiple) * multiple;
    if (ph, pw) == (h, w) {
        return (image.clone(), h, w);
    }
    let mut out = Array3::zeros((3, ph, pw));
    for c in 0..3 {
        for y in 0..ph {
            for x in 0..pw {
                out[[c, y, x]] = image.0[[c, y.min(h - 1), x.min(w - 1)]];
            }
        }
    }
    (ImagePlane(out), h, w)
}

/// Built pipeline: both networks over one parameter store.
pub struct Pipeline {
    pub spd: SpdNetwork,
    pub spgm: SpgmNetwork,
    pub params: ParamStore,
    pub spd_step: u64,
    pub spgm_step: u64,
}

impl Pipeline {
    /// Assemble from the two branch checkpoints, verifying the config echo.
    pub fn from_checkpoints(spd_ckpt: &Checkpoint, spgm_ckpt: &Checkpoint) -> Result<Self> {
        let spd_cfg = TrainConfig::from_toml(&spd_ckpt.config_text)?;
        let spgm_cfg = TrainConfig::from_toml(&spgm_ckpt.config_text)?;
        check_compatible(&spd_cfg, &spgm_cfg)?;

        let mut params = ParamStore::new(spgm_ckpt.params.seed());
        let mut spd_build = ParamStore::new(spd_ckpt.params.seed());
        let spd = SpdNetwork::new(&mut spd_build, "spd", spd_cfg.spd_config())?;
        let mut spgm_build = ParamStore::new(spgm_ckpt.params.seed());
        let spgm = SpgmNetwork::new(&mut spgm_build, "spgm", spgm_cfg.spgm_config())?;

        // Move the trained tensors in, insisting every expected name exists.
        for (name, value) in spd_build.iter() {
            let trained = spd_ckpt.params.get_checked(name)?;
            if trained.shape() != value.shape() {
                return Err(Error::shape(name.clone(), value.shape(), trained.shape()));
            }
            params.insert(name.clone(), trained.clone());
        }
        for (name, value) in spgm_build.iter() {
            let trained = spgm_ckpt.params.get_checked(name)?;
            if trained.shape() != value.shape() {
                return Err(Error::shape(name.clone(), value.shape(), trained.shape()));
            }
            params.insert(name.clone(), trained.clone());
        }
        Ok(Pipeline {
            spd,
            spgm,
            params,
            spd_step: spd_ckpt.step,
            spgm_step: spgm_ckpt.step,
        })
    }

    /// Full forward on an arbitrary-size image.
    pub fn run(&self, image: &ImagePlane) -> Result<PipelineOutput> {
        let (padded, orig_h, orig_w) = pad_to_multiple(image, 32);
        let mut g = Graph::new();
        let mut f = Fwd::inference(&mut g, &self.params);
        let input_img = {
            let arr = image_batch(&[&padded]);
            f.g.constant(arr.into_dyn())
        };
        let spd_vars = self.spd.forward_vars(&mut f, input_img);
        let mask_value = g.value(spd_vars.mask).clone();
        let (mh, mw) = (mask_value.shape()[2], mask_value.shape()[3]);
        let mask_plane = Array2::from_shape_fn((mh, mw), |(y, x)| mask_value[[0, 0, y, x]]);
        let mask = SaliencyMask {
            values: mask_plane,
            stride: self.spd.config.mask_stride,
        };

        // New graph for the matting branch; guidance enters as constants.
        let pyramid = {
            let take = |v: crate::tensor::Var| {
                let a = g.value(v);
                Array3::from_shape_fn((a.shape()[1], a.shape()[2], a.shape()[3]), |(c, y, x)| {
                    a[[0, c, y, x]]
                })
            };
            crate::spd::FeaturePyramid {
                s2: take(spd_vars.pyramid.s2),
                s3: take(spd_vars.pyramid.s3),
                s4: take(spd_vars.pyramid.s4),
            }
        };
        drop(g);

        let mut g = Graph::new();
        let mut f = Fwd::inference(&mut g, &self.params);
        let input = {
            let arr = assemble_input(&padded, &mask)?;
            f.g.constant(arr.into_dyn())
        };
        let guidance = crate::spgm::pyramid_constants(&mut f, &[&pyramid])?;
        let vars: SpgmVars = self.spgm.forward_vars(&mut f, input, Some(guidance))?;

        let mut level_alphas = Vec::new();
        for v in &vars.alphas {
            let a = g.value(*v);
            let (ah, aw) = (a.shape()[2], a.shape()[3]);
            level_alphas.push(AlphaMatte(Array2::from_shape_fn((ah, aw), |(y, x)| {
                a[[0, 0, y, x]]
            })));
        }
        let final_padded = level_alphas.last().expect("three levels").clone();
        let alpha = AlphaMatte(
            final_padded
                .0
                .slice(ndarray::s![0..orig_h, 0..orig_w])
                .to_owned(),
        );

        // Mean attention mass per guidance location, one plane per stage.
        let mut attention_maps = Vec::new();
        for attn in &vars.attention {
            let a = g.value(*attn);
            let (n_m, n_g) = (a.shape()[1], a.shape()[2]);
            let side = (n_g as f64).sqrt() as usize;
            let (gh, gw) = if side * side == n_g {
                (side, side)
            } else {
                (1, n_g)
            };
            let mut plane = Array2::<f64>::zeros((gh, gw));
            for t in 0..n_g {
                let mean: f64 = (0..n_m).map(|m| a[[0, m, t]]).sum::<f64>() / n_m as f64;
                plane[[t / gw, t % gw]] = mean;
            }
            attention_maps.push(plane);
        }

        Ok(PipelineOutput {
            alpha,
            saliency_mask: mask,
            level_alphas,
            attention_maps,
        })
    }

    /// Matting output alone (guided, padded input assumed pre-sized).
    pub fn matting(&self, image: &ImagePlane) -> Result<MattingOutput> {
        let out = self.run(image)?;
        Ok(MattingOutput {
            alphas: out.level_alphas,
        })
    }
}
