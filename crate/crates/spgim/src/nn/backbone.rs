//! Width-scalable four-stage residual encoder with bottleneck blocks.
//! Stages emit features at strides 4/8/16/32; at full scale the stage
//! channel counts are 256/512/1024/2048.

use crate::tensor::{ConvSpec, Var};

use super::layers::{Conv2d, ConvBlock, GroupNorm};
use super::{Fwd, ParamStore};

pub const FULL_STAGE_CHANNELS: [usize; 4] = [256, 512, 1024, 2048];
pub const STAGE_STRIDES: [usize; 4] = [4, 8, 16, 32];

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub width_multiplier: f64,
    pub blocks_per_stage: [usize; 4],
}

impl BackboneConfig {
    pub fn full_scale(in_channels: usize) -> Self {
        BackboneConfig {
            in_channels,
            width_multiplier: 1.0,
            blocks_per_stage: [3, 4, 6, 3],
        }
    }

    /// Reduced-width profile for CPU-scale runs.
    pub fn desk(in_channels: usize, width_multiplier: f64) -> Self {
        BackboneConfig {
            in_channels,
            width_multiplier,
            blocks_per_stage: [1, 1, 1, 1],
        }
    }

    pub fn scale(&self, base: usize) -> usize {
        scale_channels(base, self.width_multiplier)
    }

    pub fn stem_channels(&self) -> usize {
        self.scale(64)
    }

    pub fn stage_channels(&self) -> [usize; 4] {
        [
            self.scale(FULL_STAGE_CHANNELS[0]),
            self.scale(FULL_STAGE_CHANNELS[1]),
            self.scale(FULL_STAGE_CHANNELS[2]),
            self.scale(FULL_STAGE_CHANNELS[3]),
        ]
    }

    pub fn final_channels(&self) -> usize {
        self.stage_channels()[3]
    }
}

pub fn scale_channels(base: usize, width_multiplier: f64) -> usize {
    let scaled = (base as f64 * width_multiplier / 8.0).round() as usize * 8;
    scaled.max(8)
}

struct Bottleneck {
    reduce: ConvBlock,
    spatial: ConvBlock,
    expand: Conv2d,
    expand_norm: GroupNorm,
    projection: Option<(Conv2d, GroupNorm)>,
}

impl Bottleneck {
    fn new(ps: &mut ParamStore, prefix: &str, c_in: usize, c_out: usize, stride: usize) -> Self {
        let c_mid = (c_out / 4).max(8);
        let reduce = ConvBlock::new(ps, &format!("{prefix}.reduce"), c_in, c_mid, 1, 1, 1);
        let spatial = ConvBlock::new(ps, &format!("{prefix}.spatial"), c_mid, c_mid, 3, stride, 1);
        let expand = Conv2d::same(ps, &format!("{prefix}.expand"), c_mid, c_out, 1, 1, 1, false);
        let expand_norm = GroupNorm::new(ps, &format!("{prefix}.expand_norm"), c_out);
        let projection = (c_in != c_out || stride != 1).then(|| {
            (
                Conv2d::new(
                    ps,
                    &format!("{prefix}.proj"),
                    c_in,
                    c_out,
                    (1, 1),
                    ConvSpec {
                        stride: (stride, stride),
                        pad: (0, 0),
                        dilation: (1, 1),
                    },
                    false,
                ),
                GroupNorm::new(ps, &format!("{prefix}.proj_norm"), c_out),
            )
        });
        Bottleneck {
            reduce,
            spatial,
            expand,
            expand_norm,
            projection,
        }
    }

    fn forward(&self, f: &mut Fwd, x: Var) -> Var {
        let y = self.reduce.forward(f, x);
        let y = self.spatial.forward(f, y);
        let y = self.expand.forward(f, y);
        let y = self.expand_norm.forward(f, y);
        let skip = match &self.projection {
            Some((conv, norm)) => {
                let s = conv.forward(f, x);
                norm.forward(f, s)
            }
            None => x,
        };
        let sum = f.g.add(y, skip);
        f.g.relu(sum)
    }
}

/// Per-stage feature handles at strides 4/8/16/32.
#[derive(Clone, Copy, Debug)]
pub struct PyramidVars {
    pub s1: Var,
    pub s2: Var,
    pub s3: Var,
    pub s4: Var,
}

impl PyramidVars {
    pub fn stage(&self, idx: usize) -> Var {
        match idx {
            1 => self.s1,
            2 => self.s2,
            3 => self.s3,
            4 => self.s4,
            _ => panic!("stage index {idx} out of range 1..=4"),
        }
    }
}

pub struct Backbone {
    pub config: BackboneConfig,
    stem: ConvBlock,
    stages: Vec<Vec<Bottleneck>>,
}

impl Backbone {
    pub fn new(ps: &mut ParamStore, prefix: &str, config: BackboneConfig) -> Self {
        let stem_ch = config.stem_channels();
        let stem = ConvBlock::new(
            ps,
            &format!("{prefix}.stem"),
            config.in_channels,
            stem_ch,
            7,
            2,
            1,
        );
        let chans = config.stage_channels();
        let mut stages = Vec::with_capacity(4);
        let mut c_in = stem_ch;
        for (si, (&c_out, &n_blocks)) in chans
            .iter()
            .zip(config.blocks_per_stage.iter())
            .enumerate()
        {
            let mut blocks = Vec::with_capacity(n_blocks);
            for bi in 0..n_blocks {
                // Stage 1 keeps stride (the stem pool already reached /4);
                // stages 2..4 halve on their first block.
                let stride = if si > 0 && bi == 0 { 2 } else { 1 };
                blocks.push(Bottleneck::new(
                    ps,
                    &format!("{prefix}.stage{}.block{bi}", si + 1),
                    c_in,
                    c_out,
                    stride,
                ));
                c_in = c_out;
            }
            stages.push(blocks);
        }
        Backbone {
            config,
            stem,
            stages,
        }
    }

    pub fn forward(&self, f: &mut Fwd, image: Var) -> PyramidVars {
        let shape = f.g.shape(image).to_vec();
        assert_eq!(shape.len(), 4, "backbone expects NCHW input");
        assert!(
            shape[2] % 32 == 0 && shape[3] % 32 == 0,
            "backbone input sides must be divisible by 32, got {}x{}",
            shape[2],
            shape[3]
        );
        let y = self.stem.forward(f, image);
        let y = f.g.max_pool2d(y, 3, 2, 1);
        let mut outs = Vec::with_capacity(4);
        let mut x = y;
        for blocks in &self.stages {
            for b in blocks {
                x = b.forward(f, x);
            }
            outs.push(x);
        }
        PyramidVars {
            s1: outs[0],
            s2: outs[1],
            s3: outs[2],
            s4: outs[3],
        }
    }
}
