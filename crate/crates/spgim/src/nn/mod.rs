//! Parameter storage, layers, the residual visual encoder, and optimizers.

mod backbone;
mod layers;
mod optim;

pub use backbone::{scale_channels, Backbone, BackboneConfig, PyramidVars, FULL_STAGE_CHANNELS, STAGE_STRIDES};
pub use layers::{group_count, Conv2d, ConvBlock, Embedding, GroupNorm, LayerNorm, Linear};
pub use optim::{warmup_cosine_lr, Adam, SgdMomentum};

use std::collections::BTreeMap;

use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::hash::seed_for;
use crate::tensor::{Graph, Var};

/// Weight initialization schemes. Every parameter is drawn from a stream
/// seeded by (global seed, parameter name), so values do not depend on
/// registration order.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    Const(f64),
    /// Kaiming-normal with the given fan-in.
    HeNormal { fan_in: usize },
    /// Gaussian with the given standard deviation.
    Normal { std: f64 },
}

/// All trainable parameters of a model, keyed by dotted path.
#[derive(Clone)]
pub struct ParamStore {
    seed: u64,
    map: BTreeMap<String, ArrayD<f64>>,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            seed,
            map: BTreeMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn register(&mut self, name: &str, shape: &[usize], init: Init) {
        assert!(
            !self.map.contains_key(name),
            "parameter {name} registered twice"
        );
        let mut rng = ChaCha12Rng::seed_from_u64(seed_for(self.seed, name));
        let mut arr = ArrayD::zeros(IxDyn(shape));
        match init {
            Init::Zeros => {}
            Init::Ones => arr.fill(1.0),
            Init::Const(v) => arr.fill(v),
            Init::HeNormal { fan_in } => {
                let std = (2.0 / fan_in as f64).sqrt();
                for v in arr.iter_mut() {
                    *v = gauss(&mut rng) * std;
                }
            }
            Init::Normal { std } => {
                for v in arr.iter_mut() {
                    *v = gauss(&mut rng) * std;
                }
            }
        }
        self.map.insert(name.to_string(), arr);
    }

    pub fn get(&self, name: &str) -> &ArrayD<f64> {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_checked(&self, name: &str) -> crate::Result<&ArrayD<f64>> {
        self.map.get(name).ok_or_else(|| {
            crate::Error::CheckpointFormat(format!("missing parameter {name}"))
        })
    }

    pub fn get_mut(&mut self, name: &str) -> &mut ArrayD<f64> {
        self.map
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn insert(&mut self, name: String, value: ArrayD<f64>) {
        self.map.insert(name, value);
    }

    /// Sorted iteration; the order optimizers and checkpoints rely on.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &ArrayD<f64>)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ArrayD<f64>)> {
        self.map.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.map.values().map(|a| a.len()).sum()
    }

    /// Copy every parameter under `src_prefix` in `other` into `dst_prefix`
    /// here. Shapes must match. Returns the copied names.
    pub fn load_prefix(
        &mut self,
        other: &ParamStore,
        src_prefix: &str,
        dst_prefix: &str,
    ) -> crate::Result<Vec<String>> {
        let mut copied = Vec::new();
        for (name, value) in other.iter() {
            if let Some(rest) = name.strip_prefix(src_prefix) {
                let dst = format!("{dst_prefix}{rest}");
                match self.map.get_mut(&dst) {
                    Some(slot) => {
                        if slot.shape() != value.shape() {
                            return Err(crate::Error::shape(
                                format!("loading {name} into {dst}"),
                                slot.shape(),
                                value.shape(),
                            ));
                        }
                        slot.assign(value);
                        copied.push(dst);
                    }
                    None => {
                        return Err(crate::Error::CheckpointFormat(format!(
                            "no destination parameter {dst} for source {name}"
                        )))
                    }
                }
            }
        }
        Ok(copied)
    }
}

fn gauss(rng: &mut ChaCha12Rng) -> f64 {
    // Box-Muller.
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Forward-pass context: the tape, the parameters, and mode flags.
pub struct Fwd<'a> {
    pub g: &'a mut Graph,
    pub ps: &'a ParamStore,
    pub train: bool,
    /// When false, parameters enter the graph as constants (frozen branch).
    pub trainable: bool,
    pub dropout_rng: ChaCha12Rng,
}

impl<'a> Fwd<'a> {
    pub fn inference(g: &'a mut Graph, ps: &'a ParamStore) -> Self {
        Fwd {
            g,
            ps,
            train: false,
            trainable: false,
            dropout_rng: ChaCha12Rng::seed_from_u64(0),
        }
    }

    pub fn training(g: &'a mut Graph, ps: &'a ParamStore, step_seed: u64) -> Self {
        Fwd {
            g,
            ps,
            train: true,
            trainable: true,
            dropout_rng: ChaCha12Rng::seed_from_u64(step_seed),
        }
    }

    pub fn param(&mut self, name: &str) -> Var {
        let value = self.ps.get(name).clone();
        if self.trainable {
            self.g.named_leaf(name, value)
        } else {
            self.g.constant(value)
        }
    }
}
