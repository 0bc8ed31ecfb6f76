//! Trimap-free image matting built around situational-perception guidance.
//!
//! The pipeline has two branches. A distillation branch (`spd`) is pretrained
//! through image captioning (`caption`) and then produces a semantic saliency
//! mask from an RGB image. A guided matting branch (`spgm`) consumes the
//! image together with that mask and predicts the alpha matte, fusing the
//! distillation features through non-local attention and refining the matte
//! coarse-to-fine with focal-region transformations. Around the model sit a
//! dataset composition engine (`data`), the standard matting error metrics
//! (`metrics`), and training/inference orchestration (`harness`).
//!
//! Everything runs on a small f64 CPU autodiff engine (`tensor`); forward
//! passes are deterministic for fixed inputs and weights.
//!
//! See the `examples/` directory for a runnable tour: dataset composition,
//! caption pretraining, branch training, inference, evaluation, and
//! comparison sheets.

pub mod caption;
pub mod cli;
pub mod data;
pub mod error;
pub mod spd;
pub mod spgm;
pub mod harness;
pub mod hash;
pub mod metrics;
pub mod nn;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
