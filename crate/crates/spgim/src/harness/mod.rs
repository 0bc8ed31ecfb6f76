//! Orchestration: configuration and schedules, checkpoints, manifest-driven
//! training loops, the end-to-end inference pipeline, parameter counting,
//! directory evaluation, and comparison sheets.

pub mod checkpoint;
mod compare;
mod config;
mod evaldir;
mod params;
mod pipeline;
mod train;

pub use checkpoint::{load as load_checkpoint, save as save_checkpoint, Checkpoint, FORMAT_VERSION};
pub use compare::{build_sheet, emit_comparison, sheet_columns, ComparisonSpec};
pub use config::{lr_at, Branch, OptimizerKind, TrainConfig};
pub use evaldir::{evaluate_dirs, write_report, EvalReport, RegionTable, SampleRow};
pub use params::{count_parameters, format_millions, ParamCount};
pub use pipeline::{check_compatible, pad_to_multiple, Pipeline, PipelineOutput};
pub use train::{
    checkpoint_for, guide_samples, load_caption_records, load_matting_samples, load_spd_samples,
    pretrain_captioner, spd_from_checkpoint, spgm_for_training, toy_caption_records, train_spd,
    train_spgm, TrainReport,
};
