//! Data-driven digital twin of a semi-active shock absorber.
//!
//! * [`plant`] simulates a quarter-car over an obstacle to produce surrogate
//!   1 kHz test-run data.
//! * [`dataset`] holds raw and scaled data, CSV persistence and min/max
//!   scaling.
//! * [`pipeline`] prepares training data: indexing, Gaussian augmentation
//!   and histogram oversampling.
//! * [`mlp`] is the regressor predicting the per-sample rod displacement
//!   change from velocity, current and displacement.
//! * [`metrics`] and [`experiment`] score the regressor and run the stage
//!   ablation.

// `!(a > b)` checks are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod mlp;
pub mod pipeline;
pub mod plant;

pub use dataset::{
    split_by_runs, Column, ColumnRange, Example, PreparedDataset, Provenance, RawDataset, RawRecord,
    ScalingState,
};
pub use error::{Error, Result};
pub use experiment::{
    dump_predictions, run_ablation, AblationConfiguration, AblationReport, AblationSpec, RunConfig,
};
pub use metrics::{evaluate, MetricReport};
pub use mlp::{train, Activation, MlpConfig, MlpModel, Optimizer};
pub use pipeline::{
    augment_gaussian, index_filter, oversample_histogram, run_pipeline, AugmentationConfig,
    IndexingConfig, OversamplingConfig, PipelineConfig, StageToggles,
};
pub use plant::{generate_program, simulate_run, PlantParams, RoadProfile, TestRunSpec};
