//! Zeroth-order optimization through low-precision forward evaluation with
//! companding quantizers.
//!
//! The crate contrasts weight-space finite-difference queries, which are
//! rounded by the quantizer before the loss is measured, with compander-aligned
//! on-grid queries (CAQ-ZO) whose endpoints are already grid points.

pub mod compander;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod objectives;
pub mod optim;
pub mod streams;

pub use compander::{
    calibrate_scales, BlockCalibration, CompanderFamily, CompanderSpec, GridSpec, Quantizer,
    Rounded, ZState,
};
pub use diagnostics::{
    grid_span, probe_residual, residual_slope_fit, rounded_chord, ChordReport, ProbeSetup,
    ResidualProbe, SlopeFit, SpanRegime, SpanReport,
};
pub use error::{Error, Result};
pub use estimators::{
    estimate_caq, estimate_offgrid_z, estimate_unrounded_reference, estimate_weight_space,
    sample_directions, Center, DirectionBatch, DirectionKind, EstimateResult, Method,
};
pub use objectives::{LossOracle, Objective, ObjectiveSpec, Sample, StochasticOracle};
pub use optim::{
    gap_ratio, run, Adam, AdamConfig, Mode, OptimizerConfig, Problem, RunSummary, RunTrace, Runner,
    TraceRecord,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
