//! Trajectory-driven expert pruning for mixture-of-experts models.
//!
//! Calibration samples are scored into layered graphs whose nodes carry
//! expert importance and whose edges carry inter-layer transition
//! intensity. The top-m highest-weight expert paths per sample are found
//! by dynamic programming, and every expert that lies on none of them is
//! pruned.
//!
//! The math is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix it to `f64`, which is what the file formats and the CLI use.

pub mod calibration;
pub mod error;
pub mod harness;
pub mod json;
pub mod model;
pub mod numerics;
pub mod planner;
pub mod pruner;
pub mod scalar;
pub mod scoring;

pub use error::{Error, ErrorClass, Result};
pub use scalar::Scalar;

pub use calibration::CalibrationSet;
pub use model::{MoEConfig, Nonlinearity};
pub use numerics::Rng;
pub use pruner::{FrequencyMatrix, PruneMask, RemapTable, RetentionReport};

pub type Matrix = numerics::Matrix<f64>;
pub type MoELayer = model::MoELayer<f64>;
pub type MoEModel = model::MoEModel<f64>;
pub type SampleBatch = model::SampleBatch<f64>;
pub type ForwardTrace = model::ForwardTrace<f64>;
pub type LayerScore = scoring::LayerScore<f64>;
pub type SampleGraph = scoring::SampleGraph<f64>;
pub type PrefixPath = planner::PrefixPath<f64>;
pub type PathSet = planner::PathSet<f64>;
