//! Off-policy evaluation with multiplicative (self-normalised) and additive
//! (baseline) control variates.
//!
//! * [`dataset`]: validated logs and importance weights.
//! * [`estimators`]: IPS, SNIPS, β-IPS, plug-in and cross-fitted β̂*-IPS.
//! * [`ranking`]: item-position-model sums of the scalar estimators.
//! * [`analysis`]: closed-form variances, the SNIPS/β*-IPS variance gap,
//!   remainder diagnostics and the Hoeffding tail bound.
//! * [`simulator`]: finite bandit and ranking environments with exact oracles.
//! * [`experiments`]: seeded, paired Monte Carlo studies.
//! * [`io`]: JSONL logs, study configuration files and report emission.
//!
//! The estimator and analysis layers are generic over [`Real`] (`f32`, `f64`);
//! the aliases below fix the scalar to `f64` for ordinary use.

pub mod analysis;
pub mod dataset;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod io;
pub mod ranking;
mod scalar;
pub mod simulator;

pub use dataset::{
    validate_dataset, validate_ranked_dataset, Columns, Id, LogEntry, PositionRecord,
    RankedLogEntry, WeightedSample,
};
pub use error::{Error, Quantity, Result};
pub use estimators::{CrossFitConfig, EstimatorKind};
pub use scalar::{approx_eq_scaled, Real};

pub type Dataset = dataset::Dataset<f64>;
pub type RankedDataset = dataset::RankedDataset<f64>;
pub type Estimate = estimators::Estimate<f64>;
pub type MomentSummary = estimators::MomentSummary<f64>;
pub type PositionwiseReport = ranking::PositionwiseReport<f64>;
pub type VarianceGapReport = analysis::VarianceGapReport<f64>;
pub type RemainderDiagnostics = analysis::RemainderDiagnostics<f64>;

pub type Dataset32 = dataset::Dataset<f32>;
pub type RankedDataset32 = dataset::RankedDataset<f32>;
pub type Estimate32 = estimators::Estimate<f32>;
pub type MomentSummary32 = estimators::MomentSummary<f32>;
