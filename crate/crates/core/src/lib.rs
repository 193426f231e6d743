//! Analysis toolkit for myocardial T1/T2 parametric maps.
//!
//! Covers the cohort model and its on-disk format, preprocessing, segmentation
//! agreement statistics, per-patient intensity features, ROC analysis with
//! Youden cutoffs and DeLong inference, five from-scratch classifiers with
//! grid search, classification statistics, and a synthetic phantom generator.
//!
//! Numeric kernels are generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the common `f64` instantiations.

pub mod agreement;
pub mod classifiers;
pub mod cohort;
pub mod error;
pub mod features;
pub mod phantom;
pub mod preprocess;
pub mod report;
pub mod rng;
pub mod roc;
pub mod scalar;
pub mod stats_eval;

pub use error::{Error, Result};
pub use scalar::Real;

/// Toolkit version recorded in model files and run records.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub type Grid = cohort::PixelGrid<f64>;
pub type GridF32 = cohort::PixelGrid<f32>;
pub type Curve = roc::RocCurve<f64>;
pub type CurveF32 = roc::RocCurve<f32>;
pub type Point = roc::RocPoint<f64>;
pub type Stats = features::PixelStats<f64>;
pub type StatsF32 = features::PixelStats<f32>;
pub type Agreement = agreement::BlandAltman<f64>;
pub type Pearson = agreement::Correlation<f64>;
