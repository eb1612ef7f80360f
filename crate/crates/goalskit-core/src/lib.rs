//! goalskit-core: variable importance for Gaussian-process regression.
//!
//! The centerpiece is a score that reads local and global variable effects
//! off a single fitted GP by comparing the posterior predictive at the
//! observed inputs against the predictive at inputs where one feature is
//! nudged by a small step ξ. The same machinery yields closed-form
//! uncertainty for those effect differences, a KL-divergence effect-size
//! baseline, exact Shapley values for small feature counts, a random-feature
//! neural-network bridge, synthetic benchmark generators, and ranking
//! evaluation utilities.

pub mod dataset;
pub mod error;
pub mod evalrank;
pub mod goals;
pub mod gp;
pub mod kernel;
pub mod linalg;
pub mod nn;
pub mod rate;
pub mod report;
pub mod shapley;
pub mod simgen;

pub use dataset::Dataset;
pub use error::{Error, ErrorClass, Result};
pub use evalrank::{RankKey, RocCurve};
pub use goals::{GoalsOptions, GoalsReport, XiSpec};
pub use gp::{FitKernel, FittedGP};
pub use kernel::{GramMatrix, KernelConfig};
pub use nn::{Activation, RandomFeatureModel};
pub use rate::{EsaPosterior, RateReport};
pub use report::Report;
pub use shapley::ShapReport;
pub use simgen::{DesignKind, SimConfig, SimTruth};
