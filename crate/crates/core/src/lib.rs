//! Regression discontinuity and kink estimation with local polynomials,
//! robust bias-corrected inference, synthetic data generation and survey
//! ingestion.
//!
//! ```
//! use rdkink::{generate, run_design, DesignSpec, DgpSpec, InferenceConfig};
//!
//! let data = generate(&DgpSpec::standard_sharp(2000, 7)).unwrap();
//! let est = run_design(&data, &DesignSpec::sharp(1), &InferenceConfig::default()).unwrap();
//! assert!(est.ci_low < est.ci_high);
//! ```

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod estimators;
pub mod inference;
pub mod ingest;
pub mod linalg;
pub mod localpoly;
pub mod model;
pub mod synthetic;

pub use error::{RdError, Result, Stage};
pub use estimators::{covariate_adjust, fuzzy_estimate, point_estimate, sharp_estimate, FitOptions, JumpComponents};
pub use inference::{
    estimate_bias, estimate_variance, rbc_interval, resolve_bandwidths, run_design, run_design_detailed,
    select_bandwidth, star_label, BandwidthSide, DesignRun, InferenceConfig, RbcInterval, VarianceEstimator,
};
pub use localpoly::{fit_side, weighted_polyfit, Variable};
pub use model::{
    validate_dataset, BandwidthRule, Dataset, DesignKind, DesignSpec, EstimateResult, FitSide, KernelKind,
    Observation, Side,
};
pub use synthetic::{generate, run_monte_carlo, run_monte_carlo_detailed, DgpSpec, McReport};
