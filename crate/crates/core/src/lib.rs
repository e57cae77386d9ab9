//! Inference for panel regressions with unknown cluster structure.
//!
//! Clusters are discovered by thresholding long-run correlations of unit
//! scores; restrictions on β are then tested with a sign-change
//! randomization test, a clustered-covariance t-test, or a thresholded
//! long-run variance baseline.

pub mod art;
pub mod bcl;
pub mod cce;
pub mod clustering;
pub mod error;
pub mod inference;
pub mod longrun;
pub mod montecarlo;
pub mod normal;
pub mod panel;
pub mod regression;
pub mod tuning;

pub use error::{Error, Result};
