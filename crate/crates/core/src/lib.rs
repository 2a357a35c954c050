//! Threshold panel ARDL estimation for macro-policy effects with
//! heterogeneous outcomes: two-way fixed-effects absorption on unbalanced
//! panels, quantile-threshold grid search, robust and delta-method
//! inference, distributed-lag dynamics, half-panel jackknife bias
//! correction, and policy-effect aggregation, validated end to end against
//! a synthetic data-generating process with known parameters.

pub mod debt_capacity;
pub mod design;
pub mod dgp_sim;
pub mod effects;
pub mod error;
pub mod estimator;
pub mod jackknife;
pub mod panel_io;
pub mod quantile;
pub mod report;
pub mod threshold_search;

pub use error::{Error, Result};
