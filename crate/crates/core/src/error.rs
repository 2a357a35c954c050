//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),

    #[error("parse error at data row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("duplicate observation for firm `{firm}` at quarter {quarter}")]
    DuplicateObservation { firm: String, quarter: i32 },

    #[error("empty sample: {0}")]
    EmptySample(String),

    #[error("no observations at quarter {quarter}{}", match .industry { Some(s) => format!(" for industry `{s}`"), None => String::new() })]
    MissingPeriod { quarter: i32, industry: Option<String> },

    #[error("policy scaling error: {0}")]
    Scaling(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("two-way absorption did not converge after {iterations} iterations (residual mean {residual:.3e})")]
    AbsorptionNonConvergence { iterations: usize, residual: f64 },

    #[error("design is rank deficient; dependent columns: {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("unknown column group `{0}`")]
    UnknownGroup(String),

    #[error("nonstationary dynamics: sum of lagged-y coefficients is {lambda_sum}")]
    NonStationary { lambda_sum: f64 },

    #[error("delta-method singularity: {0}")]
    Singularity(String),

    #[error("lag distribution undefined: {0}")]
    LagDistribution(String),

    #[error("nesting violation: restricted SSR {ssr_restricted} is below unrestricted SSR {ssr_unrestricted}")]
    NestingViolation { ssr_restricted: f64, ssr_unrestricted: f64 },

    #[error("degenerate threshold grid: {0}")]
    DegenerateGrid(String),

    #[error("grid search failed: {0}")]
    GridSearch(String),

    #[error("jackknife precondition: firm `{firm}` has {count} observations, fewer than {min}")]
    JackknifePrecondition { firm: String, count: usize, min: usize },

    #[error("jackknife half-sample rank deficient; offending columns: {}", .columns.join(", "))]
    JackknifeRankDeficient { columns: Vec<String> },

    #[error("weight vector is all zero")]
    ZeroWeights,

    #[error("simulation unstable: |y| exceeded {0:.1e}")]
    Unstable(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
