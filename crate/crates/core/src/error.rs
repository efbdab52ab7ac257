use thiserror::Error;

use crate::market::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid market instance: {}", join_violations(.0))]
    InvalidInstance(Vec<Violation>),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("length mismatch for {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in iterate at iteration {iteration}: {what}")]
    Numeric { iteration: usize, what: String },

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error(
        "calibration failed: {reason} (best {best_param_name}={best_param:.6}, achieved {best_value:.6})"
    )]
    Calibration {
        reason: String,
        best_param_name: &'static str,
        best_param: f64,
        best_value: f64,
    },

    #[error("recourse is infeasible in outcome {outcome}")]
    Infeasible { outcome: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("internal error: {0}")]
    Internal(String),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
