use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("{what} has length {got}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("data weight must be positive everywhere, found {value} at node {node}")]
    NonPositiveWeight { node: usize, value: f64 },

    #[error("stagnation point: speed {speed:e} is below {threshold:e}, curvature undefined")]
    Stagnation { speed: f64, threshold: f64 },

    #[error("point (t={t}, x¹={x1}, x²={x2}) lies outside the space-time domain")]
    OutsideDomain { t: f64, x1: f64, x2: f64 },

    #[error("analytic flow is not valid on this domain: {0}")]
    DomainViolation(String),

    #[error("conjugate gradients did not converge: relative residual {residual:e} after {iterations} iterations")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("conjugate gradient breakdown: pᵀAp = {curvature:e} at iteration {iteration} (operator is not positive semidefinite)")]
    Breakdown { iteration: usize, curvature: f64 },

    #[error("operator is not symmetric: |xᵀAy − yᵀAx| = {defect:e} relative to the probe scale")]
    Asymmetric { defect: f64 },

    #[error("empty evaluation mask")]
    EmptyMask,

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

pub(crate) fn check_finite(what: &'static str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { what, index }),
        None => Ok(()),
    }
}
