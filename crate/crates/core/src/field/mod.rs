//! Grids, sampled fields, balls and moduli of continuity, together with the
//! admissibility checks every problem instance has to pass.

mod dump;
mod fields;
mod grid;
mod modulus;
mod spec;

pub use dump::{dump_string, read_dump, write_dump};
pub use fields::{
    sobolev_cap, CoefficientDiagnostics, CoefficientField, ExponentField, ForcingField,
    ScalarField,
};
pub use grid::{Ball, Grid, MAX_DIM};
pub use modulus::{DiniCheck, ModulusOfContinuity, DINI_RELATIVE_INCREMENT, DINI_STREAK};
pub use spec::{alt_phillips_coefficients, CoefficientSpec, FieldSpec};

pub(crate) use grid::{distance, pad};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("unsupported dimension {0} (expected 1, 2 or 3)")]
    UnsupportedDimension(usize),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid ball: {0}")]
    InvalidBall(String),
    #[error("expected {expected} values, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("{what} is not finite at node {node}")]
    NonFinite { what: &'static str, node: usize },
    #[error("{what} value {value} at node {node} outside [{lo}, {hi}]")]
    OutOfBounds {
        what: &'static str,
        node: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("exponent cap {gamma_star} must lie in [0, {cap}) in dimension {dim}")]
    ExponentCap { gamma_star: f64, cap: f64, dim: usize },
    #[error("coefficient matrix at node {node} is not symmetric (defect {defect:e})")]
    Asymmetric { node: usize, defect: f64 },
    #[error("coefficient eigenvalue {eigenvalue} at node {node} outside [{lo}, {hi}]")]
    Ellipticity {
        node: usize,
        eigenvalue: f64,
        lo: f64,
        hi: f64,
    },
    #[error("invalid modulus of continuity: {0}")]
    InvalidModulus(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed field dump: {0}")]
    Dump(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
