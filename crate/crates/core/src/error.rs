use thiserror::Error;

use crate::linalg::SolveReport;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("degenerate geometry in cell {cell}: jacobian determinant {det:e}")]
    DegenerateCell { cell: usize, det: f64 },

    #[error("{} point(s) outside the parent mesh, first at index {} ({:?})", .0.len(), .0[0].0, .0[0].1)]
    PointsOutsideDomain(Vec<(usize, [f64; 2])>),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("objects live on different meshes or spaces")]
    MeshMismatch,

    #[error("non-positive coefficient {value:e} at quadrature point of cell {cell}")]
    NonPositiveCoefficient { cell: usize, value: f64 },

    #[error("conjugate gradient breakdown: p^T A p = {curvature:e} at iteration {iteration}")]
    Indefinite { iteration: usize, curvature: f64 },

    #[error("linear solver did not converge: {0:?}")]
    NotConverged(SolveReport),

    #[error("reconstruction failed: {0}")]
    Reconstruction(String),

    #[error("rbf system is numerically singular (condition estimate {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("line search stagnated after {} iterations", .0.trace.len())]
    Stagnation(Box<crate::assimilate::Stagnated>),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
