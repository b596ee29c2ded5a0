use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("icosphere subdivision level {0} exceeds the maximum of {max}", max = crate::geometry::MAX_SUBDIVISIONS)]
    SubdivisionTooLarge(usize),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("degenerate triangle {0}")]
    DegenerateTriangle(usize),
    #[error("non-positive value {value} where a positive one is required ({what})")]
    NonPositive { what: &'static str, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("{solver} did not converge in {iterations} iterations (relative residual {residual:.3e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("conjugate gradient breakdown at iteration {iteration}: p^T A p = {curvature:.3e}")]
    Breakdown { iteration: usize, curvature: f64 },
    #[error("source at ({0:.4}, {1:.4}, {2:.4}) lies on or too close to an interface")]
    SourceOnInterface(f64, f64, f64),
    #[error("spherical-harmonic degree {degree} is not resolved by a mesh with {dofs} unknowns")]
    Unresolved { degree: usize, dofs: usize },
    #[error("series did not converge within {0} terms")]
    SeriesNotConverged(usize),
    #[error("evaluation at the source point")]
    SingularEvaluation,
    #[error("residual check failed: relative residual {0:.3e}")]
    InconsistentSolution(f64),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
