pub mod bem_ops;
pub mod cli;
pub mod error;
pub mod formulation;
pub mod geometry;
pub mod krylov;
pub mod laplacians;
pub mod oracle;
pub mod precond;
pub mod quadrature;
pub mod spaces;
pub mod sparse;

pub use error::{Error, Result};
