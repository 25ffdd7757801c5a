//! Sparse LU for simplex bases and a Jacobi SVD for conditioning constants.

pub(crate) mod lu;
pub mod svd;

pub use svd::singular_values;
