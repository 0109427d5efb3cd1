//! Dense and sparse linear-algebra building blocks.

pub mod dense;
pub mod sparse;

pub use dense::{left_svd, orthonormality_defect, thin_svd, HouseholderQr};
pub use sparse::CsrMatrix;
