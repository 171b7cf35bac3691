//! Learnable cost volumes for correspondence matching.
//!
//! Matching costs are elliptical inner products `F1^T W F2` with an SPD
//! kernel `W = P^T diag(lambda) P`. The orthogonal factor is reached through
//! the Cayley transform of a skew-symmetric matrix and the eigenvalues
//! through an arctan-Cayley map, so plain gradient descent on unconstrained
//! parameters always stays on SPD kernels. A Riemannian Stiefel optimizer is
//! provided for comparison, along with a synthetic-flow harness.

pub mod cayley;
pub mod costvolume;
pub mod error;
pub mod harness;
pub mod kernel;
mod linalg;
pub mod optim;
pub mod tensor;

pub use error::{LcvError, Result};
pub use linalg::Mat;
