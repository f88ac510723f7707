//! Dense row-major matrices, seeded randomness and a finite-difference
//! gradient oracle.
//!
//! Everything is generic over [`Real`] so the same code runs in `f32` for
//! training and in `f64` for gradient checks.

mod gradcheck;
mod matrix;
mod real;
mod rng;

pub use gradcheck::{finite_diff_grad, relative_error};
pub use matrix::Matrix;
pub use real::Real;
pub use rng::Rng;
