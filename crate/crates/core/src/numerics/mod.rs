//! Dense row-major matrices, vector helpers, the seeded PRNG and the `.tnsr`
//! tensor container shared by every other module.

mod matrix;
mod rng;
pub mod tensor;

pub use matrix::{l2_norm, matmul_transpose, softmax, squared_distance, Matrix};
pub use rng::{derive_seed, Rng};
