//! Dense matrices, the product norm on parameter pairs, a Jacobi SVD and
//! seeded sampling.

mod matrix;
pub mod rng;
pub mod svd;
mod theta;

pub use matrix::Matrix;
pub use rng::{gaussian_matrix, sample_unit_sphere, RngState};
pub use svd::{svd, SvdResult};
pub use theta::{theta_norm, ThetaPoint};

use crate::error::Result;

pub fn trace(m: &Matrix) -> Result<f64> {
    m.trace()
}

pub fn frobenius_norm(m: &Matrix) -> f64 {
    m.frobenius_norm()
}
