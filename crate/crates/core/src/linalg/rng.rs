//! Deterministic seeded sampling.
//!
//! Uniforms come from ChaCha8 (a counter-based stream cipher RNG, identical
//! output on every platform); normals are produced with Box-Muller on top.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Single-owner sample stream. Identical seed and call sequence give a
/// bit-identical stream.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    inner: ChaCha8Rng,
    spare: Option<f64>,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    /// Independent stream `stream` under the same seed. Used to give every
    /// Monte Carlo trial its own state so results do not depend on scheduling.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            inner,
            spare: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform on `(0, 1]`.
    fn open_uniform(&mut self) -> f64 {
        1.0 - self.inner.gen::<f64>()
    }

    /// Standard normal draw (Box-Muller, second variate cached).
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.open_uniform();
        let u2 = self.open_uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (TAU * u2).sin_cos();
        self.spare = Some(radius * s);
        radius * c
    }

    pub fn normal(&mut self, sigma: f64) -> f64 {
        sigma * self.standard_normal()
    }

    /// `rows x cols` matrix with i.i.d. `N(0, sigma^2)` entries, row-major fill order.
    pub fn gaussian_matrix(&mut self, rows: usize, cols: usize, sigma: f64) -> Result<Matrix> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Parameter(format!(
                "sigma must be positive, got {sigma}"
            )));
        }
        if rows == 0 || cols == 0 {
            return Err(Error::dim(
                "gaussian_matrix",
                format!("empty shape {rows}x{cols}"),
            ));
        }
        Ok(Matrix::from_fn(rows, cols, |_, _| self.normal(sigma)))
    }

    pub fn gaussian_vector(&mut self, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| self.standard_normal()).collect()
    }

    /// Uniform point on the unit sphere in `R^dim`, as `g / |g|` for standard Gaussian `g`.
    pub fn sample_unit_sphere(&mut self, dim: usize) -> Result<Vec<f64>> {
        if dim == 0 {
            return Err(Error::Parameter(
                "sphere dimension must be at least 1".into(),
            ));
        }
        loop {
            let g = self.gaussian_vector(dim);
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                return Ok(g.into_iter().map(|x| x / norm).collect());
            }
        }
    }
}

/// Free-function form of [`RngState::gaussian_matrix`].
pub fn gaussian_matrix(rng: &mut RngState, rows: usize, cols: usize, sigma: f64) -> Result<Matrix> {
    rng.gaussian_matrix(rows, cols, sigma)
}

/// Free-function form of [`RngState::sample_unit_sphere`].
pub fn sample_unit_sphere(rng: &mut RngState, dim: usize) -> Result<Vec<f64>> {
    rng.sample_unit_sphere(dim)
}
