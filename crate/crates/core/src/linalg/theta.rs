use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// A point `(B, A)` of the LoRA parameter space, `B` is `n x r` and `A` is `r x m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaPoint {
    pub b: Matrix,
    pub a: Matrix,
}

impl ThetaPoint {
    pub fn new(b: Matrix, a: Matrix) -> Result<Self> {
        if b.cols() != a.rows() {
            return Err(Error::dim(
                "ThetaPoint::new",
                format!(
                    "inner ranks differ: B is {}x{}, A is {}x{}",
                    b.rows(),
                    b.cols(),
                    a.rows(),
                    a.cols()
                ),
            ));
        }
        Ok(Self { b, a })
    }

    pub fn zeros(n: usize, r: usize, m: usize) -> Self {
        Self {
            b: Matrix::zeros(n, r),
            a: Matrix::zeros(r, m),
        }
    }

    pub fn rank(&self) -> usize {
        self.b.cols()
    }

    /// `(n, r, m)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.b.rows(), self.b.cols(), self.a.cols())
    }

    /// Product-space norm `sqrt(|B|^2 + |A|^2)`.
    pub fn norm(&self) -> f64 {
        (self.b.frobenius_norm_sq() + self.a.frobenius_norm_sq()).sqrt()
    }

    pub fn product(&self) -> Matrix {
        &self.b * &self.a
    }

    pub fn is_finite(&self) -> bool {
        self.b.is_finite() && self.a.is_finite()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            b: self.b.scale(s),
            a: self.a.scale(s),
        }
    }

    /// `self + s * other`, componentwise.
    pub fn axpy(&self, s: f64, other: &ThetaPoint) -> Result<Self> {
        Ok(Self {
            b: self.b.axpy(s, &other.b)?,
            a: self.a.axpy(s, &other.a)?,
        })
    }

    pub fn add(&self, other: &ThetaPoint) -> Result<Self> {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &ThetaPoint) -> Result<Self> {
        self.axpy(-1.0, other)
    }

    pub fn same_shape(&self, other: &ThetaPoint) -> bool {
        self.b.shape() == other.b.shape() && self.a.shape() == other.a.shape()
    }
}

/// Product-space norm of a parameter pair.
pub fn theta_norm(t: &ThetaPoint) -> f64 {
    t.norm()
}
