//! The three objectives: trace-squared over LoRA factors, trace-squared over a
//! full matrix, and the squared Frobenius low-rank approximation loss.
//!
//! Low-rank kinds are written as functions of the residual `W0 - BA`:
//!
//! * trace-squared:  `g(B, A) = 1/2 Tr(W0 - BA)^2`
//! * full-rank:      `f(W)    = 1/2 Tr(W0 - W)^2`
//! * Frobenius:      `h(B, A) = 1/2 |W0 - BA|^2`

use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, RngState, ThetaPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectiveKind {
    TraceSquaredLowRank,
    TraceSquaredFullRank,
    FrobeniusLowRank,
}

impl ObjectiveKind {
    pub fn is_low_rank(self) -> bool {
        !matches!(self, ObjectiveKind::TraceSquaredFullRank)
    }
}

/// Argument of [`Objective::value`]: low-rank kinds take a factor pair, the
/// full-rank kind takes a matrix.
#[derive(Debug, Clone, Copy)]
pub enum ObjectiveInput<'a> {
    Theta(&'a ThetaPoint),
    Full(&'a Matrix),
}

impl<'a> From<&'a ThetaPoint> for ObjectiveInput<'a> {
    fn from(t: &'a ThetaPoint) -> Self {
        ObjectiveInput::Theta(t)
    }
}

impl<'a> From<&'a Matrix> for ObjectiveInput<'a> {
    fn from(m: &'a Matrix) -> Self {
        ObjectiveInput::Full(m)
    }
}

#[derive(Debug, Clone)]
pub struct Objective {
    kind: ObjectiveKind,
    w0: Matrix,
}

impl Objective {
    pub fn new(kind: ObjectiveKind, w0: Matrix) -> Result<Self> {
        if kind != ObjectiveKind::FrobeniusLowRank && !w0.is_square() {
            return Err(Error::dim(
                "Objective::new",
                format!(
                    "{kind:?} needs a square W0, got {}x{}",
                    w0.rows(),
                    w0.cols()
                ),
            ));
        }
        Ok(Self { kind, w0 })
    }

    pub fn trace_squared(w0: Matrix) -> Result<Self> {
        Self::new(ObjectiveKind::TraceSquaredLowRank, w0)
    }

    pub fn full_rank(w0: Matrix) -> Result<Self> {
        Self::new(ObjectiveKind::TraceSquaredFullRank, w0)
    }

    pub fn frobenius(w0: Matrix) -> Result<Self> {
        Self::new(ObjectiveKind::FrobeniusLowRank, w0)
    }

    pub fn kind(&self) -> ObjectiveKind {
        self.kind
    }

    pub fn w0(&self) -> &Matrix {
        &self.w0
    }

    fn check_theta(&self, op: &'static str, theta: &ThetaPoint) -> Result<()> {
        let (n, _, m) = theta.dims();
        if (n, m) != self.w0.shape() {
            return Err(Error::dim(
                op,
                format!(
                    "BA is {n}x{m} but W0 is {}x{}",
                    self.w0.rows(),
                    self.w0.cols()
                ),
            ));
        }
        Ok(())
    }

    fn require_low_rank(&self, op: &str) -> Result<()> {
        if !self.kind.is_low_rank() {
            return Err(Error::Usage(format!(
                "{op} needs a low-rank objective, got {:?}",
                self.kind
            )));
        }
        Ok(())
    }

    fn require_full_rank(&self, op: &str) -> Result<()> {
        if self.kind != ObjectiveKind::TraceSquaredFullRank {
            return Err(Error::Usage(format!(
                "{op} needs TraceSquaredFullRank, got {:?}",
                self.kind
            )));
        }
        Ok(())
    }

    /// Objective value; always non-negative.
    pub fn value<'a>(&self, input: impl Into<ObjectiveInput<'a>>) -> Result<f64> {
        match (self.kind, input.into()) {
            (ObjectiveKind::TraceSquaredFullRank, ObjectiveInput::Full(w)) => {
                if w.shape() != self.w0.shape() {
                    return Err(Error::dim("value", "W and W0 shapes differ"));
                }
                let r = self.w0.trace()? - w.trace()?;
                Ok(0.5 * r * r)
            }
            (ObjectiveKind::TraceSquaredFullRank, ObjectiveInput::Theta(_)) => Err(Error::Usage(
                "full-rank objective takes a matrix, not a factor pair".into(),
            )),
            (_, ObjectiveInput::Full(_)) => Err(Error::Usage(
                "low-rank objective takes a factor pair, not a matrix".into(),
            )),
            (ObjectiveKind::TraceSquaredLowRank, ObjectiveInput::Theta(t)) => {
                self.check_theta("value", t)?;
                let r = self.trace_residual(&t.b, &t.a);
                Ok(0.5 * r * r)
            }
            (ObjectiveKind::FrobeniusLowRank, ObjectiveInput::Theta(t)) => {
                self.check_theta("value", t)?;
                Ok(0.5 * (&self.w0 - &t.product()).frobenius_norm_sq())
            }
        }
    }

    /// `Tr(W0 - BA)` without forming `BA`.
    pub fn trace_residual(&self, b: &Matrix, a: &Matrix) -> f64 {
        let n = self.w0.rows();
        let r = b.cols();
        let mut tr_ba = 0.0;
        for i in 0..n {
            for l in 0..r {
                tr_ba += b.get(i, l) * a.get(l, i);
            }
        }
        let tr_w0: f64 = (0..n).map(|i| self.w0.get(i, i)).sum();
        tr_w0 - tr_ba
    }

    /// Partial gradient in `B` at `(b, a)`. Shapes are assumed validated.
    pub(crate) fn grad_b(&self, b: &Matrix, a: &Matrix) -> Matrix {
        match self.kind {
            ObjectiveKind::TraceSquaredLowRank => a.transpose().scale(-self.trace_residual(b, a)),
            ObjectiveKind::FrobeniusLowRank => -&(&(&self.w0 - &(b * a)) * &a.transpose()),
            ObjectiveKind::TraceSquaredFullRank => unreachable!("checked by caller"),
        }
    }

    /// Partial gradient in `A` at `(b, a)`. Shapes are assumed validated.
    pub(crate) fn grad_a(&self, b: &Matrix, a: &Matrix) -> Matrix {
        match self.kind {
            ObjectiveKind::TraceSquaredLowRank => b.transpose().scale(-self.trace_residual(b, a)),
            ObjectiveKind::FrobeniusLowRank => -&(&b.transpose() * &(&self.w0 - &(b * a))),
            ObjectiveKind::TraceSquaredFullRank => unreachable!("checked by caller"),
        }
    }

    /// Analytic gradient `(grad_B, grad_A)` for the low-rank kinds.
    pub fn grad(&self, theta: &ThetaPoint) -> Result<ThetaPoint> {
        self.require_low_rank("grad")?;
        self.check_theta("grad", theta)?;
        Ok(self.grad_unchecked(theta))
    }

    pub(crate) fn grad_unchecked(&self, theta: &ThetaPoint) -> ThetaPoint {
        match self.kind {
            ObjectiveKind::TraceSquaredLowRank => {
                let s = -self.trace_residual(&theta.b, &theta.a);
                ThetaPoint {
                    b: theta.a.transpose().scale(s),
                    a: theta.b.transpose().scale(s),
                }
            }
            ObjectiveKind::FrobeniusLowRank => {
                let resid = &self.w0 - &theta.product();
                ThetaPoint {
                    b: -&(&resid * &theta.a.transpose()),
                    a: -&(&theta.b.transpose() * &resid),
                }
            }
            ObjectiveKind::TraceSquaredFullRank => unreachable!("checked by caller"),
        }
    }

    /// Gradient of the full-rank objective, `-Tr(W0 - W) I`.
    pub fn grad_full(&self, w: &Matrix) -> Result<Matrix> {
        self.require_full_rank("grad_full")?;
        if w.shape() != self.w0.shape() {
            return Err(Error::dim("grad_full", "W and W0 shapes differ"));
        }
        let r = self.w0.trace()? - w.trace()?;
        Ok(Matrix::identity(w.rows()).scale(-r))
    }

    /// Upper bound on `|grad|` over the box `|B|, |A| <= r_prime`.
    ///
    /// Frobenius kind: `sqrt(2) r' (|W0| + r'^2)`. Trace-squared kind:
    /// `sqrt(2) r' (|Tr W0| + r'^2)`; `|Tr W0|` can exceed `|W0|` by up to a
    /// factor `sqrt(n)` so the Frobenius-norm form does not bound this kind.
    pub fn gradient_norm_bound(&self, r_prime: f64) -> Result<f64> {
        self.require_low_rank("gradient_norm_bound")?;
        check_radius(r_prime)?;
        let scale = match self.kind {
            ObjectiveKind::TraceSquaredLowRank => self.w0.trace()?.abs(),
            _ => self.w0.frobenius_norm(),
        };
        Ok(SQRT_2 * r_prime * (scale + r_prime * r_prime))
    }

    /// Lipschitz constant of the gradient over the box `|B|, |A| <= r_prime`.
    pub fn lipschitz_bound(&self, r_prime: f64) -> Result<f64> {
        self.require_low_rank("lipschitz_bound")?;
        check_radius(r_prime)?;
        let scale = match self.kind {
            ObjectiveKind::TraceSquaredLowRank => self.w0.trace()?.abs(),
            _ => self.w0.frobenius_norm(),
        };
        Ok(2.0 * (scale + 2.0 * r_prime * r_prime))
    }
}

fn check_radius(r_prime: f64) -> Result<()> {
    if !(r_prime > 0.0 && r_prime.is_finite()) {
        return Err(Error::Parameter(format!(
            "r_prime must be positive, got {r_prime}"
        )));
    }
    Ok(())
}

/// Whether both factors lie in the closed box of radius `r_prime`.
pub fn in_domain(theta: &ThetaPoint, r_prime: f64) -> bool {
    theta.b.frobenius_norm() <= r_prime && theta.a.frobenius_norm() <= r_prime
}

/// Draws a point of the box `|B|, |A| <= r_prime`: Gaussian factors, each
/// rescaled onto the boundary when it falls outside.
pub fn sample_in_domain(
    rng: &mut RngState,
    n: usize,
    r: usize,
    m: usize,
    r_prime: f64,
) -> Result<ThetaPoint> {
    check_radius(r_prime)?;
    let clamp = |x: Matrix| {
        let norm = x.frobenius_norm();
        if norm > r_prime {
            x.scale(r_prime / norm)
        } else {
            x
        }
    };
    let b = clamp(rng.gaussian_matrix(n, r, r_prime / ((n * r) as f64).sqrt())?);
    let a = clamp(rng.gaussian_matrix(r, m, r_prime / ((r * m) as f64).sqrt())?);
    ThetaPoint::new(b, a)
}
