//! Closed-form gradient-flow solution for the trace-squared objective started
//! at `Y0 = 0`, and the full-rank solution `U(t)`.
//!
//! With `c = Tr W0` and `a(t) = Tr(W0 - Y(t) X(t))`:
//!
//! ```text
//! a(t)  = sgn(c) k1 / (2 |X0|^2 sinh(sqrt(k1) (t + k2)) + 4 |c|)
//! Y(t)  = q(t) c X0^T
//! X(t)  = p(t) X0
//! Y X  -> c / |X0|^2 * X0^T X0          as t -> infinity
//! ```
//!
//! The full-rank flow solves to `U(t) = U0 + (1 - e^{-nt}) / n * Tr(W0 - U0) I`.

use crate::error::{Error, Result};
use crate::hyperbolic::HyperbolicFlow;
use crate::linalg::{Matrix, ThetaPoint};

/// Tolerance on `|a|` defining the finite "t -> infinity" horizon.
pub const TAIL_TOL: f64 = 1e-10;

/// `c = Tr W0`, `|X0|^2` and the derived `k1`, `k2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceFlowConstants {
    pub c: f64,
    pub x0_norm_sq: f64,
    pub kappa1: f64,
    pub kappa2: f64,
}

impl TraceFlowConstants {
    /// Rejects `c = 0` and `|X0| = 0`, where the flow never leaves the saddle.
    pub fn new(c: f64, x0_norm_sq: f64) -> Result<Self> {
        if !c.is_finite() || c == 0.0 {
            return Err(Error::SaddleInit(format!(
                "Tr(W0) must be nonzero, got {c}"
            )));
        }
        if !(x0_norm_sq > 0.0 && x0_norm_sq.is_finite()) {
            return Err(Error::SaddleInit("X0 must be nonzero".into()));
        }
        let h = HyperbolicFlow::new(x0_norm_sq, c.abs());
        Ok(Self {
            c,
            x0_norm_sq,
            kappa1: h.kappa1(),
            kappa2: h.kappa2(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct TraceClosedForm {
    consts: TraceFlowConstants,
    flow: HyperbolicFlow,
    w0: Matrix,
    x0: Matrix,
}

impl TraceClosedForm {
    /// `w0` is `n x n`, `x0` is `r x n`.
    pub fn new(w0: &Matrix, x0: &Matrix) -> Result<Self> {
        if !w0.is_square() || x0.cols() != w0.rows() {
            return Err(Error::dim(
                "TraceClosedForm::new",
                format!(
                    "W0 {}x{}, X0 {}x{}",
                    w0.rows(),
                    w0.cols(),
                    x0.rows(),
                    x0.cols()
                ),
            ));
        }
        let consts = TraceFlowConstants::new(w0.trace()?, x0.frobenius_norm_sq())?;
        let flow = HyperbolicFlow::new(consts.x0_norm_sq, consts.c.abs());
        Ok(Self {
            consts,
            flow,
            w0: w0.clone(),
            x0: x0.clone(),
        })
    }

    pub fn consts(&self) -> &TraceFlowConstants {
        &self.consts
    }

    pub fn w0(&self) -> &Matrix {
        &self.w0
    }

    pub fn x0(&self) -> &Matrix {
        &self.x0
    }

    /// Initial point `(0, X0)`.
    pub fn initial(&self) -> ThetaPoint {
        ThetaPoint {
            b: Matrix::zeros(self.w0.rows(), self.x0.rows()),
            a: self.x0.clone(),
        }
    }

    fn sign(&self) -> f64 {
        self.consts.c.signum()
    }

    /// `a(t) = Tr(W0 - Y(t) X(t))`.
    pub fn a_of_t(&self, t: f64) -> f64 {
        self.sign() * self.flow.a_abs(t)
    }

    /// `a'(t)`, always of opposite sign to `a(t)`.
    pub fn a_prime_of_t(&self, t: f64) -> f64 {
        -self.sign() * self.flow.a_prime_abs(t)
    }

    /// `|a'' - ((a')^2 / a + 4 a^3 - 4 c a^2)|` with `a''` from central
    /// differences of the analytic `a'`.
    pub fn a_ode_residual(&self, t: f64) -> f64 {
        let h = 1e-5 * t.max(1.0);
        let a2 = if t >= h {
            (self.a_prime_of_t(t + h) - self.a_prime_of_t(t - h)) / (2.0 * h)
        } else {
            (-3.0 * self.a_prime_of_t(t) + 4.0 * self.a_prime_of_t(t + h)
                - self.a_prime_of_t(t + 2.0 * h))
                / (2.0 * h)
        };
        let a = self.a_of_t(t);
        let ap = self.a_prime_of_t(t);
        let c = self.consts.c;
        let rhs = ap * self.flow.log_derivative(t) + 4.0 * a * a * a - 4.0 * c * a * a;
        (a2 - rhs).abs()
    }

    pub fn p_of_t(&self, t: f64) -> f64 {
        self.flow.p(t)
    }

    pub fn q_of_t(&self, t: f64) -> f64 {
        self.flow.q(t)
    }

    /// `(Y(t), X(t)) = (q(t) c X0^T, p(t) X0)`.
    pub fn closed_trajectory(&self, t: f64) -> ThetaPoint {
        ThetaPoint {
            b: self.x0.transpose().scale(self.flow.q(t) * self.consts.c),
            a: self.x0.scale(self.flow.p(t)),
        }
    }

    /// `Y(t) X(t) = p q c X0^T X0`.
    pub fn product_of_t(&self, t: f64) -> Matrix {
        self.gram()
            .scale(self.flow.p(t) * self.flow.q(t) * self.consts.c)
    }

    fn gram(&self) -> Matrix {
        &self.x0.transpose() * &self.x0
    }

    /// `lim Y X = c / |X0|^2 * X0^T X0`.
    pub fn limit_product(&self) -> Matrix {
        self.gram().scale(self.consts.c / self.consts.x0_norm_sq)
    }

    /// Smallest horizon with `|a(T)| <= tol`.
    pub fn tail_horizon(&self, tol: f64) -> f64 {
        self.flow.tail_horizon(tol)
    }
}

fn check_full_rank(w0: &Matrix, u0: &Matrix) -> Result<()> {
    if !w0.is_square() || w0.shape() != u0.shape() {
        return Err(Error::dim(
            "full_rank_solution",
            format!(
                "W0 {}x{}, U0 {}x{}",
                w0.rows(),
                w0.cols(),
                u0.rows(),
                u0.cols()
            ),
        ));
    }
    Ok(())
}

/// `U(t) = U0 + (1 - e^{-nt}) / n * Tr(W0 - U0) I`.
pub fn full_rank_solution(w0: &Matrix, u0: &Matrix, t: f64) -> Result<Matrix> {
    check_full_rank(w0, u0)?;
    let n = w0.rows() as f64;
    let gap = w0.trace()? - u0.trace()?;
    let weight = -(-n * t).exp_m1() / n;
    u0.axpy(weight * gap, &Matrix::identity(w0.rows()))
}

/// `U0 + Tr(W0 - U0) / n * I`.
pub fn full_rank_limit(w0: &Matrix, u0: &Matrix) -> Result<Matrix> {
    check_full_rank(w0, u0)?;
    let n = w0.rows() as f64;
    let gap = w0.trace()? - u0.trace()?;
    u0.axpy(gap / n, &Matrix::identity(w0.rows()))
}

/// Smallest `T` with `|Tr(W0 - U(T))| <= tol`.
pub fn full_rank_tail_horizon(w0: &Matrix, u0: &Matrix, tol: f64) -> Result<f64> {
    check_full_rank(w0, u0)?;
    let gap = (w0.trace()? - u0.trace()?).abs();
    if gap <= tol {
        return Ok(0.0);
    }
    Ok((gap / tol).ln() / w0.rows() as f64)
}
