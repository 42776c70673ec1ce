//! Frobenius low-rank approximation `h(B, A) = 1/2 |W0 - BA|^2` under spectral
//! initialization.
//!
//! With `W0 = U S V^T`, `Y0 = 0` and `X0 = Xd V^T` for an `r x m` diagonal `Xd`,
//! the rotated factors `U^T Y`, `X V` stay diagonal and each channel `i` obeys
//! the scalar flow `y' = (s_i - yx) x`, `x' = (s_i - yx) y`. Its product
//! `y(t) x(t) = p(t) q(t) s_i x_i^2` rises monotonically from 0 to `s_i`, so the
//! flow recovers the truncated SVD.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gradient_flow::{integrate_lora_flow, FlowConfig};
use crate::hyperbolic::HyperbolicFlow;
use crate::linalg::{svd, Matrix, RngState, SvdResult, ThetaPoint};
use crate::objectives::Objective;

/// Singular values at or below `RANK_TOL * s_1` do not count toward rank.
pub const RANK_TOL: f64 = 1e-10;
/// Per-channel gap `|s_i - y_i x_i|` defining the finite horizon.
pub const CHANNEL_TAIL_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SpectralInit {
    pub svd: SvdResult,
    pub r: usize,
    /// Diagonal of `X0 V`, one nonzero entry per channel.
    pub x_tilde_diag: Vec<f64>,
}

impl SpectralInit {
    pub fn n(&self) -> usize {
        self.svd.u.rows()
    }

    pub fn m(&self) -> usize {
        self.svd.v.rows()
    }

    /// `(Y0, X0) = (0, Xd V^T)`.
    pub fn initial_theta(&self) -> ThetaPoint {
        let v = &self.svd.v;
        let x0 = Matrix::from_fn(self.r, self.m(), |i, j| self.x_tilde_diag[i] * v.get(j, i));
        ThetaPoint {
            b: Matrix::zeros(self.n(), self.r),
            a: x0,
        }
    }

    pub fn channels(&self) -> Vec<ScalarDyn> {
        self.x_tilde_diag
            .iter()
            .zip(&self.svd.sigma)
            .map(|(&x0, &s0)| ScalarDyn::new(s0, x0).expect("validated at initialization"))
            .collect()
    }

    /// Horizon after which every channel is within `tol` of its singular value.
    pub fn tail_horizon(&self, tol: f64) -> f64 {
        self.channels()
            .iter()
            .map(|c| c.tail_horizon(tol))
            .fold(0.0, f64::max)
    }
}

/// Draws a spectral initialization for a rank-`r` factorization of `w0`.
///
/// Requires the numerical rank of `w0` to exceed `r`.
pub fn spectral_initialize(w0: &Matrix, r: usize, sigma: f64, seed: u64) -> Result<SpectralInit> {
    if r == 0 {
        return Err(Error::Parameter("rank r must be at least 1".into()));
    }
    let svd = svd(w0)?;
    let rank = svd.numerical_rank(RANK_TOL);
    if rank <= r {
        return Err(Error::RankAssumption { rank, r });
    }
    let mut rng = RngState::new(seed);
    let draw = |rng: &mut RngState| -> Result<Vec<f64>> {
        Ok(rng.gaussian_matrix(1, r, sigma)?.as_slice().to_vec())
    };
    let mut diag = draw(&mut rng)?;
    if diag.contains(&0.0) {
        diag = draw(&mut rng)?;
        if diag.contains(&0.0) {
            return Err(Error::SaddleInit(
                "zero diagonal entry in spectral initialization".into(),
            ));
        }
    }
    Ok(SpectralInit {
        svd,
        r,
        x_tilde_diag: diag,
    })
}

/// One decoupled channel: singular value `s0 > 0` and initial `x0 != 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarDyn {
    pub s0: f64,
    pub x0: f64,
    /// `x0^4 + 4 s0^2`
    pub xi1: f64,
    /// `asinh(x0^2 / (2 s0)) / sqrt(xi1)`
    pub xi2: f64,
    flow: HyperbolicFlow,
}

impl ScalarDyn {
    pub fn new(s0: f64, x0: f64) -> Result<Self> {
        if !(s0 > 0.0 && s0.is_finite()) {
            return Err(Error::Parameter(format!(
                "singular value must be positive, got {s0}"
            )));
        }
        if x0 == 0.0 || !x0.is_finite() {
            return Err(Error::SaddleInit(format!(
                "channel initial value must be nonzero, got {x0}"
            )));
        }
        let flow = HyperbolicFlow::new(x0 * x0, s0);
        Ok(Self {
            s0,
            x0,
            xi1: flow.kappa1(),
            xi2: flow.kappa2(),
            flow,
        })
    }

    /// `y(t) x(t) = p(t) q(t) s0 x0^2`.
    pub fn product(&self, t: f64) -> f64 {
        self.flow.p(t) * self.flow.q(t) * self.s0 * self.x0 * self.x0
    }

    /// `(y(t), x(t)) = (q(t) s0 x0, p(t) x0)`.
    pub fn factors(&self, t: f64) -> (f64, f64) {
        (self.flow.q(t) * self.s0 * self.x0, self.flow.p(t) * self.x0)
    }

    /// Smallest `T` with `s0 - y(T) x(T) <= tol`.
    pub fn tail_horizon(&self, tol: f64) -> f64 {
        self.flow.tail_horizon(tol)
    }
}

pub fn scalar_product_of_t(d: &ScalarDyn, t: f64) -> f64 {
    d.product(t)
}

/// `Y(t) X(t) = sum_i y_i(t) x_i(t) u_i v_i^T` over the `r` channels.
pub fn closed_product_matrix(init: &SpectralInit, t: f64) -> Matrix {
    let products: Vec<f64> = init.channels().iter().map(|c| c.product(t)).collect();
    let (u, v) = (&init.svd.u, &init.svd.v);
    Matrix::from_fn(init.n(), init.m(), |i, j| {
        products
            .iter()
            .enumerate()
            .map(|(l, p)| u.get(i, l) * p * v.get(j, l))
            .sum()
    })
}

/// Best rank-`r` approximation via truncated SVD.
pub fn eym_truncation(w0: &Matrix, r: usize) -> Result<Matrix> {
    check_truncation_rank(w0, r)?;
    Ok(svd(w0)?.reconstruct_rank(r))
}

/// `1/2 sum_{i > r} s_i^2`.
pub fn final_loss(w0: &Matrix, r: usize) -> Result<f64> {
    check_truncation_rank(w0, r)?;
    Ok(0.5 * svd(w0)?.sigma.iter().skip(r).map(|s| s * s).sum::<f64>())
}

fn check_truncation_rank(w0: &Matrix, r: usize) -> Result<()> {
    if r > w0.rows().min(w0.cols()) {
        return Err(Error::Parameter(format!(
            "rank {r} exceeds min dimension of {}x{}",
            w0.rows(),
            w0.cols()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct EymReport {
    pub r: usize,
    pub t_star: f64,
    pub final_loss: f64,
    /// `|Y(T*) X(T*) - truncation|` from the integrated matrix flow.
    pub ode_product_error: f64,
    pub ode_loss: f64,
    /// Same quantities from the per-channel closed form.
    pub closed_product_error: f64,
    pub closed_loss: f64,
    /// `s_r - s_{r+1}`; a zero gap makes the truncation non-unique.
    pub spectral_gap: f64,
}

/// Integrates the Frobenius flow from a spectral initialization out to the
/// channel tail horizon and compares against the truncated SVD. `flow_cfg`
/// supplies step and stride; its horizon is replaced by `T*`.
pub fn flow_vs_eym(
    w0: &Matrix,
    r: usize,
    sigma: f64,
    seed: u64,
    flow_cfg: &FlowConfig,
) -> Result<EymReport> {
    let init = spectral_initialize(w0, r, sigma, seed)?;
    let t_star = init.tail_horizon(CHANNEL_TAIL_TOL);
    let obj = Objective::frobenius(w0.clone())?;
    let cfg = FlowConfig {
        horizon_t: t_star.max(flow_cfg.step_h),
        ..*flow_cfg
    };
    let traj = integrate_lora_flow(&obj, &init.initial_theta(), &cfg)?;
    let (t_end, theta) = traj.last();

    let eym = init.svd.reconstruct_rank(r);
    let fl = 0.5 * init.svd.sigma.iter().skip(r).map(|s| s * s).sum::<f64>();
    let ode_product = theta.product();
    let closed = closed_product_matrix(&init, t_end);
    let sigma_list = &init.svd.sigma;
    Ok(EymReport {
        r,
        t_star: t_end,
        final_loss: fl,
        ode_product_error: (&ode_product - &eym).frobenius_norm(),
        ode_loss: obj.value(theta)?,
        closed_product_error: (&closed - &eym).frobenius_norm(),
        closed_loss: 0.5 * (w0 - &closed).frobenius_norm_sq(),
        spectral_gap: sigma_list[r - 1] - sigma_list.get(r).copied().unwrap_or(0.0),
    })
}
