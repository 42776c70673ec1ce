//! Deterministic gradient descent on LoRA factors with the generalized
//! `(lambda, k)` update scheme, its continuous affine interpolation, and plain
//! full-rank gradient descent.
//!
//! One outer iteration `i` performs, with `q = ik + j`:
//!
//! ```text
//! B_{q+1} = B_q - alpha * grad_B g(B_q, A_{ik})                               j = 0..k-1
//! B*      = lambda * B_{ik} + (1 - lambda) * B_{(i+1)k}
//! A_{q+1} = A_q - alpha * grad_A g(B*, A_q)                                   j = 0..k-1
//! ```
//!
//! `lambda = 1` updates both factors from the previous iterate (simultaneous),
//! `lambda = 0` updates `A` against the freshly updated `B` (sequential).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradient_flow::Trajectory;
use crate::linalg::{Matrix, ThetaPoint};
use crate::objectives::{in_domain, Objective};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdConfig {
    pub alpha: f64,
    pub lambda: f64,
    pub k: usize,
    pub max_outer_iters: usize,
    pub stop_grad_norm: f64,
    /// Domain radius; iterates outside it are flagged, never projected.
    pub r_prime: f64,
}

impl GdConfig {
    pub fn new(alpha: f64, lambda: f64, k: usize, max_outer_iters: usize) -> Self {
        Self {
            alpha,
            lambda,
            k,
            max_outer_iters,
            stop_grad_norm: 0.0,
            r_prime: f64::INFINITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Parameter(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Parameter(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        if self.k == 0 {
            return Err(Error::Parameter("k must be at least 1".into()));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::Parameter(
                "max_outer_iters must be at least 1".into(),
            ));
        }
        if !(self.stop_grad_norm >= 0.0) {
            return Err(Error::Parameter(
                "stop_grad_norm must be non-negative".into(),
            ));
        }
        if !(self.r_prime > 0.0) {
            return Err(Error::Parameter("r_prime must be positive".into()));
        }
        Ok(())
    }
}

/// Every inner iterate `(B_q, A_q)` of a run, indexed by the global step `q`.
#[derive(Debug, Clone)]
pub struct IterateLog {
    pub alpha: f64,
    pub lambda: f64,
    pub k: usize,
    records: Vec<ThetaPoint>,
    /// Steps `q` whose iterate left the box of radius `r_prime`.
    pub domain_violations: Vec<usize>,
    pub outer_iters: usize,
    /// True when the gradient-norm stopping rule fired.
    pub converged: bool,
}

impl IterateLog {
    pub fn records(&self) -> &[ThetaPoint] {
        &self.records
    }

    pub fn record(&self, q: usize) -> Option<&ThetaPoint> {
        self.records.get(q)
    }

    pub fn last_step(&self) -> usize {
        self.records.len() - 1
    }

    pub fn last(&self) -> &ThetaPoint {
        self.records.last().expect("log holds the initial record")
    }

    pub fn horizon(&self) -> f64 {
        self.alpha * self.last_step() as f64
    }

    /// `B* A*` after the final outer iteration.
    pub fn final_product(&self) -> Matrix {
        self.last().product()
    }

    /// Interpolation sampled on `times`.
    pub fn trajectory(&self, obj: &Objective, times: &[f64]) -> Result<Trajectory<ThetaPoint>> {
        let states = times
            .iter()
            .map(|&t| interpolate_affine(self, t, obj))
            .collect::<Result<Vec<_>>>()?;
        Trajectory::new(times.to_vec(), states)
    }
}

/// Runs LoRA-adapted gradient descent from `theta0`.
///
/// Stops after `max_outer_iters` outer iterations, or earlier when the
/// gradient norm at the current iterate drops below `stop_grad_norm` at the
/// top of an outer iteration.
pub fn run_lora_gd(obj: &Objective, theta0: &ThetaPoint, cfg: &GdConfig) -> Result<IterateLog> {
    cfg.validate()?;
    // validates kind and shapes
    obj.grad(theta0)?;

    let mut log = IterateLog {
        alpha: cfg.alpha,
        lambda: cfg.lambda,
        k: cfg.k,
        records: Vec::with_capacity(cfg.max_outer_iters * cfg.k + 1),
        domain_violations: Vec::new(),
        outer_iters: 0,
        converged: false,
    };
    if !in_domain(theta0, cfg.r_prime) {
        log.domain_violations.push(0);
    }
    log.records.push(theta0.clone());

    let alpha = cfg.alpha;
    for _ in 0..cfg.max_outer_iters {
        let start = log.last().clone();
        if cfg.stop_grad_norm > 0.0 && obj.grad_unchecked(&start).norm() < cfg.stop_grad_norm {
            log.converged = true;
            break;
        }
        let base = log.last_step();

        // Stage 1: B against the frozen A_{ik}.
        let mut bs = Vec::with_capacity(cfg.k + 1);
        bs.push(start.b.clone());
        for _ in 0..cfg.k {
            let b = bs.last().expect("non-empty");
            let next = b.axpy(-alpha, &obj.grad_b(b, &start.a))?;
            bs.push(next);
        }
        let b_end = bs.last().expect("non-empty");
        let b_star = start.b.scale(cfg.lambda).axpy(1.0 - cfg.lambda, b_end)?;

        // Stage 2: A against the convex combination B*.
        let mut a = start.a.clone();
        for (j, b) in bs.into_iter().enumerate().skip(1) {
            a = a.axpy(-alpha, &obj.grad_a(&b_star, &a))?;
            let theta = ThetaPoint { b, a: a.clone() };
            let q = base + j;
            if !theta.is_finite() {
                return Err(Error::GdDiverged {
                    step: q,
                    log: Box::new(log),
                });
            }
            if !in_domain(&theta, cfg.r_prime) {
                log.domain_violations.push(q);
            }
            log.records.push(theta);
        }
        log.outer_iters += 1;
    }
    Ok(log)
}

/// Continuous affine interpolation `(Y_alpha(t), X_alpha(t))` of the logged iterates.
///
/// With `q = floor(t / alpha)`, `j = q mod k` and `h = q - j`:
///
/// ```text
/// Y(t) = B_q - (t - q alpha) grad_B g(B_q, A_h)
/// X(t) = A_q - (t - q alpha) grad_A g(lambda B_h + (1 - lambda) B_{h+k}, A_q)
/// ```
///
/// At grid times `t = q alpha` the logged iterate is returned unchanged.
pub fn interpolate_affine(log: &IterateLog, t: f64, obj: &Objective) -> Result<ThetaPoint> {
    let horizon = log.horizon();
    if !(t >= 0.0) || t > horizon * (1.0 + 1e-12) {
        return Err(Error::Range { t, horizon });
    }
    let steps = t / log.alpha;
    let nearest = steps.round();
    if (steps - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        return Ok(log.records[(nearest as usize).min(log.last_step())].clone());
    }
    let q = steps.floor() as usize;
    let dt = t - q as f64 * log.alpha;
    let h = q - q % log.k;
    let cur = &log.records[q];
    let anchor = &log.records[h];
    let ahead = &log.records[h + log.k];

    let b_mix = anchor
        .b
        .scale(log.lambda)
        .axpy(1.0 - log.lambda, &ahead.b)?;
    Ok(ThetaPoint {
        b: cur.b.axpy(-dt, &obj.grad_b(&cur.b, &anchor.a))?,
        a: cur.a.axpy(-dt, &obj.grad_a(&b_mix, &cur.a))?,
    })
}

/// Full-rank gradient descent `W_{q+1} = W_q - alpha grad f(W_q)`; returns
/// `iters + 1` matrices including the initial one.
pub fn run_full_rank_gd(
    obj: &Objective,
    w_init: &Matrix,
    alpha: f64,
    iters: usize,
) -> Result<Vec<Matrix>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Parameter(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    let mut out = Vec::with_capacity(iters + 1);
    // validates kind and shape
    obj.grad_full(w_init)?;
    out.push(w_init.clone());
    for q in 0..iters {
        let w = out.last().expect("non-empty");
        let next = w.axpy(-alpha, &obj.grad_full(w)?)?;
        if !next.is_finite() {
            return Err(Error::FullRankDiverged { step: q + 1 });
        }
        out.push(next);
    }
    Ok(out)
}
