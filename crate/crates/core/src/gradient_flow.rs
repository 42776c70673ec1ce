//! Fixed-step classical RK4 for the gradient-flow systems.
//!
//! * trace-squared: `dY/dt = Tr(W0 - YX) X^T`, `dX/dt = Tr(W0 - YX) Y^T`
//! * Frobenius:     `dY/dt = (W0 - YX) X^T`,   `dX/dt = Y^T (W0 - YX)`
//! * full-rank:     `dU/dt = Tr(W0 - U) I`

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, ThetaPoint};
use crate::objectives::{Objective, ObjectiveKind};

pub const DEFAULT_STEP: f64 = 1e-4;
pub const DEFAULT_HORIZON: f64 = 10.0;

/// State of an ODE system integrated by [`rk4`].
pub trait FlowState: Clone {
    /// `self + s * other`.
    fn axpy(&self, s: f64, other: &Self) -> Self;
    /// Distance in the state-space norm.
    fn distance(&self, other: &Self) -> f64;
    fn is_finite(&self) -> bool;
}

impl FlowState for ThetaPoint {
    fn axpy(&self, s: f64, other: &Self) -> Self {
        ThetaPoint::axpy(self, s, other).expect("flow states share a shape")
    }
    fn distance(&self, other: &Self) -> f64 {
        self.sub(other).expect("flow states share a shape").norm()
    }
    fn is_finite(&self) -> bool {
        ThetaPoint::is_finite(self)
    }
}

impl FlowState for Matrix {
    fn axpy(&self, s: f64, other: &Self) -> Self {
        Matrix::axpy(self, s, other).expect("flow states share a shape")
    }
    fn distance(&self, other: &Self) -> f64 {
        (self - other).frobenius_norm()
    }
    fn is_finite(&self) -> bool {
        Matrix::is_finite(self)
    }
}

impl FlowState for Vec<f64> {
    fn axpy(&self, s: f64, other: &Self) -> Self {
        self.iter().zip(other).map(|(a, b)| a + s * b).collect()
    }
    fn distance(&self, other: &Self) -> f64 {
        self.iter()
            .zip(other)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
    fn is_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub step_h: f64,
    pub horizon_t: f64,
    /// Record every `sample_stride`-th step (the final step is always recorded).
    pub sample_stride: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            step_h: DEFAULT_STEP,
            horizon_t: DEFAULT_HORIZON,
            sample_stride: 100,
        }
    }
}

impl FlowConfig {
    pub fn new(step_h: f64, horizon_t: f64, sample_stride: usize) -> Self {
        Self {
            step_h,
            horizon_t,
            sample_stride,
        }
    }

    /// Number of steps; the last one is shortened when `horizon_t` is not a
    /// multiple of `step_h`.
    pub fn steps(&self) -> Result<usize> {
        if !(self.step_h > 0.0 && self.step_h.is_finite()) {
            return Err(Error::Parameter(format!(
                "step_h must be positive, got {}",
                self.step_h
            )));
        }
        if !(self.horizon_t > 0.0 && self.horizon_t.is_finite()) {
            return Err(Error::Parameter(format!(
                "horizon must be positive, got {}",
                self.horizon_t
            )));
        }
        if self.sample_stride == 0 {
            return Err(Error::Parameter("sample_stride must be at least 1".into()));
        }
        let ratio = self.horizon_t / self.step_h;
        if ratio > u32::MAX as f64 {
            return Err(Error::Parameter(format!(
                "horizon/step ratio {ratio:e} too large"
            )));
        }
        let n = ratio.round();
        let n = if (ratio - n).abs() <= 1e-9 * n.max(1.0) {
            n
        } else {
            ratio.ceil()
        };
        Ok(n.max(1.0) as usize)
    }

    /// Time after step `i`, computed without accumulation.
    fn time(&self, i: usize, steps: usize) -> f64 {
        if i == steps {
            self.horizon_t
        } else {
            i as f64 * self.step_h
        }
    }
}

/// Time-stamped states, `times` strictly increasing from 0.
#[derive(Debug, Clone)]
pub struct Trajectory<S> {
    times: Vec<f64>,
    states: Vec<S>,
}

impl<S> Trajectory<S> {
    pub fn new(times: Vec<f64>, states: Vec<S>) -> Result<Self> {
        if times.len() != states.len() || times.is_empty() {
            return Err(Error::Usage(format!(
                "trajectory needs matching non-empty times/states ({} vs {})",
                times.len(),
                states.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Usage(
                "trajectory times must be strictly increasing".into(),
            ));
        }
        Ok(Self { times, states })
    }

    /// Samples a closed-form path on a time grid.
    pub fn from_fn(times: &[f64], f: impl FnMut(f64) -> Result<S>) -> Result<Self> {
        let states = times.iter().copied().map(f).collect::<Result<Vec<_>>>()?;
        Self::new(times.to_vec(), states)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[S] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> (f64, &S) {
        let i = self.times.len() - 1;
        (self.times[i], &self.states[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &S)> {
        self.times.iter().copied().zip(self.states.iter())
    }
}

/// Classical RK4 with fixed step on `dy/dt = rhs(t, y)`.
pub fn rk4<S: FlowState>(
    rhs: impl Fn(f64, &S) -> S,
    y0: &S,
    cfg: &FlowConfig,
) -> Result<Trajectory<S>> {
    let steps = cfg.steps()?;
    let mut times = vec![0.0];
    let mut states = vec![y0.clone()];
    let mut y = y0.clone();
    let mut t = 0.0;
    for i in 1..=steps {
        let t_next = cfg.time(i, steps);
        let h = t_next - t;
        let k1 = rhs(t, &y);
        let k2 = rhs(t + 0.5 * h, &y.axpy(0.5 * h, &k1));
        let k3 = rhs(t + 0.5 * h, &y.axpy(0.5 * h, &k2));
        let k4 = rhs(t_next, &y.axpy(h, &k3));
        let incr = k1.axpy(2.0, &k2).axpy(2.0, &k3).axpy(1.0, &k4);
        let next = y.axpy(h / 6.0, &incr);
        if !next.is_finite() {
            return Err(Error::FlowDiverged {
                last_finite_time: t,
            });
        }
        y = next;
        t = t_next;
        if i % cfg.sample_stride == 0 || i == steps {
            times.push(t);
            states.push(y.clone());
        }
    }
    Trajectory::new(times, states)
}

/// Negative gradient field of a low-rank objective.
pub fn lora_flow_rhs(obj: &Objective, theta: &ThetaPoint) -> ThetaPoint {
    obj.grad_unchecked(theta).scale(-1.0)
}

/// Integrates `d theta/dt = -grad g(theta)` for a low-rank objective.
pub fn integrate_lora_flow(
    obj: &Objective,
    theta0: &ThetaPoint,
    cfg: &FlowConfig,
) -> Result<Trajectory<ThetaPoint>> {
    if !obj.kind().is_low_rank() {
        return Err(Error::Usage(
            "integrate_lora_flow needs a low-rank objective".into(),
        ));
    }
    obj.grad(theta0)?;
    rk4(|_, y| lora_flow_rhs(obj, y), theta0, cfg)
}

/// Integrates `dU/dt = Tr(W0 - U) I` for the full-rank objective.
pub fn integrate_full_rank_flow(
    obj: &Objective,
    w_init: &Matrix,
    cfg: &FlowConfig,
) -> Result<Trajectory<Matrix>> {
    if obj.kind() != ObjectiveKind::TraceSquaredFullRank {
        return Err(Error::Usage(
            "integrate_full_rank_flow needs TraceSquaredFullRank".into(),
        ));
    }
    obj.grad_full(w_init)?;
    let tr_w0 = obj.w0().trace()?;
    let eye = Matrix::identity(w_init.rows());
    rk4(
        |_, u: &Matrix| eye.scale(tr_w0 - u.trace().expect("square")),
        w_init,
        cfg,
    )
}

/// Largest state distance over shared sample times.
pub fn sup_deviation<S: FlowState>(a: &Trajectory<S>, b: &Trajectory<S>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Usage(format!(
            "grids differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let mut worst: f64 = 0.0;
    for ((ta, sa), (tb, sb)) in a.iter().zip(b.iter()) {
        if (ta - tb).abs() > 1e-12 * ta.abs().max(1.0) {
            return Err(Error::Usage(format!("grid mismatch: {ta} vs {tb}")));
        }
        worst = worst.max(sa.distance(sb));
    }
    Ok(worst)
}

/// Uniform grid `0, dt, 2 dt, ..., horizon` (times computed as `i * dt`).
pub fn uniform_grid(dt: f64, horizon: f64) -> Vec<f64> {
    let n = (horizon / dt).round() as usize;
    (0..=n).map(|i| i as f64 * dt).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::RngState;

    #[test]
    fn steps_and_grid() {
        assert_eq!(FlowConfig::new(1e-4, 3.0, 1).steps().unwrap(), 30_000);
        assert_eq!(FlowConfig::new(0.3, 1.0, 1).steps().unwrap(), 4);
        assert!(FlowConfig::new(0.0, 1.0, 1).steps().is_err());
        assert!(FlowConfig::new(0.1, 1.0, 0).steps().is_err());
        let traj = rk4(
            |_, y: &Vec<f64>| y.clone(),
            &vec![1.0],
            &FlowConfig::new(0.3, 1.0, 1),
        )
        .unwrap();
        assert_eq!(traj.times(), &[0.0, 0.3, 0.6, 0.8999999999999999, 1.0]);
    }

    #[test]
    fn exponential_is_fourth_order() {
        let err = |h: f64| {
            let traj = rk4(
                |_, y: &Vec<f64>| vec![-y[0]],
                &vec![1.0],
                &FlowConfig::new(h, 1.0, 1000),
            )
            .unwrap();
            (traj.last().1[0] - (-1.0f64).exp()).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((14.0..18.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn stationary_frobenius_start_is_constant() {
        let b = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let a = Matrix::from_rows(&[vec![0.5, -1.0, 2.0]]).unwrap();
        let obj = Objective::frobenius(&b * &a).unwrap();
        let theta0 = ThetaPoint::new(b, a).unwrap();
        let traj = integrate_lora_flow(&obj, &theta0, &FlowConfig::new(1e-2, 1.0, 10)).unwrap();
        assert!(traj.states().iter().all(|s| *s == theta0));
    }

    #[test]
    fn full_rank_flow_constant_at_optimum_and_deterministic() {
        let mut rng = RngState::new(8);
        let w0 = rng.gaussian_matrix(3, 3, 1.0).unwrap();
        let obj = Objective::full_rank(w0.clone()).unwrap();
        let cfg = FlowConfig::new(1e-3, 1.0, 100);
        let traj = integrate_full_rank_flow(&obj, &w0, &cfg).unwrap();
        assert!(traj.states().iter().all(|s| *s == w0));
        let u0 = rng.gaussian_matrix(3, 3, 1.0).unwrap();
        let a = integrate_full_rank_flow(&obj, &u0, &cfg).unwrap();
        let b = integrate_full_rank_flow(&obj, &u0, &cfg).unwrap();
        assert_eq!(sup_deviation(&a, &b).unwrap(), 0.0);
        // U(t) - U(0) stays a multiple of I
        for s in a.states() {
            assert!((s - &u0).max_abs_off_diagonal() <= 1e-12);
        }
    }

    #[test]
    fn flow_rejects_wrong_kind() {
        let full = Objective::full_rank(Matrix::identity(2)).unwrap();
        assert!(
            integrate_lora_flow(&full, &ThetaPoint::zeros(2, 1, 2), &FlowConfig::default())
                .is_err()
        );
        let low = Objective::trace_squared(Matrix::identity(2)).unwrap();
        assert!(
            integrate_full_rank_flow(&low, &Matrix::identity(2), &FlowConfig::default()).is_err()
        );
    }

    #[test]
    fn divergence_reports_last_finite_time() {
        let cfg = FlowConfig::new(0.1, 100.0, 1);
        match rk4(|_, y: &Vec<f64>| vec![y[0] * y[0]], &vec![1.0], &cfg) {
            Err(Error::FlowDiverged { last_finite_time }) => {
                assert!(last_finite_time > 0.0 && last_finite_time < 100.0)
            }
            other => panic!("expected divergence, got {:?}", other.map(|t| t.len())),
        }
    }

    #[test]
    fn sup_deviation_cases() {
        let times = vec![0.0, 0.5, 1.0];
        let base: Vec<Matrix> = (0..3)
            .map(|i| Matrix::identity(2).scale(i as f64))
            .collect();
        let a = Trajectory::new(times.clone(), base.clone()).unwrap();
        assert_eq!(sup_deviation(&a, &a).unwrap(), 0.0);

        let c = Matrix::from_rows(&[vec![0.0, 3.0], vec![4.0, 0.0]]).unwrap();
        let shifted =
            Trajectory::new(times.clone(), base.iter().map(|m| m + &c).collect()).unwrap();
        assert!((sup_deviation(&a, &shifted).unwrap() - 5.0).abs() < 1e-15);

        let other = Trajectory::new(vec![0.0, 0.4, 1.0], base.clone()).unwrap();
        assert!(matches!(sup_deviation(&a, &other), Err(Error::Usage(_))));
        let short = Trajectory::new(vec![0.0, 1.0], base[..2].to_vec()).unwrap();
        assert!(sup_deviation(&a, &short).is_err());
    }

    #[test]
    fn trajectory_rejects_non_increasing_times() {
        assert!(Trajectory::new(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
        assert!(Trajectory::<f64>::new(vec![], vec![]).is_err());
    }
}
