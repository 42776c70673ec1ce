use crate::closed_form_trace::{
    full_rank_limit, full_rank_solution, full_rank_tail_horizon, TraceClosedForm, TAIL_TOL,
};
use crate::error::Result;
use crate::error_stats::{
    check_with_retry, chi_sq_moments, expected_sq_rel_error, jensen_bound, mc_relative_errors,
    relative_error_exact, sphere_moments, sphere_moments_exact, ChiSqMoments, ErrorStatsConfig,
    McEstimate, SphereMoments, SE_BAND,
};
use crate::gradient_flow::{
    integrate_full_rank_flow, integrate_lora_flow, rk4, sup_deviation, FlowConfig,
};
use crate::linalg::{Matrix, RngState, ThetaPoint};
use crate::lora_gd::{run_lora_gd, GdConfig};
use crate::objectives::Objective;
use crate::spectral_lowrank::{
    closed_product_matrix, flow_vs_eym, spectral_initialize, CHANNEL_TAIL_TOL,
};

use super::config::{ExperimentConfig, X0_STREAM};
use super::output::{Cell, Check, ExperimentOutput, Table};

/// Spacing of the comparison grid for discrete-vs-flow experiments.
const GRID_DT: f64 = 0.01;
/// Rows written for closed-form paths.
const PATH_ROWS: usize = 200;

pub struct Inputs<'a> {
    pub cfg: &'a ExperimentConfig,
    pub w0: Matrix,
    pub threads: usize,
}

fn draw_x0(cfg: &ExperimentConfig, n: usize) -> Result<Matrix> {
    RngState::with_stream(cfg.seed, X0_STREAM).gaussian_matrix(cfg.r, n, cfg.sigma)
}

fn stride_for(step: f64, spacing: f64) -> usize {
    ((spacing / step).round() as usize).max(1)
}

fn path_times(horizon: f64) -> Vec<f64> {
    (0..=PATH_ROWS)
        .map(|i| horizon * i as f64 / PATH_ROWS as f64)
        .collect()
}

/// Sup-deviation of the affine GD interpolation from the flow, per step size.
pub fn gd_convergence(inp: &Inputs) -> Result<ExperimentOutput> {
    let cfg = inp.cfg;
    let n = inp.w0.rows();
    let obj = Objective::trace_squared(inp.w0.clone())?;
    let theta0 = ThetaPoint::new(Matrix::zeros(n, cfg.r), draw_x0(cfg, n)?)?;
    let flow_cfg = FlowConfig::new(
        cfg.flow_step,
        cfg.flow_horizon,
        stride_for(cfg.flow_step, GRID_DT),
    );
    let flow = integrate_lora_flow(&obj, &theta0, &flow_cfg)?;

    let mut out = ExperimentOutput {
        table: Table::new(&[
            "alpha",
            "lambda",
            "sup_deviation",
            "ratio_to_previous_alpha",
        ]),
        ..Default::default()
    };
    for &lambda in &cfg.lambda {
        let mut prev: Option<f64> = None;
        for &alpha in &cfg.alpha {
            // one spare outer iteration keeps the horizon covered despite rounding
            let outer = (cfg.flow_horizon / (alpha * cfg.k as f64)).ceil() as usize + 1;
            let log = run_lora_gd(&obj, &theta0, &GdConfig::new(alpha, lambda, cfg.k, outer))?;
            let dev = sup_deviation(&log.trajectory(&obj, flow.times())?, &flow)?;
            let ratio = prev.map(|p| p / dev);
            out.table.push(vec![
                alpha.into(),
                lambda.into(),
                dev.into(),
                ratio.map_or(Cell::Empty, Cell::Num),
            ]);
            out.metric(
                &format!("sup_deviation[alpha={alpha},lambda={lambda}]"),
                dev,
            );
            if let Some(r) = ratio {
                out.check(Check::band(
                    &format!("halving_ratio[alpha={alpha},lambda={lambda}]"),
                    r,
                    Some(1.5),
                    Some(3.0),
                ));
            }
            prev = Some(dev);
        }
    }
    Ok(out)
}

/// Closed-form trace-squared trajectory from `Y0 = 0`, checked against RK4.
pub fn trace_flow(inp: &Inputs) -> Result<ExperimentOutput> {
    let cfg = inp.cfg;
    let x0 = draw_x0(cfg, inp.w0.rows())?;
    let cf = TraceClosedForm::new(&inp.w0, &x0)?;
    let obj = Objective::trace_squared(inp.w0.clone())?;
    let limit = cf.limit_product();
    let t_star = cf.tail_horizon(TAIL_TOL);

    let mut out = ExperimentOutput {
        table: Table::new(&["t", "a", "loss", "product_to_limit"]),
        ..Default::default()
    };
    for t in path_times(t_star) {
        let a = cf.a_of_t(t);
        out.table.push(vec![
            t.into(),
            a.into(),
            (0.5 * a * a).into(),
            (&cf.product_of_t(t) - &limit).frobenius_norm().into(),
        ]);
    }

    let c = cf.consts().c;
    let tr_limit = limit.trace()?;
    let final_product = cf.product_of_t(t_star);
    let final_loss = obj.value(&cf.closed_trajectory(t_star))?;
    out.metric("t_star", t_star);
    out.metric("trace_w0", c);
    out.metric("trace_limit", tr_limit);
    out.metric("final_loss", final_loss);
    out.check(Check::at_most(
        "limit_product_error",
        (&final_product - &limit).frobenius_norm(),
        1e-8,
    ));
    out.check(Check::at_most(
        "trace_limit_minus_trace_w0",
        (tr_limit - c).abs(),
        1e-12 * c.abs().max(1.0),
    ));
    out.check(Check::at_most("final_loss", final_loss, 1e-16));

    let traj = integrate_lora_flow(
        &obj,
        &cf.initial(),
        &FlowConfig::new(cfg.flow_step, cfg.flow_horizon, 100),
    )?;
    let mut worst: f64 = 0.0;
    for (t, theta) in traj.iter() {
        worst = worst.max(theta.sub(&cf.closed_trajectory(t))?.norm());
    }
    out.metric("rk4_horizon", cfg.flow_horizon);
    out.check(Check::at_most("rk4_vs_closed_form", worst, 1e-6));
    Ok(out)
}

/// Full-rank flow from `U0 = 0`: closed form, RK4 and the low-rank comparison.
pub fn fullrank_flow(inp: &Inputs) -> Result<ExperimentOutput> {
    let cfg = inp.cfg;
    let w0 = &inp.w0;
    let n = w0.rows();
    let u0 = Matrix::zeros(n, n);
    let obj = Objective::full_rank(w0.clone())?;
    let limit = full_rank_limit(w0, &u0)?;
    let t_star = full_rank_tail_horizon(w0, &u0, TAIL_TOL)?.max(cfg.flow_step);
    let steps = FlowConfig::new(cfg.flow_step, t_star, 1).steps()?;
    let traj = integrate_full_rank_flow(
        &obj,
        &u0,
        &FlowConfig::new(cfg.flow_step, t_star, (steps / PATH_ROWS).max(1)),
    )?;

    let mut out = ExperimentOutput {
        table: Table::new(&["t", "trace_gap", "loss", "rk4_minus_closed"]),
        ..Default::default()
    };
    for (t, u) in traj.iter() {
        let closed = full_rank_solution(w0, &u0, t)?;
        let gap = w0.trace()? - closed.trace()?;
        out.table.push(vec![
            t.into(),
            gap.into(),
            (0.5 * gap * gap).into(),
            (u - &closed).frobenius_norm().into(),
        ]);
    }

    let (t_end, u_rk4) = traj.last();
    let u_closed = full_rank_solution(w0, &u0, t_end)?;
    let expected = Matrix::identity(n).scale(w0.trace()? / n as f64);
    out.metric("t_star", t_end);
    out.check(Check::at_most(
        "closed_limit_error",
        (&u_closed - &expected).frobenius_norm(),
        1e-8,
    ));
    out.check(Check::at_most(
        "rk4_limit_error",
        (u_rk4 - &expected).frobenius_norm(),
        1e-8,
    ));
    out.check(Check::at_most("closed_loss", obj.value(&u_closed)?, 1e-16));
    out.check(Check::at_most("rk4_loss", obj.value(u_rk4)?, 1e-16));

    // Relative gap between the rank-r and full-rank limits against the formula.
    let x0 = draw_x0(cfg, n)?;
    let low = TraceClosedForm::new(w0, &x0)?.limit_product();
    let direct = (&low - &limit).frobenius_norm() / limit.frobenius_norm();
    let formula = relative_error_exact(&x0)?;
    out.metric("relative_error_direct", direct);
    out.metric("relative_error_formula", formula);
    out.check(Check::at_most(
        "relative_error_formula_mismatch",
        (direct - formula).abs(),
        1e-10,
    ));
    Ok(out)
}

/// Monte Carlo estimate of the expected squared relative error.
pub fn approx_error(inp: &Inputs) -> Result<ExperimentOutput> {
    let cfg = inp.cfg;
    let n = inp.w0.rows();
    let base = ErrorStatsConfig {
        n,
        r: cfg.r,
        trials: cfg.trials,
        sigma: cfg.sigma,
        seed: cfg.seed,
        threads: inp.threads,
    };
    let formula = expected_sq_rel_error(n, cfg.r)?;
    let jensen = jensen_bound(n, cfg.r)?;

    let mut plain = None;
    let stat = check_with_retry(formula, cfg.trials, |trials| {
        let est = mc_relative_errors(&ErrorStatsConfig { trials, ..base })?;
        plain = Some(est.plain);
        Ok(est.squared)
    })?;
    let plain = plain.expect("estimator ran");
    let sq = stat.estimate;

    let mut out = ExperimentOutput {
        table: Table::new(&[
            "n",
            "r",
            "trials",
            "mean_sq",
            "se_sq",
            "formula",
            "mean",
            "se",
            "jensen_bound",
            "retried",
        ]),
        ..Default::default()
    };
    out.table.push(vec![
        n.into(),
        cfg.r.into(),
        sq.trials.into(),
        sq.mean.into(),
        sq.std_error.into(),
        formula.into(),
        plain.mean.into(),
        plain.std_error.into(),
        jensen.into(),
        usize::from(stat.retried).into(),
    ]);
    out.metric("mc_mean_sq", sq.mean);
    out.metric("mc_se_sq", sq.std_error);
    out.metric("formula", formula);
    out.metric("mc_mean", plain.mean);
    out.metric("mc_se", plain.std_error);
    out.metric("jensen_bound", jensen);
    out.metric("retried", f64::from(u8::from(stat.retried)));
    out.check(Check::at_most(
        "mean_sq_z_score",
        sq.z_score(formula).abs(),
        SE_BAND,
    ));
    out.check(Check::at_least(
        "jensen_margin",
        jensen - (plain.mean - SE_BAND * plain.std_error),
        0.0,
    ));
    Ok(out)
}

type SpherePick = fn(&SphereMoments) -> Option<McEstimate>;
type ChiPick = fn(&ChiSqMoments) -> McEstimate;

/// Sphere and chi-squared moments in dimension `n r`.
pub fn moments(inp: &Inputs) -> Result<ExperimentOutput> {
    let cfg = inp.cfg;
    let dim = inp.w0.rows() * cfg.r;
    let (e2, e4, e22, e1111) = sphere_moments_exact(dim);
    let d = dim as f64;

    let mut out = ExperimentOutput {
        table: Table::new(&[
            "moment",
            "dim",
            "trials",
            "estimate",
            "std_error",
            "expected",
            "z",
        ]),
        ..Default::default()
    };
    let sphere: [(&str, f64, SpherePick); 4] = [
        ("sphere_z1^2", e2, |m| Some(m.second)),
        ("sphere_z1^4", e4, |m| Some(m.fourth)),
        ("sphere_z1^2z2^2", e22, |m| m.cross),
        ("sphere_z1z2z3z4", e1111, |m| m.distinct),
    ];
    for (name, expected, pick) in sphere {
        if pick(&sphere_moments(dim, 2, cfg.seed, 0)?).is_none() {
            out.table.push(vec![
                name.into(),
                dim.into(),
                Cell::Empty,
                Cell::Empty,
                Cell::Empty,
                expected.into(),
                Cell::Empty,
            ]);
            out.metric(&format!("{name}_omitted"), 1.0);
            continue;
        }
        let stat = check_with_retry(expected, cfg.trials, |trials| {
            Ok(pick(&sphere_moments(dim, trials, cfg.seed, inp.threads)?)
                .expect("dimension checked"))
        })?;
        push_moment(&mut out, name, dim, expected, &stat.estimate);
    }
    let chi: [(&str, f64, ChiPick); 2] = [
        ("chi_sq_rho^2", d, |m| m.second),
        ("chi_sq_rho^4", d * (d + 2.0), |m| m.fourth),
    ];
    for (name, expected, pick) in chi {
        let stat = check_with_retry(expected, cfg.trials, |trials| {
            Ok(pick(&chi_sq_moments(
                dim,
                trials,
                cfg.seed.wrapping_add(1),
                inp.threads,
            )?))
        })?;
        push_moment(&mut out, name, dim, expected, &stat.estimate);
    }
    Ok(out)
}

fn push_moment(
    out: &mut ExperimentOutput,
    name: &str,
    dim: usize,
    expected: f64,
    est: &McEstimate,
) {
    let z = est.z_score(expected);
    out.table.push(vec![
        name.into(),
        dim.into(),
        est.trials.into(),
        est.mean.into(),
        est.std_error.into(),
        expected.into(),
        z.into(),
    ]);
    out.metric(name, est.mean);
    out.check(Check::at_most(&format!("{name}_z_score"), z.abs(), SE_BAND));
}

/// Spectral-init Frobenius flow against the truncated SVD.
pub fn lowrank_eym(inp: &Inputs) -> Result<ExperimentOutput> {
    let cfg = inp.cfg;
    let w0 = &inp.w0;
    let report = flow_vs_eym(
        w0,
        cfg.r,
        cfg.sigma,
        cfg.seed,
        &FlowConfig::new(cfg.flow_step, 1.0, usize::MAX),
    )?;
    let init = spectral_initialize(w0, cfg.r, cfg.sigma, cfg.seed)?;
    let eym = init.svd.reconstruct_rank(cfg.r);

    let mut header = vec![
        "t".to_string(),
        "closed_loss".into(),
        "closed_product_error".into(),
    ];
    header.extend((0..cfg.r).map(|i| format!("channel_{i}")));
    let mut out = ExperimentOutput {
        table: Table {
            header,
            rows: Vec::new(),
        },
        ..Default::default()
    };
    let channels = init.channels();
    for t in path_times(init.tail_horizon(CHANNEL_TAIL_TOL)) {
        let closed = closed_product_matrix(&init, t);
        let mut row: Vec<Cell> = vec![
            t.into(),
            (0.5 * (w0 - &closed).frobenius_norm_sq()).into(),
            (&closed - &eym).frobenius_norm().into(),
        ];
        row.extend(channels.iter().map(|c| Cell::Num(c.product(t))));
        out.table.push(row);
    }

    // Scalar closed form against RK4 of y' = (s - yx) x, x' = (s - yx) y.
    let marks = [0.5, 1.0, 3.0];
    let mut scalar_worst: f64 = 0.0;
    for ch in &channels {
        let rhs = |_: f64, v: &Vec<f64>| {
            let res = ch.s0 - v[0] * v[1];
            vec![res * v[1], res * v[0]]
        };
        let traj = rk4(
            rhs,
            &vec![0.0, ch.x0],
            &FlowConfig::new(cfg.flow_step, 3.0, stride_for(cfg.flow_step, 0.5)),
        )?;
        for (t, v) in traj.iter() {
            if marks.iter().any(|m| (m - t).abs() < 1e-9) {
                scalar_worst = scalar_worst.max((v[0] * v[1] - ch.product(t)).abs());
            }
        }
    }

    out.metric("t_star", report.t_star);
    out.metric("final_loss", report.final_loss);
    out.metric("ode_loss", report.ode_loss);
    out.metric("closed_loss", report.closed_loss);
    out.metric("spectral_gap", report.spectral_gap);
    out.check(Check::at_most(
        "ode_product_error",
        report.ode_product_error,
        1e-5,
    ));
    out.check(Check::at_most(
        "ode_loss_minus_final_loss",
        (report.ode_loss - report.final_loss).abs(),
        1e-8,
    ));
    out.check(Check::at_most(
        "closed_product_error",
        report.closed_product_error,
        1e-8,
    ));
    out.check(Check::at_most("scalar_closed_vs_rk4", scalar_worst, 1e-6));
    Ok(out)
}
