use lora_flow::closed_form_trace::{full_rank_solution, TraceClosedForm};
use lora_flow::gradient_flow::{integrate_full_rank_flow, integrate_lora_flow, rk4, FlowConfig};
use lora_flow::lora_gd::{interpolate_affine, run_lora_gd, GdConfig};
use lora_flow::spectral_lowrank::{
    closed_product_matrix, eym_truncation, final_loss, flow_vs_eym, spectral_initialize, ScalarDyn,
};
use lora_flow::{Error, Matrix, Objective, RngState, ThetaPoint};

fn scalar_rk4(s0: f64, x0: f64, horizon: f64, h: f64) -> Vec<(f64, f64)> {
    let rhs = |_: f64, v: &Vec<f64>| {
        let res = s0 - v[0] * v[1];
        vec![res * v[1], res * v[0]]
    };
    let traj = rk4(rhs, &vec![0.0, x0], &FlowConfig::new(h, horizon, 1)).unwrap();
    traj.iter().map(|(t, v)| (t, v[0] * v[1])).collect()
}

#[test]
fn frozen_closed_form_values() {
    // a(t) = k1 / (2 g sinh(sqrt(k1)(t + k2)) + 4|c|) evaluated independently
    let cf = TraceClosedForm::new(
        &Matrix::identity(2),
        &Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap(),
    )
    .unwrap();
    assert!((cf.a_of_t(1.0) - 0.19523125724199847).abs() < 1e-15);

    // the scalar channel with s0 = 2, x0 = 1 is the same system: y x = s0 - a
    let d = ScalarDyn::new(2.0, 1.0).unwrap();
    assert!((d.product(0.5) - 1.0537255977750992).abs() < 1e-14);
    assert!((d.product(1.0) - 1.8047687427580015).abs() < 1e-14);
}

#[test]
fn trace_closed_form_tracks_rk4_for_both_signs() {
    let mut rng = RngState::new(31);
    for (n, r) in [(2, 1), (3, 2), (5, 2)] {
        for flip in [1.0, -1.0] {
            let w0 = rng.gaussian_matrix(n, n, 1.0).unwrap();
            // shift so that Tr W0 = 2 flip
            let shift = (flip * 2.0 - w0.trace().unwrap()) / n as f64;
            let w0 = w0.axpy(shift, &Matrix::identity(n)).unwrap();
            let x0 = rng.gaussian_matrix(r, n, 1.0).unwrap();
            let cf = TraceClosedForm::new(&w0, &x0).unwrap();
            let obj = Objective::trace_squared(w0).unwrap();
            let traj =
                integrate_lora_flow(&obj, &cf.initial(), &FlowConfig::new(1e-3, 2.0, 50)).unwrap();
            for (t, theta) in traj.iter() {
                let gap = theta.sub(&cf.closed_trajectory(t)).unwrap().norm();
                assert!(gap < 1e-8, "n={n} r={r} t={t} gap={gap}");
            }
        }
    }
}

#[test]
fn full_rank_closed_form_tracks_rk4() {
    let mut rng = RngState::new(4);
    let w0 = rng.gaussian_matrix(3, 3, 1.0).unwrap();
    let u0 = rng.gaussian_matrix(3, 3, 1.0).unwrap();
    let obj = Objective::full_rank(w0.clone()).unwrap();
    let traj = integrate_full_rank_flow(&obj, &u0, &FlowConfig::new(1e-3, 3.0, 100)).unwrap();
    for (t, u) in traj.iter() {
        assert!(
            (u - &full_rank_solution(&w0, &u0, t).unwrap()).max_abs() < 1e-11,
            "t={t}"
        );
    }
}

#[test]
fn gd_iterates_approach_flow_as_step_shrinks() {
    let mut rng = RngState::new(8);
    let w0 = rng.gaussian_matrix(3, 3, 1.0).unwrap();
    let theta0 =
        ThetaPoint::new(Matrix::zeros(3, 1), rng.gaussian_matrix(1, 3, 1.0).unwrap()).unwrap();
    let obj = Objective::trace_squared(w0).unwrap();
    let flow = integrate_lora_flow(&obj, &theta0, &FlowConfig::new(1e-4, 1.0, 10_000)).unwrap();
    let (_, end) = flow.last();
    let gaps: Vec<f64> = [0.02, 0.01, 0.005]
        .iter()
        .map(|&alpha| {
            let log = run_lora_gd(
                &obj,
                &theta0,
                &GdConfig::new(alpha, 0.5, 2, (1.0 / (2.0 * alpha)) as usize + 1),
            )
            .unwrap();
            interpolate_affine(&log, 1.0, &obj)
                .unwrap()
                .sub(end)
                .unwrap()
                .norm()
        })
        .collect();
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
}

#[test]
fn scalar_channel_matches_rk4_and_is_monotone() {
    for &(s0, x0) in &[(2.0, 1.0), (0.3, -0.05), (5.0, 2.5)] {
        let d = ScalarDyn::new(s0, x0).unwrap();
        let mut prev = 0.0;
        for (t, yx) in scalar_rk4(s0, x0, 3.0, 1e-3) {
            let closed = d.product(t);
            assert!((closed - yx).abs() < 1e-9, "s0={s0} t={t}");
            assert!(
                closed >= prev - 1e-15 * s0 && closed <= s0 * (1.0 + 1e-15),
                "t={t}"
            );
            prev = closed;
        }
    }
}

#[test]
fn zero_singular_value_channel_stays_at_zero() {
    assert!(scalar_rk4(0.0, 1.3, 2.0, 1e-2)
        .iter()
        .all(|&(_, yx)| yx == 0.0));
}

#[test]
fn channel_order_follows_singular_values_for_equal_initial_magnitude() {
    let ds: Vec<ScalarDyn> = [4.0, 2.5, 1.0, 0.2]
        .iter()
        .map(|&s| ScalarDyn::new(s, 0.3).unwrap())
        .collect();
    for i in 0..=100 {
        let t = i as f64 * 0.1;
        let p: Vec<f64> = ds.iter().map(|d| d.product(t)).collect();
        assert!(p.windows(2).all(|w| w[0] >= w[1]), "t={t} {p:?}");
    }
}

#[test]
fn rotated_factors_stay_diagonal_along_the_matrix_flow() {
    let w0 = RngState::new(12).gaussian_matrix(4, 3, 1.0).unwrap();
    let init = spectral_initialize(&w0, 2, 1.0, 3).unwrap();
    let obj = Objective::frobenius(w0).unwrap();
    let traj = integrate_lora_flow(
        &obj,
        &init.initial_theta(),
        &FlowConfig::new(1e-3, 5.0, 250),
    )
    .unwrap();
    let (u, v) = (&init.svd.u, &init.svd.v);
    for (t, theta) in traj.iter() {
        let y = &u.transpose() * &theta.b;
        let x = &theta.a * v;
        assert!(
            y.max_abs_off_diagonal() < 1e-10 && x.max_abs_off_diagonal() < 1e-10,
            "t={t}"
        );
        let closed = closed_product_matrix(&init, t);
        assert!((&theta.product() - &closed).max_abs() < 1e-6, "t={t}");
    }
}

#[test]
fn rank_assumption_boundary() {
    let w0 = Matrix::diag(&[3.0, 2.0, 1.0]);
    let cfg = FlowConfig::new(1e-3, 1.0, usize::MAX);
    assert!(matches!(
        flow_vs_eym(&w0, 3, 1.0, 0, &cfg),
        Err(Error::RankAssumption { rank: 3, r: 3 })
    ));
    let rep = flow_vs_eym(&w0, 2, 1.0, 0, &cfg).unwrap();
    assert!(rep.ode_product_error < 1e-6);
    assert!((rep.ode_loss - 0.5).abs() < 1e-8);
    assert_eq!(rep.spectral_gap, 1.0);
}

#[test]
fn truncation_of_random_matrix_matches_loss_identity() {
    let w0 = RngState::new(40).gaussian_matrix(5, 4, 1.0).unwrap();
    for r in 0..=4 {
        let direct = 0.5 * (&w0 - &eym_truncation(&w0, r).unwrap()).frobenius_norm_sq();
        assert!(
            (direct - final_loss(&w0, r).unwrap()).abs() < 1e-10,
            "r={r}"
        );
    }
}
