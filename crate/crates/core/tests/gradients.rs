use lora_flow::{Matrix, Objective, RngState, ThetaPoint};

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-6;

fn perturb(m: &Matrix, i: usize, j: usize, h: f64) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |a, b| {
        m.get(a, b) + if (a, b) == (i, j) { h } else { 0.0 }
    })
}

/// Central differences of `f` over every entry of `m`.
fn fd(m: &Matrix, f: impl Fn(&Matrix) -> f64) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |i, j| {
        (f(&perturb(m, i, j, FD_STEP)) - f(&perturb(m, i, j, -FD_STEP))) / (2.0 * FD_STEP)
    })
}

fn rel_err(analytic: &Matrix, numeric: &Matrix) -> f64 {
    (analytic - numeric).frobenius_norm() / analytic.frobenius_norm().max(1.0)
}

fn low_rank_gap(obj: &Objective, t: &ThetaPoint) -> f64 {
    let g = obj.grad(t).unwrap();
    let fb = fd(&t.b, |b| {
        obj.value(&ThetaPoint::new(b.clone(), t.a.clone()).unwrap())
            .unwrap()
    });
    let fa = fd(&t.a, |a| {
        obj.value(&ThetaPoint::new(t.b.clone(), a.clone()).unwrap())
            .unwrap()
    });
    rel_err(&g.b, &fb).max(rel_err(&g.a, &fa))
}

#[test]
fn low_rank_gradients_match_finite_differences() {
    let mut rng = RngState::new(2024);
    for &(n, r, m) in &[(2, 1, 2), (4, 2, 4), (5, 3, 5), (3, 1, 6)] {
        for _ in 0..5 {
            let w0 = rng.gaussian_matrix(n, m, 1.0).unwrap();
            let t = ThetaPoint::new(
                rng.gaussian_matrix(n, r, 0.7).unwrap(),
                rng.gaussian_matrix(r, m, 0.7).unwrap(),
            )
            .unwrap();
            let fro = Objective::frobenius(w0.clone()).unwrap();
            assert!(low_rank_gap(&fro, &t) < FD_TOL, "frobenius {n}x{r}x{m}");
            if n == m {
                let tr = Objective::trace_squared(w0).unwrap();
                assert!(low_rank_gap(&tr, &t) < FD_TOL, "trace {n}x{r}");
            }
        }
    }
}

#[test]
fn full_rank_gradient_matches_finite_differences() {
    let mut rng = RngState::new(77);
    for n in 1..6 {
        let obj = Objective::full_rank(rng.gaussian_matrix(n, n, 1.0).unwrap()).unwrap();
        let w = rng.gaussian_matrix(n, n, 1.0).unwrap();
        let numeric = fd(&w, |x| obj.value(x).unwrap());
        assert!(
            rel_err(&obj.grad_full(&w).unwrap(), &numeric) < FD_TOL,
            "n = {n}"
        );
    }
}

#[test]
fn gradient_at_minimizer_is_zero() {
    // W0 = I, B A with Tr(BA) = 2 has zero residual
    let obj = Objective::trace_squared(Matrix::identity(2)).unwrap();
    let t = ThetaPoint::new(
        Matrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap(),
        Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap(),
    )
    .unwrap();
    let g = obj.grad(&t).unwrap();
    assert_eq!(g.norm(), 0.0);
    assert_eq!(obj.value(&t).unwrap(), 0.0);
}
