//! Derived values checked against independently coded references.

mod common;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use chancegame::augmented_lagrangian::al_quadratic_terms;
use chancegame::belief::{ekf_update, linearize_dynamics, linearize_measurement, precompute_covariances};
use chancegame::constraints::safety_margin_rho;
use chancegame::linalg::{fd_jacobian, FD_STEP};
use chancegame::model::{
    AdditiveMeasurement, CostModel, Dynamics, LinearDynamics, MeasurementModel, QuadraticCost, SpeedScaledMeasurement,
    UnicycleDynamics,
};
use chancegame::monte_carlo::simulate_trials;
use chancegame::special::{erf, inverse_erf};
use chancegame::{
    outer_solve, ControlSet, GameSpec, GaussianBelief, LinearizedConstraint, NoiseSpec, SolverConfig,
};

use common::*;

#[test]
fn inverse_erf_matches_bisection_at_point_eight() {
    // inverse_erf(y) = Phi^-1((1 + y) / 2) / sqrt(2)
    let oracle = bisection_quantile(0.9) / std::f64::consts::SQRT_2;
    let value = inverse_erf(0.8).unwrap();
    assert!((value - oracle).abs() < 1e-12, "{value} vs {oracle}");
    assert!((value - 0.906_193_8).abs() < 1e-7);
}

#[test]
fn inverse_erf_inverts_series_erf_at_one() {
    let y = series_erf(1.0);
    assert!((y - erf(1.0)).abs() < 1e-15);
    assert!((inverse_erf(y).unwrap() - 1.0).abs() < 1e-10);
}

#[test]
fn library_erf_agrees_with_series_oracle() {
    for i in -60..=60 {
        let x = i as f64 * 0.1;
        assert!((erf(x) - series_erf(x)).abs() < 1e-14, "x = {x}");
    }
}

#[test]
fn margin_scales_with_constraint_std() {
    let g = DVector::from_vec(vec![1.0, 0.0]);
    let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![0.25, 9.0]));
    let rho = safety_margin_rho(&g, &sigma, 0.9).unwrap();
    assert!((rho - 0.5 * bisection_quantile(0.9)).abs() < 1e-9);
    assert!((rho - 0.640_776).abs() < 1e-6);
}

/// Posterior of `x ~ N(m, S)` given `y = H x + V v`, `v ~ N(0, R)`.
fn gaussian_conditioning(
    m: &DVector<f64>,
    s: &DMatrix<f64>,
    h: &DMatrix<f64>,
    noise: &DMatrix<f64>,
    y: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let cross = s * h.transpose();
    let innovation = h * s * h.transpose() + noise;
    let inv = innovation.try_inverse().unwrap();
    (m + &cross * &inv * (y - h * m), s - &cross * inv * cross.transpose())
}

#[test]
fn ekf_update_is_exact_gaussian_conditioning() {
    let mut r = rng(11);
    for _ in 0..50 {
        let m = gaussian_vector(&mut r, 2);
        let s = random_spd(&mut r, 2, 0.1);
        let h = DMatrix::identity(2, 2) + gaussian_matrix(&mut r, 2, 2) * 0.3;
        let v = DMatrix::identity(2, 2) + gaussian_matrix(&mut r, 2, 2) * 0.2;
        let rv = random_spd(&mut r, 2, 0.2);
        let y = gaussian_vector(&mut r, 2);
        // Linear model: nominal terms vanish when x_bar = 0, h(0) = 0.
        let zero = DVector::zeros(2);
        let prior = GaussianBelief {
            mean: m.clone(),
            covariance: s.clone(),
        };
        let post = ekf_update(&prior, &y, &zero, &zero, &h, &v, &rv).unwrap();
        let (mean, cov) = gaussian_conditioning(&m, &s, &h, &(&v * &rv * v.transpose()), &y);
        assert!((&post.mean - mean).amax() < 1e-9);
        assert!((&post.covariance - cov).amax() < 1e-9);
    }
}

#[test]
fn ekf_update_matches_information_filter() {
    let mut r = rng(12);
    for _ in 0..50 {
        let n = 4;
        let m = gaussian_vector(&mut r, n);
        let s = random_spd(&mut r, n, 0.2);
        let h = gaussian_matrix(&mut r, 3, n);
        let rv = random_spd(&mut r, 3, 0.3);
        let y = gaussian_vector(&mut r, 3);
        let prior = GaussianBelief {
            mean: m.clone(),
            covariance: s.clone(),
        };
        let post = ekf_update(
            &prior,
            &y,
            &DVector::zeros(3),
            &DVector::zeros(n),
            &h,
            &DMatrix::identity(3, 3),
            &rv,
        )
        .unwrap();
        let s_inv = s.try_inverse().unwrap();
        let r_inv = rv.try_inverse().unwrap();
        let info = &s_inv + h.transpose() * &r_inv * &h;
        let cov = info.try_inverse().unwrap();
        let mean = &cov * (&s_inv * &m + h.transpose() * &r_inv * &y);
        assert!((&post.covariance - &cov).amax() < 1e-8);
        assert!((&post.mean - &mean).amax() < 1e-8);
    }
}

fn scalar_spec(a: f64, process: f64, measurement: f64, initial: f64, horizon: usize) -> GameSpec {
    let s = |v: f64| DMatrix::from_element(1, 1, v);
    GameSpec {
        horizon,
        dt: 0.1,
        dynamics: Arc::new(LinearDynamics::new(s(a), vec![s(1.0)]).unwrap()),
        measurement: Arc::new(AdditiveMeasurement { dim: 1 }),
        costs: vec![Arc::new(QuadraticCost {
            q: s(1.0),
            l: DVector::zeros(1),
            r: vec![s(1.0)],
            r_lin: vec![DVector::zeros(1)],
            constant: 0.0,
            terminal_q: s(1.0),
            terminal_l: DVector::zeros(1),
        })],
        constraints: Vec::new(),
        noise: NoiseSpec {
            process: s(process),
            measurement: s(measurement),
        },
        initial_belief: GaussianBelief::new(DVector::from_element(1, 1.0), s(initial)).unwrap(),
    }
}

#[test]
fn scalar_covariance_schedule_matches_hand_recursion() {
    let (a, q, rv, s0) = (0.9, 0.1, 0.2, 1.0);
    let spec = scalar_spec(a, q, rv, s0, 3);
    let controls = vec![ControlSet::new(vec![DVector::zeros(1)]).unwrap(); 3];
    let means: Vec<DVector<f64>> = (0..4).map(|k| DVector::from_element(1, a.powi(k))).collect();
    let schedule = precompute_covariances(&spec, &means, &controls).unwrap();
    let mut s = s0;
    assert_eq!(schedule.covariances[0][(0, 0)], s0);
    for k in 1..=3 {
        let prior = a * a * s + q;
        s = prior * rv / (prior + rv);
        assert!((schedule.covariances[k][(0, 0)] - s).abs() < 1e-12, "step {k}");
    }
    assert!(schedule.jittered_steps.is_empty());
}

#[test]
fn speed_scaled_noise_jacobian_for_mixed_speeds() {
    let model = SpeedScaledMeasurement { agents: 2 };
    let x = DVector::from_vec(vec![1.0, 2.0, 0.3, 2.0, -1.0, 4.0, -0.2, 0.5]);
    let (h, v) = linearize_measurement(&model, &x);
    assert_eq!(h, DMatrix::identity(8, 8));
    let mut expected = DMatrix::zeros(8, 8);
    for c in 0..4 {
        expected[(c, c)] = 2.0;
        expected[(4 + c, 4 + c)] = 0.5;
    }
    assert_eq!(v, expected);
    let zero = DVector::zeros(8);
    let fd = fd_jacobian(|w| model.measure(&x, w), &zero, FD_STEP);
    assert!((fd - expected).amax() < 1e-9);
}

#[test]
fn unicycle_jacobians_match_finite_differences_elementwise() {
    let dynamics = UnicycleDynamics::new(2);
    let mut r = rng(13);
    for _ in 0..50 {
        let x = DVector::from_fn(8, |i, _| match i % 4 {
            2 => r.random_range(-3.0..3.0),
            3 => r.random_range(0.0..10.0),
            _ => r.random_range(-20.0..20.0),
        });
        let u = ControlSet::new(vec![gaussian_vector(&mut r, 2), gaussian_vector(&mut r, 2)]).unwrap();
        let lin = linearize_dynamics(&dynamics, &x, &u, 0.15);
        let zero = DVector::zeros(8);
        let fa = fd_jacobian(|y| dynamics.step(y, &u, &zero, 0.15), &x, FD_STEP);
        assert!((&lin.a - fa).amax() < 1e-6);
        for j in 0..2 {
            let fb = fd_jacobian(
                |uj| {
                    let mut v = u.clone();
                    v.set(j, uj.clone());
                    dynamics.step(&x, &v, &zero, 0.15)
                },
                u.get(j),
                FD_STEP,
            );
            assert!((&lin.b[j] - fb).amax() < 1e-6);
        }
    }
}

#[test]
fn al_quadratic_expectation_matches_sampling() {
    let mut r = rng(14);
    let n = 4;
    let samples = 100_000;
    for (lambda, gate) in [(0.0, 10.0), (2.0, 10.0), (1.5, 0.0), (0.7, 50.0)] {
        let gradient = gaussian_vector(&mut r, n);
        let mean = gaussian_vector(&mut r, n);
        let cov = random_spd(&mut r, n, 0.05) * 0.2;
        let offset = -gradient.dot(&mean) + 0.3;
        let margin = safety_margin_rho(&gradient, &cov, 0.9).unwrap();
        let lc = LinearizedConstraint {
            gradient: gradient.clone(),
            offset,
            margin,
            step: 1,
            index: 0,
            probability: 0.9,
        };
        let terms = al_quadratic_terms(&lc, lambda, gate, &cov);
        let c = lc.surrogate_value(&mean);
        let expected = lambda * c + 0.5 * gate * c * c;
        let factor = cov.clone().cholesky().unwrap().l();
        let values: Vec<f64> = (0..samples)
            .map(|_| {
                let x = &mean + &factor * DVector::from_fn(n, |_, _| r.sample(StandardNormal));
                0.5 * x.dot(&(&terms.q * &x)) + terms.l.dot(&x) + terms.constant
            })
            .collect();
        let avg = values.iter().sum::<f64>() / samples as f64;
        let var = values.iter().map(|v| (v - avg).powi(2)).sum::<f64>() / (samples - 1) as f64;
        let se = (var / samples as f64).sqrt();
        assert!(
            (avg - expected).abs() <= 3.0 * se.max(1e-12),
            "lambda {lambda} gate {gate}: {avg} vs {expected} (se {se})"
        );
    }
}

/// One player steering a double integrator toward the origin.
fn single_agent_spec(process: f64, measurement: f64) -> (GameSpec, QuadraticCost) {
    let dt = 0.1;
    let a = DMatrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]);
    let b = DMatrix::from_column_slice(2, 1, &[0.5 * dt * dt, dt]);
    let cost = QuadraticCost {
        q: DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.1])),
        l: DVector::from_vec(vec![-0.5, 0.0]),
        r: vec![DMatrix::from_element(1, 1, 0.5)],
        r_lin: vec![DVector::from_element(1, 0.1)],
        constant: 0.0,
        terminal_q: DMatrix::from_diagonal(&DVector::from_vec(vec![5.0, 1.0])),
        terminal_l: DVector::from_vec(vec![-2.5, 0.0]),
    };
    let spec = GameSpec {
        horizon: 15,
        dt,
        dynamics: Arc::new(LinearDynamics::new(a, vec![b]).unwrap()),
        measurement: Arc::new(AdditiveMeasurement { dim: 2 }),
        costs: vec![Arc::new(cost.clone())],
        constraints: Vec::new(),
        noise: NoiseSpec {
            process: DMatrix::identity(2, 2) * process,
            measurement: DMatrix::identity(2, 2) * measurement,
        },
        initial_belief: GaussianBelief::new(
            DVector::from_vec(vec![3.0, -1.0]),
            DMatrix::identity(2, 2) * process.max(0.0),
        )
        .unwrap(),
    };
    (spec, cost)
}

#[test]
fn single_agent_solve_matches_lqr_closed_loop() {
    let (spec, cost) = single_agent_spec(0.01, 0.01);
    let solution = outer_solve(&spec, None, &SolverConfig::default()).unwrap();
    let lin = spec.dynamics.jacobians(&spec.initial_belief.mean, &ControlSet::zeros(&[1]), spec.dt);
    let horizon = spec.horizon;
    let (gains, ffs) = lqr_oracle(
        &vec![lin.a.clone(); horizon],
        &vec![lin.b[0].clone(); horizon],
        &vec![cost.q.clone(); horizon],
        &vec![cost.l.clone(); horizon],
        &vec![cost.r[0].clone(); horizon],
        &vec![cost.r_lin[0].clone(); horizon],
        &cost.terminal_q,
        &cost.terminal_l,
    );
    let mut x = spec.initial_belief.mean.clone();
    for k in 0..horizon {
        let u = -(&gains[k] * &x) - &ffs[k];
        assert!((&solution.trajectory.means[k] - &x).amax() < 1e-8, "state {k}");
        assert!((solution.trajectory.controls[k].get(0) - &u).amax() < 1e-8, "control {k}");
        assert!((&solution.policies[0].gains[k] - &gains[k]).amax() < 1e-8, "gain {k}");
        x = &lin.a * &x + &lin.b[0] * &u;
    }
    assert!((&solution.trajectory.means[horizon] - &x).amax() < 1e-8);
}

#[test]
fn closed_loop_state_covariance_matches_analytic_propagation() {
    let (spec, _) = single_agent_spec(0.02, 0.05);
    let solution = outer_solve(&spec, None, &SolverConfig::default()).unwrap();
    let trials = simulate_trials(&solution, &spec, 10_000, 77).unwrap();
    let horizon = spec.horizon;
    let lin = spec.dynamics.jacobians(&spec.initial_belief.mean, &ControlSet::zeros(&[1]), spec.dt);

    // Estimate deviation d = x_hat - x_bar obeys d' = (A - BP) d + K nu with
    // Cov(K nu) = prior - posterior; the estimation error has the filter
    // covariance and is independent of d.
    let mut posterior = spec.initial_belief.covariance.clone();
    let mut estimate_cov = DMatrix::zeros(2, 2);
    let mut predicted = vec![&estimate_cov + &posterior];
    for k in 0..horizon {
        let prior = &lin.a * &posterior * lin.a.transpose() + &spec.noise.process;
        let s = &prior + &spec.noise.measurement;
        let gain = &prior * s.try_inverse().unwrap();
        let next_post = (DMatrix::identity(2, 2) - &gain) * &prior;
        let closed = &lin.a - &lin.b[0] * &solution.policies[0].gains[k];
        estimate_cov = &closed * &estimate_cov * closed.transpose() + (&prior - &next_post);
        posterior = next_post;
        predicted.push(&estimate_cov + &posterior);
    }

    let n = trials.len() as f64;
    for k in [5, 10, horizon] {
        for c in 0..2 {
            let values: Vec<f64> = trials.iter().map(|t| t.states[k][c]).collect();
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let expected = predicted[k][(c, c)];
            let se = expected * (2.0 / (n - 1.0)).sqrt();
            assert!(
                (var - expected).abs() <= 3.0 * se,
                "step {k} coordinate {c}: {var} vs {expected} (se {se})"
            );
            let nominal = solution.trajectory.means[k][c];
            assert!((mean - nominal).abs() <= 3.0 * (expected / n).sqrt());
        }
    }
}

#[test]
fn lqg_filter_reference_matches_schedule() {
    let spec = lqg_spec();
    let solution = outer_solve(&spec, None, &SolverConfig::default()).unwrap();
    let (_, posterior) = lqg_filter_covariances(&spec);
    for (k, cov) in solution.trajectory.covariances.iter().enumerate() {
        assert!((cov - &posterior[k]).amax() < 1e-12, "step {k}");
    }
    // Value of the deterministic game equals the nominal cost.
    let (stages, terminal) = lqg_stages();
    let lq = chancegame::lq_game::solve_lq_game_detailed(&stages, &terminal).unwrap();
    for (i, cost) in lqg_costs().iter().enumerate() {
        let nominal = &solution.trajectory;
        let mut total = cost.terminal(i, &nominal.means[spec.horizon]);
        for k in 0..spec.horizon {
            total += cost.running(i, &nominal.means[k], &nominal.controls[k]);
        }
        let value = lq.values[0][i].eval(&spec.initial_belief.mean);
        assert!((total - value).abs() < 1e-8 * value.abs().max(1.0), "{total} vs {value}");
    }
}
