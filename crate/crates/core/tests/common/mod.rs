//! Shared fixtures and independent reference implementations for the
//! integration tests.

#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use chancegame::lq_game::{LQGameStage, PlayerQuadratic, TerminalQuadratic};
use chancegame::model::{AdditiveMeasurement, CostModel, LinearDynamics, QuadraticCost};
use chancegame::{ControlSet, GameSpec, GaussianBelief, NoiseSpec};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.sample(StandardNormal))
}

/// Random symmetric positive definite matrix `M M' + floor I`.
pub fn random_spd(rng: &mut ChaCha8Rng, dim: usize, floor: f64) -> DMatrix<f64> {
    let m = gaussian_matrix(rng, dim, dim);
    &m * m.transpose() + DMatrix::identity(dim, dim) * floor
}

// ---------------------------------------------------------------------------
// Synthetic linear-Gaussian two-player game: two double integrators on a
// line, each pushing its own velocity.

pub const LQG_DT: f64 = 0.1;
pub const LQG_HORIZON: usize = 10;

pub fn lqg_dynamics() -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
    let dt = LQG_DT;
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(4, 4, &[
        1.0, dt, 0.0, 0.0,
        0.0, 1.0, 0.0, 0.0,
        0.0, 0.0, 1.0, dt,
        0.0, 0.0, 0.0, 1.0,
    ]);
    let b1 = DMatrix::from_column_slice(4, 1, &[0.0, dt, 0.0, 0.0]);
    let b2 = DMatrix::from_column_slice(4, 1, &[0.0, 0.0, 0.0, dt]);
    (a, vec![b1, b2])
}

/// Player `i` tracks its own target while keeping a preferred gap to the
/// other agent; small cross terms on the other player's control.
pub fn lqg_costs() -> Vec<QuadraticCost> {
    let target = [2.0, -1.0];
    let gap_weight = [0.5, 0.8];
    (0..2)
        .map(|i| {
            let (own, other) = (2 * i, 2 * (1 - i));
            let mut q = DMatrix::zeros(4, 4);
            let mut l = DVector::zeros(4);
            q[(own, own)] += 1.0;
            l[own] -= target[i];
            q[(own + 1, own + 1)] += 0.2;
            // gap_weight * (p_own - p_other - 1)^2 / 2 expanded
            let w = gap_weight[i];
            q[(own, own)] += w;
            q[(other, other)] += w;
            q[(own, other)] -= w;
            q[(other, own)] -= w;
            l[own] -= w;
            l[other] += w;
            let mut r = vec![DMatrix::from_element(1, 1, 0.1); 2];
            r[i] = DMatrix::from_element(1, 1, 1.0);
            let mut r_lin = vec![DVector::zeros(1); 2];
            r_lin[i] = DVector::from_element(1, 0.05);
            QuadraticCost {
                terminal_q: &q * 3.0,
                terminal_l: &l * 3.0,
                q,
                l,
                r,
                r_lin,
                constant: 0.0,
            }
        })
        .collect()
}

pub fn lqg_spec() -> GameSpec {
    let (a, b) = lqg_dynamics();
    GameSpec {
        horizon: LQG_HORIZON,
        dt: LQG_DT,
        dynamics: Arc::new(LinearDynamics::new(a, b).unwrap()),
        measurement: Arc::new(AdditiveMeasurement { dim: 4 }),
        costs: lqg_costs().into_iter().map(|c| Arc::new(c) as Arc<dyn CostModel>).collect(),
        constraints: Vec::new(),
        noise: NoiseSpec::isotropic(4, 4, 0.05),
        initial_belief: GaussianBelief::new(
            DVector::from_vec(vec![0.0, 0.5, 1.0, -0.5]),
            DMatrix::identity(4, 4) * 0.01,
        )
        .unwrap(),
    }
}

/// LQ stages of the synthetic game in absolute coordinates.
pub fn lqg_stages() -> (Vec<LQGameStage>, Vec<TerminalQuadratic>) {
    let (a, b) = lqg_dynamics();
    let costs = lqg_costs();
    let stage = LQGameStage {
        a,
        b,
        players: costs
            .iter()
            .map(|c| PlayerQuadratic {
                q: c.q.clone(),
                l: c.l.clone(),
                r: c.r.clone(),
                r_lin: c.r_lin.clone(),
                constant: c.constant,
            })
            .collect(),
    };
    let terminal = costs
        .iter()
        .map(|c| TerminalQuadratic {
            q: c.terminal_q.clone(),
            l: c.terminal_l.clone(),
            constant: 0.0,
        })
        .collect();
    (vec![stage; LQG_HORIZON], terminal)
}

/// Kalman filter covariances for the synthetic game: `(prior_{k+1},
/// posterior_k)` for `k = 0..L`, computed with the plain textbook update.
pub fn lqg_filter_covariances(spec: &GameSpec) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let (a, _) = lqg_dynamics();
    let n = spec.state_dim();
    let mut posterior = vec![spec.initial_belief.covariance.clone()];
    let mut prior = vec![DMatrix::zeros(n, n)];
    for k in 0..spec.horizon {
        let p = &a * &posterior[k] * a.transpose() + &spec.noise.process;
        let s = &p + &spec.noise.measurement;
        let gain = &p * s.try_inverse().unwrap();
        let post = (DMatrix::identity(n, n) - &gain) * &p;
        prior.push(p);
        posterior.push(0.5 * (&post + post.transpose()));
    }
    (prior, posterior)
}

pub fn quadratic_running(cost: &QuadraticCost, x: &DVector<f64>, u: &[DVector<f64>]) -> f64 {
    cost.running(0, x, &ControlSet::new(u.to_vec()).unwrap())
}

// ---------------------------------------------------------------------------
// Reference solvers.

/// Affine LQR by the textbook Riccati recursion; policy `u = -P x - a`.
pub fn lqr_oracle(
    a: &[DMatrix<f64>],
    b: &[DMatrix<f64>],
    q: &[DMatrix<f64>],
    l: &[DVector<f64>],
    r: &[DMatrix<f64>],
    r_lin: &[DVector<f64>],
    qf: &DMatrix<f64>,
    lf: &DVector<f64>,
) -> (Vec<DMatrix<f64>>, Vec<DVector<f64>>) {
    let horizon = a.len();
    let mut s = qf.clone();
    let mut sv = lf.clone();
    let mut gains = vec![DMatrix::zeros(0, 0); horizon];
    let mut ffs = vec![DVector::zeros(0); horizon];
    for k in (0..horizon).rev() {
        let m = &r[k] + b[k].transpose() * &s * &b[k];
        let m_inv = m.try_inverse().expect("positive definite control curvature");
        let p = &m_inv * b[k].transpose() * &s * &a[k];
        let alpha = &m_inv * (b[k].transpose() * &sv + &r_lin[k]);
        let closed = &a[k] - &b[k] * &p;
        let s_new = &q[k] + p.transpose() * &r[k] * &p + closed.transpose() * &s * &closed;
        let sv_new = &l[k] + p.transpose() * &r[k] * &alpha - p.transpose() * &r_lin[k]
            + closed.transpose() * (&sv - &s * &b[k] * &alpha);
        s = 0.5 * (&s_new + s_new.transpose());
        sv = sv_new;
        gains[k] = p;
        ffs[k] = alpha;
    }
    (gains, ffs)
}

/// Standard normal CDF from a Taylor series of erf (|x| small) or a
/// continued fraction for erfc (|x| large).
pub fn series_normal_cdf(z: f64) -> f64 {
    let x = z / std::f64::consts::SQRT_2;
    0.5 * (1.0 + series_erf(x))
}

pub fn series_erf(x: f64) -> f64 {
    if x.abs() > 3.0 {
        // Lentz continued fraction for erfc.
        let ax = x.abs();
        let mut f = ax;
        let mut c = ax;
        let mut d = 0.0;
        let tiny = 1e-300;
        for n in 1..200 {
            let an = n as f64 / 2.0;
            d = ax + an * d;
            if d.abs() < tiny {
                d = tiny;
            }
            d = 1.0 / d;
            c = ax + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            let delta = c * d;
            f *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        let erfc = (-ax * ax).exp() / (f * std::f64::consts::PI.sqrt());
        return x.signum() * (1.0 - erfc);
    }
    // erf(x) = 2/sqrt(pi) * exp(-x^2) * sum 2^n x^(2n+1) / (1*3*...*(2n+1))
    let mut term = x;
    let mut sum = x;
    for n in 1..400 {
        term *= 2.0 * x * x / (2 * n + 1) as f64;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    2.0 / std::f64::consts::PI.sqrt() * (-x * x).exp() * sum
}

/// `z` with `series_normal_cdf(z) = p`, by bisection.
pub fn bisection_quantile(p: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if series_normal_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
