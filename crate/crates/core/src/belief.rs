//! Extended Kalman filter belief propagation about a nominal trajectory.
//!
//! The covariance recursion depends only on the nominal (through the
//! Jacobians), never on realized controls or measurements, so the whole
//! schedule can be computed ahead of a solve.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::lq_game::{apply_policy, AffineFeedbackPolicy};
use crate::linalg::{min_eigenvalue, symmetrize};
use crate::model::{ControlSet, Dynamics, DynamicsJacobians, GameSpec, GaussianBelief, MeasurementModel};

/// Jitter added to an innovation covariance whose smallest eigenvalue is
/// not above this value.
pub const INNOVATION_JITTER: f64 = 1e-12;

/// Dynamics and measurement Jacobians for one transition `k -> k+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearization {
    pub a: DMatrix<f64>,
    pub b: Vec<DMatrix<f64>>,
    pub w: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

/// Nominal belief trajectory: `L + 1` means and covariances, `L` controls.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefTrajectory {
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    pub controls: Vec<ControlSet>,
}

impl BeliefTrajectory {
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    /// Largest Euclidean distance between corresponding means.
    pub fn max_mean_change(&self, other: &BeliefTrajectory) -> f64 {
        self.means
            .iter()
            .zip(&other.means)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Covariance schedule plus the steps at which jitter was needed.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSchedule {
    pub covariances: Vec<DMatrix<f64>>,
    pub jittered_steps: Vec<usize>,
}

pub fn linearize_dynamics(
    dynamics: &dyn Dynamics,
    nominal_state: &DVector<f64>,
    nominal_controls: &ControlSet,
    dt: f64,
) -> DynamicsJacobians {
    dynamics.jacobians(nominal_state, nominal_controls, dt)
}

pub fn linearize_measurement(
    measurement: &dyn MeasurementModel,
    nominal_next_state: &DVector<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    measurement.jacobians(nominal_next_state)
}

/// Jacobians along a nominal; entry `k` covers the transition to `k + 1`.
pub fn linearize_trajectory(spec: &GameSpec, means: &[DVector<f64>], controls: &[ControlSet]) -> Vec<Linearization> {
    controls
        .iter()
        .enumerate()
        .map(|(k, u)| {
            let DynamicsJacobians { a, b, w } = linearize_dynamics(spec.dynamics.as_ref(), &means[k], u, spec.dt);
            let (h, v) = linearize_measurement(spec.measurement.as_ref(), &means[k + 1]);
            Linearization { a, b, w, h, v }
        })
        .collect()
}

fn predict_covariance(covariance: &DMatrix<f64>, lin: &Linearization, process: &DMatrix<f64>) -> DMatrix<f64> {
    let mut prior = &lin.a * covariance * lin.a.transpose() + &lin.w * process * lin.w.transpose();
    symmetrize(&mut prior);
    prior
}

/// Prior belief for step `k + 1` from the linearized dynamics about
/// `(nominal_state, nominal_controls) -> nominal_next`.
pub fn ekf_predict(
    belief: &GaussianBelief,
    nominal_state: &DVector<f64>,
    nominal_next: &DVector<f64>,
    nominal_controls: &ControlSet,
    controls: &ControlSet,
    lin: &Linearization,
    process_noise: &DMatrix<f64>,
) -> GaussianBelief {
    let mut mean = nominal_next + &lin.a * (&belief.mean - nominal_state);
    for ((bj, uj), ubar) in lin.b.iter().zip(controls.iter()).zip(nominal_controls.iter()) {
        mean += bj * (uj - ubar);
    }
    GaussianBelief {
        mean,
        covariance: predict_covariance(&belief.covariance, lin, process_noise),
    }
}

/// Kalman gain and Joseph-form posterior covariance.
struct Correction {
    gain: DMatrix<f64>,
    covariance: DMatrix<f64>,
    jittered: bool,
}

fn correct(prior: &DMatrix<f64>, h: &DMatrix<f64>, v: &DMatrix<f64>, measurement_noise: &DMatrix<f64>) -> Result<Correction> {
    let mut noise = v * measurement_noise * v.transpose();
    symmetrize(&mut noise);
    let mut innovation = h * prior * h.transpose() + &noise;
    symmetrize(&mut innovation);
    let mut jittered = false;
    if min_eigenvalue(&innovation) <= INNOVATION_JITTER {
        let dim = innovation.nrows();
        innovation += DMatrix::identity(dim, dim) * INNOVATION_JITTER;
        jittered = true;
    }
    let chol = innovation
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("innovation covariance is not positive definite".into()))?;
    let gain = chol.solve(&(h * prior)).transpose();
    let n = prior.nrows();
    let reduction = DMatrix::identity(n, n) - &gain * h;
    let mut covariance = &reduction * prior * reduction.transpose() + &gain * &noise * gain.transpose();
    symmetrize(&mut covariance);
    Ok(Correction {
        gain,
        covariance,
        jittered,
    })
}

/// Measurement update of an EKF prior.
///
/// `nominal_measurement` is `h(x_bar_{k+1}, 0)` and `nominal_next` the
/// nominal state the Jacobians were taken at.
pub fn ekf_update(
    prior: &GaussianBelief,
    measurement: &DVector<f64>,
    nominal_measurement: &DVector<f64>,
    nominal_next: &DVector<f64>,
    h: &DMatrix<f64>,
    v: &DMatrix<f64>,
    measurement_noise: &DMatrix<f64>,
) -> Result<GaussianBelief> {
    check_dim("measurement", h.nrows(), measurement.len())?;
    let c = correct(&prior.covariance, h, v, measurement_noise)?;
    let predicted = nominal_measurement + h * (&prior.mean - nominal_next);
    Ok(GaussianBelief {
        mean: &prior.mean + &c.gain * (measurement - predicted),
        covariance: c.covariance,
    })
}

/// Kalman gain for a prior covariance; exposed for closed-loop simulation.
pub(crate) fn kalman_gain(
    prior: &DMatrix<f64>,
    h: &DMatrix<f64>,
    v: &DMatrix<f64>,
    measurement_noise: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let c = correct(prior, h, v, measurement_noise)?;
    Ok((c.gain, c.covariance))
}

/// Deterministic covariance schedule along a nominal trajectory.
pub fn precompute_covariances(
    spec: &GameSpec,
    means: &[DVector<f64>],
    controls: &[ControlSet],
) -> Result<CovarianceSchedule> {
    check_dim("nominal means", controls.len() + 1, means.len())?;
    let lins = linearize_trajectory(spec, means, controls);
    schedule_from_linearizations(spec, &lins)
}

pub(crate) fn schedule_from_linearizations(spec: &GameSpec, lins: &[Linearization]) -> Result<CovarianceSchedule> {
    let mut covariances = Vec::with_capacity(lins.len() + 1);
    let mut jittered_steps = Vec::new();
    let mut current = spec.initial_belief.covariance.clone();
    covariances.push(current.clone());
    for (k, lin) in lins.iter().enumerate() {
        let prior = predict_covariance(&current, lin, &spec.noise.process);
        let c = correct(&prior, &lin.h, &lin.v, &spec.noise.measurement)
            .map_err(|e| Error::Numerical(format!("covariance update at step {}: {e}", k + 1)))?;
        if c.jittered {
            jittered_steps.push(k + 1);
        }
        current = c.covariance;
        covariances.push(current.clone());
    }
    Ok(CovarianceSchedule {
        covariances,
        jittered_steps,
    })
}

/// Forward simulation with zero process and measurement noise under the
/// given policies, relative to the previous nominal. The mean follows the
/// nonlinear dynamics exactly; covariances are recomputed on the result.
pub fn rollout_zero_noise(
    spec: &GameSpec,
    previous: &BeliefTrajectory,
    policies: &[AffineFeedbackPolicy],
) -> Result<BeliefTrajectory> {
    let (means, controls) = rollout_means(spec, previous, policies)?;
    let schedule = precompute_covariances(spec, &means, &controls)?;
    Ok(BeliefTrajectory {
        means,
        covariances: schedule.covariances,
        controls,
    })
}

/// Mean/control part of [`rollout_zero_noise`].
pub(crate) fn rollout_means(
    spec: &GameSpec,
    previous: &BeliefTrajectory,
    policies: &[AffineFeedbackPolicy],
) -> Result<(Vec<DVector<f64>>, Vec<ControlSet>)> {
    let horizon = previous.horizon();
    check_dim("number of policies", spec.players(), policies.len())?;
    for p in policies {
        check_dim("policy horizon", horizon, p.horizon())?;
    }
    let zero_noise = DVector::zeros(spec.dynamics.noise_dim());
    let mut means = Vec::with_capacity(horizon + 1);
    let mut controls = Vec::with_capacity(horizon);
    let mut x = previous.means[0].clone();
    for k in 0..horizon {
        let u = ControlSet::new(
            policies
                .iter()
                .enumerate()
                .map(|(i, p)| apply_policy(p, k, &x, &previous.means[k], previous.controls[k].get(i)))
                .collect(),
        )?;
        let next = spec.dynamics.step(&x, &u, &zero_noise, spec.dt);
        means.push(std::mem::replace(&mut x, next));
        controls.push(u);
    }
    means.push(x);
    Ok((means, controls))
}

/// Nominal trajectory obtained by applying open-loop controls from the
/// initial mean.
pub fn initial_nominal(spec: &GameSpec, controls: Vec<ControlSet>) -> Result<BeliefTrajectory> {
    check_dim("initial controls", spec.horizon, controls.len())?;
    let zero_noise = DVector::zeros(spec.dynamics.noise_dim());
    let dims = spec.control_dims();
    let mut means = vec![spec.initial_belief.mean.clone()];
    for u in &controls {
        u.check_dims(&dims)?;
        let next = spec.dynamics.step(means.last().unwrap(), u, &zero_noise, spec.dt);
        means.push(next);
    }
    let schedule = precompute_covariances(spec, &means, &controls)?;
    Ok(BeliefTrajectory {
        means,
        covariances: schedule.covariances,
        controls,
    })
}
