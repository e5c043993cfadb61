//! Closed-loop Monte Carlo evaluation of a solved game.
//!
//! Each trial samples an initial state from the initial belief, then
//! alternates: feedback on the filtered estimate, noisy true dynamics, a
//! noisy joint measurement and an EKF correction about the nominal. The
//! filter gains depend only on the nominal, so they are computed once and
//! shared by every trial.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief::{kalman_gain, linearize_trajectory, BeliefTrajectory, Linearization};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{sampling_factor, symmetrize};
use crate::lq_game::{apply_policy, AffineFeedbackPolicy};
use crate::model::{ControlSet, GameSpec};
use crate::solver::Solution;

const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, Copy)]
enum Channel {
    Initial = 0,
    Process = 1,
    Measurement = 2,
}

/// Standard-normal vector drawn from the stream keyed by `(step, channel)`
/// of the generator seeded with `seed`.
fn standard_normal(seed: u64, step: usize, channel: Channel, dim: usize) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((step as u64) << 2) | channel as u64);
    DVector::from_iterator(dim, (0..dim).map(|_| StandardNormal.sample(&mut rng)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    /// True states `x_0..x_L`.
    pub states: Vec<Vec<f64>>,
    /// Filtered means `x_hat_0..x_hat_L`.
    pub estimates: Vec<Vec<f64>>,
    /// Applied stacked controls `u_0..u_{L-1}`.
    pub controls: Vec<Vec<f64>>,
    /// Largest true constraint value over all active (step, constraint) pairs.
    pub max_violation: f64,
    pub satisfied: bool,
    pub costs: Vec<f64>,
}

/// Everything a trial needs that does not depend on the noise draw.
#[derive(Debug, Clone)]
pub struct ClosedLoopModel {
    nominal: BeliefTrajectory,
    policies: Vec<AffineFeedbackPolicy>,
    linearizations: Vec<Linearization>,
    gains: Vec<DMatrix<f64>>,
    nominal_measurements: Vec<DVector<f64>>,
    initial_factor: DMatrix<f64>,
    process_factor: DMatrix<f64>,
    measurement_factor: DMatrix<f64>,
}

impl ClosedLoopModel {
    pub fn from_solution(solution: &Solution, spec: &GameSpec) -> Result<Self> {
        Self::new(&solution.trajectory, &solution.policies, spec)
    }

    pub fn new(nominal: &BeliefTrajectory, policies: &[AffineFeedbackPolicy], spec: &GameSpec) -> Result<Self> {
        check_dim("solution horizon", spec.horizon, nominal.horizon())?;
        check_dim("nominal states", spec.horizon + 1, nominal.means.len())?;
        for mean in &nominal.means {
            check_dim("nominal state dimension", spec.state_dim(), mean.len())?;
        }
        check_dim("number of policies", spec.players(), policies.len())?;
        for p in policies {
            check_dim("policy horizon", spec.horizon, p.horizon())?;
        }
        let linearizations = linearize_trajectory(spec, &nominal.means, &nominal.controls);
        let zero_v = DVector::zeros(spec.measurement.noise_dim());
        let mut gains = Vec::with_capacity(spec.horizon);
        let mut nominal_measurements = Vec::with_capacity(spec.horizon);
        let mut covariance = spec.initial_belief.covariance.clone();
        for (k, lin) in linearizations.iter().enumerate() {
            let mut prior = &lin.a * &covariance * lin.a.transpose() + &lin.w * &spec.noise.process * lin.w.transpose();
            symmetrize(&mut prior);
            let (gain, posterior) = kalman_gain(&prior, &lin.h, &lin.v, &spec.noise.measurement)?;
            gains.push(gain);
            covariance = posterior;
            nominal_measurements.push(spec.measurement.measure(&nominal.means[k + 1], &zero_v));
        }
        Ok(ClosedLoopModel {
            nominal: nominal.clone(),
            policies: policies.to_vec(),
            linearizations,
            gains,
            nominal_measurements,
            initial_factor: sampling_factor(&spec.initial_belief.covariance),
            process_factor: sampling_factor(&spec.noise.process),
            measurement_factor: sampling_factor(&spec.noise.measurement),
        })
    }
}

/// One closed-loop trial; deterministic in `seed`.
pub fn simulate_closed_loop(solution: &Solution, spec: &GameSpec, seed: u64) -> Result<TrialResult> {
    let model = ClosedLoopModel::from_solution(solution, spec)?;
    simulate_with_model(&model, spec, seed)
}

pub fn simulate_with_model(model: &ClosedLoopModel, spec: &GameSpec, seed: u64) -> Result<TrialResult> {
    let nominal = &model.nominal;
    let horizon = spec.horizon;
    let n = spec.state_dim();
    let players = spec.players();

    let z0 = standard_normal(seed, 0, Channel::Initial, n);
    let mut x = &spec.initial_belief.mean + &model.initial_factor * z0;
    let mut estimate = spec.initial_belief.mean.clone();
    let mut states = vec![x.clone()];
    let mut estimates = vec![estimate.clone()];
    let mut controls = Vec::with_capacity(horizon);
    let mut costs = vec![0.0; players];

    for k in 0..horizon {
        let u = ControlSet::new(
            model
                .policies
                .iter()
                .enumerate()
                .map(|(i, p)| apply_policy(p, k, &estimate, &nominal.means[k], nominal.controls[k].get(i)))
                .collect(),
        )?;
        for (i, c) in costs.iter_mut().enumerate() {
            *c += spec.costs[i].running(i, &x, &u);
        }

        let w = &model.process_factor * standard_normal(seed, k, Channel::Process, model.process_factor.ncols());
        x = spec.dynamics.step(&x, &u, &w, spec.dt);
        let v = &model.measurement_factor
            * standard_normal(seed, k, Channel::Measurement, model.measurement_factor.ncols());
        let y = spec.measurement.measure(&x, &v);

        let lin = &model.linearizations[k];
        let mut prior = &nominal.means[k + 1] + &lin.a * (&estimate - &nominal.means[k]);
        for (j, bj) in lin.b.iter().enumerate() {
            prior += bj * (u.get(j) - nominal.controls[k].get(j));
        }
        let predicted = &model.nominal_measurements[k] + &lin.h * (&prior - &nominal.means[k + 1]);
        estimate = &prior + &model.gains[k] * (y - predicted);

        if !x.iter().chain(estimate.iter()).all(|v| v.is_finite()) {
            return Err(Error::Numerical(format!("closed-loop state diverged at step {}", k + 1)));
        }
        states.push(x.clone());
        estimates.push(estimate.clone());
        controls.push(u.stacked().iter().copied().collect());
    }
    for (i, c) in costs.iter_mut().enumerate() {
        *c += spec.costs[i].terminal(i, &x);
    }

    let max_violation = max_true_violation(spec, &states);
    Ok(TrialResult {
        seed,
        states: states.iter().map(|s| s.iter().copied().collect()).collect(),
        estimates: estimates.iter().map(|s| s.iter().copied().collect()).collect(),
        controls,
        max_violation,
        satisfied: max_violation <= 0.0,
        costs,
    })
}

/// Largest nonlinear constraint value over every active step; negative
/// infinity without constraints.
pub fn max_true_violation(spec: &GameSpec, states: &[DVector<f64>]) -> f64 {
    let horizon = states.len().saturating_sub(1);
    spec.constraints
        .iter()
        .flat_map(|c| c.steps(horizon).map(move |k| c.value(&states[k])))
        .fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` increasing edges; the last bin is closed.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn from_values(values: &[f64], bins: usize) -> Self {
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        let (mut lo, mut hi) = finite
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if finite.is_empty() {
            (lo, hi) = (-1.0, 0.0);
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|b| lo + width * b as f64).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let bin = if v.is_finite() {
                (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1)
            } else {
                0
            };
            counts[bin] += 1;
        }
        Histogram { edges, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub seed: u64,
    pub max_violation: f64,
    pub satisfied: bool,
    pub costs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub trials: usize,
    pub satisfied: usize,
    pub satisfaction_rate: f64,
    pub histogram: Histogram,
    pub cost_mean: Vec<f64>,
    pub cost_std: Vec<f64>,
    pub results: Vec<TrialSummary>,
}

impl MonteCarloReport {
    pub fn from_trials(trials: &[TrialResult]) -> Result<Self> {
        if trials.is_empty() {
            return Err(Error::InvalidInput("a report needs at least one trial".into()));
        }
        let count = trials.len();
        let satisfied = trials.iter().filter(|t| t.satisfied).count();
        let players = trials[0].costs.len();
        let mean: Vec<f64> = (0..players)
            .map(|i| trials.iter().map(|t| t.costs[i]).sum::<f64>() / count as f64)
            .collect();
        let std = (0..players)
            .map(|i| {
                if count < 2 {
                    return 0.0;
                }
                let ss: f64 = trials.iter().map(|t| (t.costs[i] - mean[i]).powi(2)).sum();
                (ss / (count - 1) as f64).sqrt()
            })
            .collect();
        let violations: Vec<f64> = trials.iter().map(|t| t.max_violation).collect();
        Ok(MonteCarloReport {
            trials: count,
            satisfied,
            satisfaction_rate: satisfied as f64 / count as f64,
            histogram: Histogram::from_values(&violations, HISTOGRAM_BINS),
            cost_mean: mean,
            cost_std: std,
            results: trials
                .iter()
                .map(|t| TrialSummary {
                    seed: t.seed,
                    max_violation: t.max_violation,
                    satisfied: t.satisfied,
                    costs: t.costs.clone(),
                })
                .collect(),
        })
    }
}

/// Full results of `n` trials seeded `base_seed..base_seed + n`, in seed order.
pub fn simulate_trials(solution: &Solution, spec: &GameSpec, n: usize, base_seed: u64) -> Result<Vec<TrialResult>> {
    simulate_model_trials(&ClosedLoopModel::from_solution(solution, spec)?, spec, n, base_seed)
}

pub fn simulate_model_trials(
    model: &ClosedLoopModel,
    spec: &GameSpec,
    n: usize,
    base_seed: u64,
) -> Result<Vec<TrialResult>> {
    if n == 0 {
        return Err(Error::InvalidInput("trial count must be at least 1".into()));
    }
    (0..n as u64)
        .into_par_iter()
        .map(|t| simulate_with_model(model, spec, base_seed.wrapping_add(t)))
        .collect()
}

pub fn run_trials(solution: &Solution, spec: &GameSpec, n: usize, base_seed: u64) -> Result<MonteCarloReport> {
    MonteCarloReport::from_trials(&simulate_trials(solution, spec, n, base_seed)?)
}

pub fn run_model_trials(model: &ClosedLoopModel, spec: &GameSpec, n: usize, base_seed: u64) -> Result<MonteCarloReport> {
    MonteCarloReport::from_trials(&simulate_model_trials(model, spec, n, base_seed)?)
}
