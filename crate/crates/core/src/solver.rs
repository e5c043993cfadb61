//! Iterative LQ game solver with an augmented-Lagrangian outer loop.
//!
//! The outer loop linearizes the chance constraints about the current
//! nominal belief trajectory, updates multipliers and penalties, and hands
//! the resulting unconstrained game to the inner loop. The inner loop
//! repeatedly linearizes the dynamics, quadraticizes every player's
//! augmented cost, solves the LQ game for feedback Nash policies and rolls
//! them out with zero noise under a backtracking line search.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::augmented_lagrangian::{
    al_penalty_value, al_quadratic_terms, max_surrogate_violation, penalty_gate, update_multipliers,
    AlQuadraticTerms, MultiplierKey, MultiplierState,
};
use crate::belief::{
    initial_nominal, linearize_trajectory, precompute_covariances, rollout_means, BeliefTrajectory, Linearization,
};
use crate::constraints::{chance_violation_probability, linearize_all, LinearizedConstraint};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{clamp_eigenvalues, min_eigenvalue};
use crate::lq_game::{
    solve_lq_game, AffineFeedbackPolicy, LQGameStage, PlayerQuadratic, TerminalQuadratic,
};
use crate::model::{ControlSet, GameSpec};

/// Eigenvalue floor for each player's own control Hessian.
pub const CONTROL_HESSIAN_FLOOR: f64 = 1e-6;
/// State Hessians with eigenvalues below `-STATE_HESSIAN_SLACK` are projected.
const STATE_HESSIAN_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SolverMode {
    AugmentedLagrangian,
    /// Constant penalty weight on violated surrogates; multipliers stay zero.
    FixedPenalty { weight: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Inner loop stops when no nominal mean moves more than this.
    pub inner_tolerance: f64,
    pub inner_max_iterations: usize,
    /// Outer loop stops when the largest surrogate violation is at most this.
    pub outer_tolerance: f64,
    pub outer_max_iterations: usize,
    pub backtracking_factor: f64,
    pub max_line_search_trials: usize,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub mode: SolverMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            inner_tolerance: 1e-2,
            inner_max_iterations: 100,
            outer_tolerance: 1e-3,
            outer_max_iterations: 20,
            backtracking_factor: 0.5,
            max_line_search_trials: 12,
            initial_penalty: 10.0,
            penalty_growth: 5.0,
            mode: SolverMode::AugmentedLagrangian,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config {
                    field: name.into(),
                    reason: format!("must be positive, got {v}"),
                })
            }
        };
        positive("inner_tolerance", self.inner_tolerance)?;
        positive("outer_tolerance", self.outer_tolerance)?;
        positive("initial_penalty", self.initial_penalty)?;
        if !(self.backtracking_factor > 0.0 && self.backtracking_factor < 1.0) {
            return Err(Error::Config {
                field: "backtracking_factor".into(),
                reason: format!("must lie in (0, 1), got {}", self.backtracking_factor),
            });
        }
        if !(self.penalty_growth > 1.0 && self.penalty_growth.is_finite()) {
            return Err(Error::Config {
                field: "penalty_growth".into(),
                reason: format!("must exceed 1, got {}", self.penalty_growth),
            });
        }
        for (name, v) in [
            ("inner_max_iterations", self.inner_max_iterations),
            ("outer_max_iterations", self.outer_max_iterations),
            ("max_line_search_trials", self.max_line_search_trials),
        ] {
            if v == 0 {
                return Err(Error::Config {
                    field: name.into(),
                    reason: "must be at least 1".into(),
                });
            }
        }
        if let SolverMode::FixedPenalty { weight } = self.mode {
            positive("mode.weight", weight)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerIteration {
    /// Sum over players of augmented costs after the step.
    pub total_cost: f64,
    /// Same quantity before the step.
    pub previous_cost: f64,
    pub player_costs: Vec<f64>,
    /// Accepted feedforward scale; zero when the line search failed.
    pub step_size: f64,
    pub line_search_trials: usize,
    pub accepted: bool,
    pub mean_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterIteration {
    pub iteration: usize,
    /// Largest surrogate violation of the nominal the inner loop started from.
    pub violation_before: f64,
    /// Largest surrogate violation after the inner loop.
    pub max_violation: f64,
    /// Largest probability-scale violation `p - Pr(g <= 0)` after the inner loop.
    pub max_probability_violation: f64,
    pub player_costs: Vec<f64>,
    pub inner_converged: bool,
    pub inner: Vec<InnerIteration>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_penalty: Option<f64>,
    pub jittered_covariance_steps: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub mode: SolverMode,
    pub converged: bool,
    pub final_violation: f64,
    pub outer: Vec<OuterIteration>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub trajectory: BeliefTrajectory,
    /// Feedback policies expressed relative to `trajectory`.
    pub policies: Vec<AffineFeedbackPolicy>,
    /// Final multipliers; absent in fixed-penalty mode.
    pub multipliers: Option<MultiplierState>,
    /// Chance constraints linearized about the final nominal.
    pub constraints: Vec<LinearizedConstraint>,
    pub diagnostics: SolverDiagnostics,
}

impl Solution {
    pub fn converged(&self) -> bool {
        self.diagnostics.converged
    }

    pub fn final_violation(&self) -> f64 {
        self.diagnostics.final_violation
    }
}

/// Multiplier and penalty weights used to shape the augmented costs.
pub fn penalty_weights(config: &SolverConfig, constraints: &[LinearizedConstraint]) -> Result<MultiplierState> {
    let mut state = MultiplierState::for_constraints(constraints, config.initial_penalty, config.penalty_growth)?;
    if let SolverMode::FixedPenalty { weight } = config.mode {
        state.penalties = vec![weight; state.len()];
    }
    Ok(state)
}

pub fn surrogate_values(constraints: &[LinearizedConstraint], means: &[DVector<f64>]) -> Vec<f64> {
    constraints.iter().map(|c| c.surrogate_value(&means[c.step])).collect()
}

/// Per-player augmented cost along a nominal (running, terminal and the
/// shared multiplier/penalty terms).
pub fn augmented_player_costs(
    spec: &GameSpec,
    means: &[DVector<f64>],
    controls: &[ControlSet],
    constraints: &[LinearizedConstraint],
    weights: &MultiplierState,
) -> Vec<f64> {
    let horizon = controls.len();
    let shared: f64 = constraints
        .iter()
        .enumerate()
        .map(|(s, c)| al_penalty_value(c.surrogate_value(&means[c.step]), weights.lambdas[s], weights.penalties[s]))
        .sum();
    spec.costs
        .iter()
        .enumerate()
        .map(|(i, cost)| {
            let running: f64 = (0..horizon).map(|k| cost.running(i, &means[k], &controls[k])).sum();
            running + cost.terminal(i, &means[horizon]) + shared
        })
        .collect()
}

fn project_state_hessian(q: DMatrix<f64>) -> DMatrix<f64> {
    if min_eigenvalue(&q) >= -STATE_HESSIAN_SLACK {
        q
    } else {
        clamp_eigenvalues(&q, 0.0)
    }
}

/// Multiplier/penalty terms for every constraint slot, gated at the
/// nominal. The same terms are added to every player's cost.
pub fn shared_al_terms(
    nominal: &BeliefTrajectory,
    constraints: &[LinearizedConstraint],
    weights: &MultiplierState,
) -> Vec<AlQuadraticTerms> {
    constraints
        .iter()
        .enumerate()
        .map(|(s, c)| {
            let surrogate = c.surrogate_value(&nominal.means[c.step]);
            let gate = penalty_gate(surrogate, weights.lambdas[s], weights.penalties[s]);
            al_quadratic_terms(c, weights.lambdas[s], gate, &nominal.covariances[c.step])
        })
        .collect()
}

/// Quadratic approximation of every player's augmented cost about the
/// nominal, in deviation coordinates.
pub fn quadraticize_costs(
    spec: &GameSpec,
    nominal: &BeliefTrajectory,
    linearizations: &[Linearization],
    constraints: &[LinearizedConstraint],
    weights: &MultiplierState,
) -> Result<(Vec<LQGameStage>, Vec<TerminalQuadratic>)> {
    let horizon = nominal.horizon();
    check_dim("linearizations", horizon, linearizations.len())?;
    check_dim("multiplier slots", constraints.len(), weights.len())?;
    let n = spec.state_dim();
    let players = spec.players();

    // Combined shared increment per step, in deviation form.
    let terms = shared_al_terms(nominal, constraints, weights);
    let mut step_q = vec![DMatrix::<f64>::zeros(n, n); horizon + 1];
    let mut step_l = vec![DVector::<f64>::zeros(n); horizon + 1];
    let mut step_c = vec![0.0; horizon + 1];
    for (c, t) in constraints.iter().zip(&terms) {
        let x = &nominal.means[c.step];
        step_q[c.step] += &t.q;
        step_l[c.step] += &t.q * x + &t.l;
        step_c[c.step] += 0.5 * x.dot(&(&t.q * x)) + t.l.dot(x) + t.constant;
    }

    let stages = (0..horizon)
        .map(|k| {
            let x = &nominal.means[k];
            let u = &nominal.controls[k];
            let quads = (0..players)
                .map(|i| {
                    let exp = spec.costs[i].running_expansion(i, x, u);
                    let q = project_state_hessian(exp.state.hessian + &step_q[k]);
                    let r = exp
                        .controls
                        .iter()
                        .enumerate()
                        .map(|(j, c)| {
                            if j == i {
                                clamp_eigenvalues(&c.hessian, CONTROL_HESSIAN_FLOOR)
                            } else {
                                c.hessian.clone()
                            }
                        })
                        .collect();
                    PlayerQuadratic {
                        q,
                        l: exp.state.gradient + &step_l[k],
                        r,
                        r_lin: exp.controls.iter().map(|c| c.gradient.clone()).collect(),
                        constant: spec.costs[i].running(i, x, u) + step_c[k],
                    }
                })
                .collect();
            LQGameStage {
                a: linearizations[k].a.clone(),
                b: linearizations[k].b.clone(),
                players: quads,
            }
        })
        .collect();

    let x_final = &nominal.means[horizon];
    let terminal = (0..players)
        .map(|i| {
            let exp = spec.costs[i].terminal_expansion(i, x_final);
            TerminalQuadratic {
                q: project_state_hessian(exp.hessian + &step_q[horizon]),
                l: exp.gradient + &step_l[horizon],
                constant: spec.costs[i].terminal(i, x_final) + step_c[horizon],
            }
        })
        .collect();
    Ok((stages, terminal))
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerResult {
    pub trajectory: BeliefTrajectory,
    pub policies: Vec<AffineFeedbackPolicy>,
    pub iterations: Vec<InnerIteration>,
    pub converged: bool,
}

/// Gains with zero feedforward: the policy re-expressed about the nominal
/// it produced.
fn recentered(policies: &[AffineFeedbackPolicy]) -> Vec<AffineFeedbackPolicy> {
    policies.iter().map(|p| p.with_scaled_feedforward(0.0)).collect()
}

/// Inner iterative LQ game loop with constraint linearizations and
/// multipliers held fixed.
pub fn inner_solve(
    spec: &GameSpec,
    nominal: &BeliefTrajectory,
    constraints: &[LinearizedConstraint],
    weights: &MultiplierState,
    config: &SolverConfig,
) -> Result<InnerResult> {
    let players = spec.players();
    let dims = spec.control_dims();
    let n = spec.state_dim();
    let mut current = nominal.clone();
    let mut current_costs = augmented_player_costs(spec, &current.means, &current.controls, constraints, weights);
    let mut current_total: f64 = current_costs.iter().sum();
    let mut policies: Vec<AffineFeedbackPolicy> = (0..players)
        .map(|i| AffineFeedbackPolicy::zeros(current.horizon(), dims[i], n))
        .collect();
    let mut iterations = Vec::new();
    let mut converged = false;

    for _ in 0..config.inner_max_iterations {
        let lins = linearize_trajectory(spec, &current.means, &current.controls);
        let (stages, terminal) = quadraticize_costs(spec, &current, &lins, constraints, weights)?;
        let candidate = solve_lq_game(&stages, &terminal)?;

        let mut step = 1.0;
        let mut accepted = None;
        let mut trials = 0;
        for _ in 0..config.max_line_search_trials {
            trials += 1;
            let scaled: Vec<AffineFeedbackPolicy> = candidate.iter().map(|p| p.with_scaled_feedforward(step)).collect();
            let (means, controls) = rollout_means(spec, &current, &scaled)?;
            let costs = augmented_player_costs(spec, &means, &controls, constraints, weights);
            let total: f64 = costs.iter().sum();
            if total <= current_total {
                accepted = Some((means, controls, costs, total));
                break;
            }
            step *= config.backtracking_factor;
        }

        policies = recentered(&candidate);
        let Some((means, controls, costs, total)) = accepted else {
            iterations.push(InnerIteration {
                total_cost: current_total,
                previous_cost: current_total,
                player_costs: current_costs.clone(),
                step_size: 0.0,
                line_search_trials: trials,
                accepted: false,
                mean_change: 0.0,
            });
            break;
        };

        let schedule = precompute_covariances(spec, &means, &controls)?;
        let next = BeliefTrajectory {
            means,
            covariances: schedule.covariances,
            controls,
        };
        let change = next.max_mean_change(&current);
        iterations.push(InnerIteration {
            total_cost: total,
            previous_cost: current_total,
            player_costs: costs.clone(),
            step_size: step,
            line_search_trials: trials,
            accepted: true,
            mean_change: change,
        });
        current = next;
        current_costs = costs;
        current_total = total;
        if change < config.inner_tolerance {
            converged = true;
            break;
        }
    }

    Ok(InnerResult {
        trajectory: current,
        policies,
        iterations,
        converged,
    })
}

fn max_probability_violation(
    spec: &GameSpec,
    constraints: &[LinearizedConstraint],
    trajectory: &BeliefTrajectory,
) -> Result<f64> {
    let _ = spec;
    constraints.iter().try_fold(f64::NEG_INFINITY, |acc, c| {
        let v = chance_violation_probability(
            &c.gradient,
            c.offset,
            &trajectory.means[c.step],
            &trajectory.covariances[c.step],
            c.probability,
        )?;
        Ok(acc.max(v))
    })
    .map(|v| if v.is_finite() { v } else { 0.0 })
}

/// Full solve: augmented-Lagrangian outer loop around the inner game loop.
/// `initial_controls` defaults to all zeros.
pub fn outer_solve(spec: &GameSpec, initial_controls: Option<Vec<ControlSet>>, config: &SolverConfig) -> Result<Solution> {
    spec.validate()?;
    config.validate()?;
    let dims = spec.control_dims();
    let controls = initial_controls.unwrap_or_else(|| vec![ControlSet::zeros(&dims); spec.horizon]);
    let mut nominal = initial_nominal(spec, controls)?;
    let n = spec.state_dim();
    let mut policies: Vec<AffineFeedbackPolicy> = dims
        .iter()
        .map(|&m| AffineFeedbackPolicy::zeros(spec.horizon, m, n))
        .collect();
    let mut weights: Option<MultiplierState> = None;
    let mut outer = Vec::new();
    let mut converged = false;
    let mut final_violation = f64::INFINITY;
    let mut final_constraints = Vec::new();

    for iteration in 0..config.outer_max_iterations {
        let constraints = linearize_all(&spec.constraints, &nominal.means, &nominal.covariances)?;
        let surrogates = surrogate_values(&constraints, &nominal.means);
        let violation_before = max_surrogate_violation(&surrogates);
        let current = match (&config.mode, weights.take()) {
            (SolverMode::AugmentedLagrangian, Some(prev)) => update_multipliers(&prev, &surrogates)?,
            _ => penalty_weights(config, &constraints)?,
        };

        let inner = inner_solve(spec, &nominal, &constraints, &current, config)?;
        let stalled = inner.trajectory.max_mean_change(&nominal) < config.inner_tolerance;
        nominal = inner.trajectory;
        policies = inner.policies;

        let after = linearize_all(&spec.constraints, &nominal.means, &nominal.covariances)?;
        let violation = max_surrogate_violation(&surrogate_values(&after, &nominal.means));
        let player_costs = inner
            .iterations
            .last()
            .map(|it| it.player_costs.clone())
            .unwrap_or_else(|| augmented_player_costs(spec, &nominal.means, &nominal.controls, &constraints, &current));
        let is_al = matches!(config.mode, SolverMode::AugmentedLagrangian);
        let jittered = precompute_covariances(spec, &nominal.means, &nominal.controls)?.jittered_steps;
        outer.push(OuterIteration {
            iteration,
            violation_before,
            max_violation: violation,
            max_probability_violation: max_probability_violation(spec, &after, &nominal)?,
            player_costs,
            inner_converged: inner.converged,
            inner: inner.iterations,
            max_lambda: is_al.then(|| current.lambdas.iter().copied().fold(0.0, f64::max)),
            max_penalty: is_al.then(|| current.penalties.iter().copied().fold(0.0, f64::max)),
            jittered_covariance_steps: jittered,
        });
        weights = Some(current);
        final_violation = violation;
        final_constraints = after;
        if violation <= config.outer_tolerance {
            converged = true;
            break;
        }
        if !is_al && stalled && iteration > 0 {
            break;
        }
    }

    let multipliers = match config.mode {
        SolverMode::AugmentedLagrangian => weights,
        SolverMode::FixedPenalty { .. } => None,
    };
    Ok(Solution {
        trajectory: nominal,
        policies,
        multipliers,
        constraints: final_constraints,
        diagnostics: SolverDiagnostics {
            mode: config.mode,
            converged,
            final_violation,
            outer,
        },
    })
}

/// Weights the final inner loop of `solution` used.
pub fn solution_weights(solution: &Solution, config: &SolverConfig) -> Result<MultiplierState> {
    match (&solution.multipliers, config.mode) {
        (Some(m), _) => Ok(m.clone()),
        (None, _) => penalty_weights(config, &solution.constraints),
    }
}

/// Multiplier slot keys in solver order.
pub fn multiplier_keys(constraints: &[LinearizedConstraint]) -> Vec<MultiplierKey> {
    constraints
        .iter()
        .map(|c| MultiplierKey {
            step: c.step,
            constraint: c.index,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OuterSummary {
    pub iteration: usize,
    pub max_violation: f64,
    pub player_costs: Vec<f64>,
    pub inner_iterations: usize,
    pub inner_converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_penalty: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiplierReport {
    pub keys: Vec<MultiplierKey>,
    pub lambdas: Vec<f64>,
    pub penalties: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub mode: SolverMode,
    pub converged: bool,
    pub final_violation: f64,
    pub outer_iterations: Vec<OuterSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub multipliers: Option<MultiplierReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_seconds: Option<f64>,
}

/// Structured summary of a solve for logs and reports.
pub fn convergence_report(solution: &Solution, wall_time: Option<std::time::Duration>) -> ConvergenceReport {
    ConvergenceReport {
        mode: solution.diagnostics.mode,
        converged: solution.diagnostics.converged,
        final_violation: solution.diagnostics.final_violation,
        outer_iterations: solution
            .diagnostics
            .outer
            .iter()
            .map(|o| OuterSummary {
                iteration: o.iteration,
                max_violation: o.max_violation,
                player_costs: o.player_costs.clone(),
                inner_iterations: o.inner.len(),
                inner_converged: o.inner_converged,
                max_lambda: o.max_lambda,
                max_penalty: o.max_penalty,
            })
            .collect(),
        multipliers: solution.multipliers.as_ref().map(|m| MultiplierReport {
            keys: m.keys.clone(),
            lambdas: m.lambdas.clone(),
            penalties: m.penalties.clone(),
        }),
        wall_time_seconds: wall_time.map(|d| d.as_secs_f64()),
    }
}
