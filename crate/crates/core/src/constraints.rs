//! Chance constraints: definitions, linearization about a nominal mean,
//! Gaussian safety margins and violation measures.

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{fd_gradient, FD_STEP};
use crate::model::{Obstacle, AGENT_STATE_DIM, DEGENERATE_NUDGE};
use crate::special::{normal_cdf, normal_quantile};

pub use crate::special::inverse_erf;

/// Gradients with norm below this are treated as degenerate.
pub const DEGENERATE_GRADIENT_NORM: f64 = 1e-9;
/// Negative variances down to this size are rounding noise and are clamped.
pub const VARIANCE_CLAMP: f64 = 1e-12;

/// Scalar state constraint `g(x) <= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintKind {
    /// `d_min - |p_i - p_j|` for a pair of unicycle agents.
    Proximity { agents: [usize; 2], min_distance: f64 },
    /// Signed penetration of one agent into a convex obstacle.
    Obstacle { agent: usize, obstacle: Obstacle },
    /// `a . x + b` on the raw joint state.
    Affine { coefficients: Vec<f64>, offset: f64 },
}

fn default_first_step() -> usize {
    1
}

/// A chance constraint `Pr(g(x_k) <= 0) >= probability` over an inclusive
/// range of timesteps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChanceConstraintSpec {
    pub kind: ConstraintKind,
    pub probability: f64,
    #[serde(default = "default_first_step")]
    pub first_step: usize,
    /// Last active step; `None` means the final step of the horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_step: Option<usize>,
}

impl ChanceConstraintSpec {
    pub fn new(kind: ConstraintKind, probability: f64) -> Self {
        ChanceConstraintSpec {
            kind,
            probability,
            first_step: 1,
            last_step: None,
        }
    }

    pub fn steps(&self, horizon: usize) -> std::ops::RangeInclusive<usize> {
        self.first_step..=self.last_step.unwrap_or(horizon).min(horizon)
    }

    pub fn validate(&self, state_dim: usize, horizon: usize) -> Result<()> {
        if !(self.probability > 0.0 && self.probability < 1.0) {
            return Err(Error::InvalidInput(format!(
                "chance threshold must lie in (0, 1), got {}",
                self.probability
            )));
        }
        if self.first_step > self.last_step.unwrap_or(horizon) || self.last_step.is_some_and(|l| l > horizon) {
            return Err(Error::InvalidInput(format!(
                "active steps {}..={:?} do not fit the horizon {horizon}",
                self.first_step, self.last_step
            )));
        }
        let agent_ok = |a: usize| AGENT_STATE_DIM * (a + 1) <= state_dim;
        match &self.kind {
            ConstraintKind::Proximity { agents, min_distance } => {
                if agents[0] == agents[1] {
                    return Err(Error::InvalidInput("proximity pair must name two distinct agents".into()));
                }
                if !agents.iter().all(|&a| agent_ok(a)) {
                    return Err(Error::InvalidInput(format!("proximity agents {agents:?} out of range")));
                }
                if !(min_distance.is_finite() && *min_distance > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "minimum distance must be positive, got {min_distance}"
                    )));
                }
            }
            ConstraintKind::Obstacle { agent, obstacle } => {
                if !agent_ok(*agent) {
                    return Err(Error::InvalidInput(format!("obstacle agent {agent} out of range")));
                }
                obstacle.validate()?;
            }
            ConstraintKind::Affine { coefficients, offset } => {
                check_dim("affine constraint coefficients", state_dim, coefficients.len())?;
                if !offset.is_finite() || coefficients.iter().any(|c| !c.is_finite()) {
                    return Err(Error::InvalidInput("affine constraint is not finite".into()));
                }
            }
        }
        Ok(())
    }

    /// Nonlinear constraint value `g(x)`.
    pub fn value(&self, state: &DVector<f64>) -> f64 {
        self.value_and_gradient(state).0
    }

    /// `g(x)` and its analytic gradient.
    pub fn value_and_gradient(&self, state: &DVector<f64>) -> (f64, DVector<f64>) {
        let n = state.len();
        let mut grad = DVector::zeros(n);
        let value = match &self.kind {
            ConstraintKind::Proximity { agents, min_distance } => {
                let (oi, oj) = (AGENT_STATE_DIM * agents[0], AGENT_STATE_DIM * agents[1]);
                let mut diff = position(state, agents[0]) - position(state, agents[1]);
                if diff.norm() < DEGENERATE_NUDGE {
                    diff.x += DEGENERATE_NUDGE;
                }
                let dist = diff.norm();
                let unit = diff / dist;
                for r in 0..2 {
                    grad[oi + r] = -unit[r];
                    grad[oj + r] = unit[r];
                }
                min_distance - dist
            }
            ConstraintKind::Obstacle { agent, obstacle } => {
                let o = AGENT_STATE_DIM * agent;
                let (g, dg) = obstacle.signed_value(position(state, *agent));
                grad[o] = dg.x;
                grad[o + 1] = dg.y;
                g
            }
            ConstraintKind::Affine { coefficients, offset } => {
                grad.copy_from_slice(coefficients);
                grad.dot(state) + offset
            }
        };
        (value, grad)
    }

    /// Linearization `(G, q)` about `nominal` using the analytic gradient.
    pub fn linearize(&self, nominal: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
        let (value, grad) = self.value_and_gradient(nominal);
        affine_from(value, grad, nominal)
    }
}

fn position(state: &DVector<f64>, agent: usize) -> Vector2<f64> {
    let o = AGENT_STATE_DIM * agent;
    Vector2::new(state[o], state[o + 1])
}

fn affine_from(value: f64, grad: DVector<f64>, nominal: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let norm = grad.norm();
    if !(norm >= DEGENERATE_GRADIENT_NORM) {
        return Err(Error::DegenerateGradient { norm });
    }
    let q = value - grad.dot(nominal);
    Ok((grad, q))
}

/// `d_min - |p_i - p_j|`; nonpositive iff the two agents are at least
/// `d_min` apart.
pub fn proximity_value(state: &DVector<f64>, pair: (usize, usize), min_distance: f64) -> Result<f64> {
    let spec = ChanceConstraintSpec::new(
        ConstraintKind::Proximity {
            agents: [pair.0, pair.1],
            min_distance,
        },
        0.9,
    );
    spec.validate(state.len(), spec.first_step)?;
    let dist = (position(state, pair.0) - position(state, pair.1)).norm();
    Ok(min_distance - dist)
}

/// Value of the supporting halfspace of `obstacle` nearest to the agent,
/// evaluated at the agent position (positive inside the obstacle).
pub fn obstacle_value(state: &DVector<f64>, agent: usize, obstacle: &Obstacle) -> Result<f64> {
    obstacle.validate()?;
    if AGENT_STATE_DIM * (agent + 1) > state.len() {
        return Err(Error::InvalidInput(format!("agent {agent} out of range")));
    }
    let p = position(state, agent);
    let (n, b) = obstacle.supporting_halfspace(p);
    Ok(n.dot(&p) - b)
}

/// Linearizes an arbitrary scalar constraint by central differences.
pub fn linearize_constraint<F>(g: F, nominal: &DVector<f64>) -> Result<(DVector<f64>, f64)>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let grad = fd_gradient(&g, nominal, FD_STEP);
    affine_from(g(nominal), grad, nominal)
}

/// Gaussian safety margin `rho = sigma * Phi^-1(p)` with `sigma^2 = G Sigma G'`.
pub fn safety_margin_rho(gradient: &DVector<f64>, covariance: &DMatrix<f64>, probability: f64) -> Result<f64> {
    check_dim("safety margin covariance", gradient.len(), covariance.nrows())?;
    let sigma = constraint_std(gradient, covariance)?;
    if sigma == 0.0 {
        return Ok(0.0);
    }
    Ok(sigma * normal_quantile(probability)?)
}

fn constraint_std(gradient: &DVector<f64>, covariance: &DMatrix<f64>) -> Result<f64> {
    let variance = gradient.dot(&(covariance * gradient));
    if variance < -VARIANCE_CLAMP {
        return Err(Error::Numerical(format!("negative constraint variance {variance:e}")));
    }
    Ok(variance.max(0.0).sqrt())
}

/// A chance constraint linearized at one timestep: `G x + q + rho <= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedConstraint {
    pub gradient: DVector<f64>,
    pub offset: f64,
    pub margin: f64,
    pub step: usize,
    pub index: usize,
    pub probability: f64,
}

impl LinearizedConstraint {
    pub fn surrogate_value(&self, mean: &DVector<f64>) -> f64 {
        self.gradient.dot(mean) + self.offset + self.margin
    }
}

/// `G x + q + rho`; nonpositive iff the tightened mean constraint holds.
pub fn surrogate_value(lc: &LinearizedConstraint, mean: &DVector<f64>) -> f64 {
    lc.surrogate_value(mean)
}

/// `p - Pr(G x + q <= 0)` for `x ~ N(mean, Sigma)`; positive when the
/// chance constraint is violated under the linearization.
pub fn chance_violation_probability(
    gradient: &DVector<f64>,
    offset: f64,
    mean: &DVector<f64>,
    covariance: &DMatrix<f64>,
    probability: f64,
) -> Result<f64> {
    let sigma = constraint_std(gradient, covariance)?;
    let center = gradient.dot(mean) + offset;
    if sigma == 0.0 {
        return Ok(if center <= 0.0 { probability - 1.0 } else { probability });
    }
    Ok(probability - normal_cdf(-center / sigma))
}

/// Linearizes every active (step, constraint) pair along a nominal belief
/// trajectory. Entries are ordered by constraint, then by step.
pub fn linearize_all(
    constraints: &[ChanceConstraintSpec],
    means: &[DVector<f64>],
    covariances: &[DMatrix<f64>],
) -> Result<Vec<LinearizedConstraint>> {
    let horizon = means.len().saturating_sub(1);
    let mut out = Vec::new();
    for (index, c) in constraints.iter().enumerate() {
        for step in c.steps(horizon) {
            let (gradient, offset) = c.linearize(&means[step])?;
            let margin = safety_margin_rho(&gradient, &covariances[step], c.probability)?;
            out.push(LinearizedConstraint {
                gradient,
                offset,
                margin,
                step,
                index,
                probability: c.probability,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair_state(dx: f64) -> DVector<f64> {
        DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0, dx, 0.0, 0.0, 1.0])
    }

    #[test]
    fn proximity_values() {
        assert_eq!(proximity_value(&pair_state(5.0), (0, 1), 3.0).unwrap(), -2.0);
        assert_eq!(proximity_value(&pair_state(2.0), (0, 1), 3.0).unwrap(), 1.0);
        assert_eq!(proximity_value(&pair_state(0.0), (0, 1), 3.0).unwrap(), 3.0);
        assert!(proximity_value(&pair_state(1.0), (0, 0), 3.0).is_err());
    }

    #[test]
    fn coincident_agents_get_a_unit_gradient() {
        let spec = ChanceConstraintSpec::new(
            ConstraintKind::Proximity {
                agents: [0, 1],
                min_distance: 3.0,
            },
            0.9,
        );
        let (g, q) = spec.linearize(&pair_state(0.0)).unwrap();
        assert!((g.norm() - 2f64.sqrt()).abs() < 1e-12);
        assert!((g.dot(&pair_state(0.0)) + q - spec.value(&pair_state(0.0))).abs() < 1e-12);
    }

    #[test]
    fn proximity_gradient_pattern() {
        let spec = ChanceConstraintSpec::new(
            ConstraintKind::Proximity {
                agents: [0, 1],
                min_distance: 3.0,
            },
            0.9,
        );
        let (g, _) = spec.linearize(&pair_state(5.0)).unwrap();
        let expected = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0]);
        assert_eq!(g, expected);
    }

    #[test]
    fn obstacle_signs() {
        let disc = Obstacle::Disc {
            center: [0.0, 0.0],
            radius: 1.0,
        };
        let far = DVector::from_vec(vec![10.0, 3.0, 0.0, 0.0]);
        assert!(obstacle_value(&far, 0, &disc).unwrap() < 0.0);
        let boundary = DVector::from_vec(vec![0.0, 1.0, 0.0, 0.0]);
        assert!(obstacle_value(&boundary, 0, &disc).unwrap().abs() < 1e-15);
        let hand = DVector::from_vec(vec![2.0, 0.0, 0.0, 0.0]);
        assert_eq!(obstacle_value(&hand, 0, &disc).unwrap(), -1.0);
        let empty = Obstacle::Polygon { vertices: vec![] };
        assert!(obstacle_value(&hand, 0, &empty).is_err());
    }

    #[test]
    fn affine_linearization_is_exact() {
        let (g, q) = linearize_constraint(|x| 2.0 * x[0] - 3.0, &DVector::from_vec(vec![0.4, -7.0, 1.0])).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-9 && g[1].abs() < 1e-9 && g[2].abs() < 1e-9);
        assert!((q + 3.0).abs() < 1e-9);
    }

    #[test]
    fn flat_constraint_is_degenerate() {
        let err = linearize_constraint(|_| 1.0, &DVector::zeros(3));
        assert!(matches!(err, Err(Error::DegenerateGradient { .. })));
    }

    #[test]
    fn median_margin_is_zero() {
        let g = DVector::from_vec(vec![0.3, -2.0]);
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.1, 0.1, 1.0]);
        assert_eq!(safety_margin_rho(&g, &cov, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn margins_at_p90() {
        let g = DVector::from_vec(vec![1.0, 0.0]);
        let unit = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]);
        // standard normal 0.9 quantile 1.2815515655446004
        assert!((safety_margin_rho(&g, &unit, 0.9).unwrap() - 1.281552).abs() < 1e-6);
        let quarter = DMatrix::from_row_slice(2, 2, &[0.25, 0.0, 0.0, 3.0]);
        assert!((safety_margin_rho(&g, &quarter, 0.9).unwrap() - 0.640776).abs() < 1e-6);
    }

    #[test]
    fn negative_variance_is_rejected_but_tiny_is_clamped() {
        let g = DVector::from_vec(vec![1.0]);
        let bad = DMatrix::from_element(1, 1, -1e-6);
        assert!(matches!(safety_margin_rho(&g, &bad, 0.9), Err(Error::Numerical(_))));
        let tiny = DMatrix::from_element(1, 1, -1e-14);
        assert_eq!(safety_margin_rho(&g, &tiny, 0.9).unwrap(), 0.0);
    }

    #[test]
    fn surrogate_boundary_and_deterministic_limit() {
        let lc = LinearizedConstraint {
            gradient: DVector::from_vec(vec![1.0, 2.0]),
            offset: -1.0,
            margin: 0.5,
            step: 1,
            index: 0,
            probability: 0.9,
        };
        // G x = -q - rho = 0.5
        assert_eq!(surrogate_value(&lc, &DVector::from_vec(vec![0.5, 0.0])), 0.0);
        let det = LinearizedConstraint { margin: 0.0, ..lc };
        let x = DVector::from_vec(vec![3.0, 1.0]);
        assert_eq!(surrogate_value(&det, &x), 3.0 + 2.0 - 1.0);
    }

    #[test]
    fn violation_probability_cases() {
        let g = DVector::from_vec(vec![1.0]);
        let cov = DMatrix::from_element(1, 1, 4.0);
        let v = chance_violation_probability(&g, -2.0, &DVector::from_vec(vec![2.0]), &cov, 0.9).unwrap();
        assert!((v - 0.4).abs() < 1e-15);
        let zero = DMatrix::zeros(1, 1);
        let v = chance_violation_probability(&g, -2.0, &DVector::from_vec(vec![1.0]), &zero, 0.9).unwrap();
        assert!((v + 0.1).abs() < 1e-15);
        let v = chance_violation_probability(&g, -2.0, &DVector::from_vec(vec![3.0]), &zero, 0.9).unwrap();
        assert_eq!(v, 0.9);
    }

    #[test]
    fn threshold_validation() {
        let mut spec = ChanceConstraintSpec::new(
            ConstraintKind::Proximity {
                agents: [0, 1],
                min_distance: 3.0,
            },
            1.5,
        );
        assert!(spec.validate(8, 10).is_err());
        spec.probability = 0.9;
        assert!(spec.validate(8, 10).is_ok());
        spec.last_step = Some(11);
        assert!(spec.validate(8, 10).is_err());
    }
}
