//! Multipliers, penalty gating and the quadratic terms the augmented
//! Lagrangian adds to every player's cost.
//!
//! Multipliers act on the linear surrogate `c = G x + q + rho`, one
//! `(lambda, mu)` pair per active (timestep, constraint).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constraints::LinearizedConstraint;
use crate::error::{check_dim, Error, Result};

/// Upper bound on any penalty weight.
pub const MAX_PENALTY: f64 = 1e8;

/// Identifies one multiplier slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiplierKey {
    pub step: usize,
    pub constraint: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierState {
    pub keys: Vec<MultiplierKey>,
    pub lambdas: Vec<f64>,
    pub penalties: Vec<f64>,
    pub growth: f64,
    pub initial_penalty: f64,
}

impl MultiplierState {
    pub fn new(keys: Vec<MultiplierKey>, initial_penalty: f64, growth: f64) -> Result<Self> {
        if !(initial_penalty > 0.0 && initial_penalty.is_finite()) {
            return Err(Error::InvalidInput(format!("initial penalty must be positive, got {initial_penalty}")));
        }
        if !(growth > 1.0 && growth.is_finite()) {
            return Err(Error::InvalidInput(format!("penalty growth must exceed 1, got {growth}")));
        }
        let len = keys.len();
        Ok(MultiplierState {
            keys,
            lambdas: vec![0.0; len],
            penalties: vec![initial_penalty.min(MAX_PENALTY); len],
            growth,
            initial_penalty,
        })
    }

    /// Keys in the order produced by [`crate::constraints::linearize_all`].
    pub fn for_constraints(constraints: &[LinearizedConstraint], initial_penalty: f64, growth: f64) -> Result<Self> {
        let keys = constraints
            .iter()
            .map(|c| MultiplierKey {
                step: c.step,
                constraint: c.index,
            })
            .collect();
        Self::new(keys, initial_penalty, growth)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

/// `0` when the surrogate is strictly satisfied and its multiplier is
/// zero, `mu` otherwise.
pub fn penalty_gate(surrogate: f64, lambda: f64, mu: f64) -> f64 {
    if surrogate < 0.0 && lambda == 0.0 {
        0.0
    } else {
        mu
    }
}

/// `lambda <- max(0, lambda + mu c)`, `mu <- min(phi mu, MAX_PENALTY)`.
pub fn update_multipliers(state: &MultiplierState, surrogates: &[f64]) -> Result<MultiplierState> {
    check_dim("surrogate values", state.len(), surrogates.len())?;
    let lambdas = state
        .lambdas
        .iter()
        .zip(&state.penalties)
        .zip(surrogates)
        .map(|((l, mu), c)| (l + mu * c).max(0.0))
        .collect();
    let penalties = state.penalties.iter().map(|mu| (mu * state.growth).min(MAX_PENALTY)).collect();
    Ok(MultiplierState {
        keys: state.keys.clone(),
        lambdas,
        penalties,
        growth: state.growth,
        initial_penalty: state.initial_penalty,
    })
}

/// Quadratic-in-state form of one constraint's multiplier and penalty
/// terms: `1/2 x'Qx + l'x + constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlQuadraticTerms {
    pub q: DMatrix<f64>,
    pub l: DVector<f64>,
    pub constant: f64,
}

/// Terms whose expectation under `N(x_bar, Sigma)` equals
/// `lambda c + I/2 c^2` at the mean (the trace correction sits in the
/// constant).
pub fn al_quadratic_terms(
    lc: &LinearizedConstraint,
    lambda: f64,
    gate: f64,
    covariance: &DMatrix<f64>,
) -> AlQuadraticTerms {
    let g = &lc.gradient;
    let shift = lc.offset + lc.margin;
    let q = g * g.transpose() * gate;
    let l = g * (lambda + gate * shift);
    let trace = g.dot(&(covariance * g));
    AlQuadraticTerms {
        q,
        l,
        constant: lambda * shift + 0.5 * gate * shift * shift - 0.5 * gate * trace,
    }
}

/// Value of the combined multiplier and penalty term for one surrogate.
pub fn al_penalty_value(surrogate: f64, lambda: f64, mu: f64) -> f64 {
    let gate = penalty_gate(surrogate, lambda, mu);
    lambda * surrogate + 0.5 * gate * surrogate * surrogate
}

/// `max(0, max_i c_i)`; zero for an empty set.
pub fn max_surrogate_violation(surrogates: &[f64]) -> f64 {
    surrogates.iter().copied().fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(lambda: f64, mu: f64) -> MultiplierState {
        let mut s = MultiplierState::new(vec![MultiplierKey { step: 1, constraint: 0 }], mu, 5.0).unwrap();
        s.lambdas[0] = lambda;
        s
    }

    #[test]
    fn gate_cases() {
        assert_eq!(penalty_gate(-0.5, 0.0, 10.0), 0.0);
        assert_eq!(penalty_gate(-0.5, 2.0, 10.0), 10.0);
        assert_eq!(penalty_gate(0.3, 0.0, 10.0), 10.0);
        assert_eq!(penalty_gate(0.0, 0.0, 10.0), 10.0);
    }

    #[test]
    fn update_arithmetic() {
        let s = update_multipliers(&single(0.0, 10.0), &[0.2]).unwrap();
        assert!((s.lambdas[0] - 2.0).abs() < 1e-15);
        assert_eq!(s.penalties[0], 50.0);
        let s = update_multipliers(&single(0.0, 10.0), &[-0.3]).unwrap();
        assert_eq!(s.lambdas[0], 0.0);
        let s = update_multipliers(&single(1.0, 4.0), &[-0.1]).unwrap();
        assert!((s.lambdas[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn penalty_is_capped() {
        let mut s = single(0.0, 1e7);
        for _ in 0..5 {
            s = update_multipliers(&s, &[0.0]).unwrap();
        }
        assert_eq!(s.penalties[0], MAX_PENALTY);
    }

    #[test]
    fn invalid_parameters() {
        assert!(MultiplierState::new(vec![], 0.0, 5.0).is_err());
        assert!(MultiplierState::new(vec![], 10.0, 1.0).is_err());
        assert!(update_multipliers(&single(0.0, 1.0), &[]).is_err());
    }

    #[test]
    fn max_violation_cases() {
        assert_eq!(max_surrogate_violation(&[-1.0, -0.2]), 0.0);
        assert_eq!(max_surrogate_violation(&[-1.0, 0.2, 0.05]), 0.2);
        assert_eq!(max_surrogate_violation(&[]), 0.0);
    }

    fn lc(gradient: Vec<f64>, offset: f64, margin: f64) -> LinearizedConstraint {
        LinearizedConstraint {
            gradient: DVector::from_vec(gradient),
            offset,
            margin,
            step: 1,
            index: 0,
            probability: 0.9,
        }
    }

    #[test]
    fn inactive_constraint_adds_nothing() {
        let t = al_quadratic_terms(&lc(vec![1.0, 2.0], 0.3, 0.1), 0.0, 0.0, &DMatrix::identity(2, 2));
        assert_eq!(t.q, DMatrix::zeros(2, 2));
        assert_eq!(t.l, DVector::zeros(2));
        assert_eq!(t.constant, 0.0);
    }

    #[test]
    fn active_constraint_increments() {
        let t = al_quadratic_terms(&lc(vec![1.0, 0.0, 0.0], 0.3, 0.2), 2.0, 10.0, &DMatrix::zeros(3, 3));
        let mut q = DMatrix::zeros(3, 3);
        q[(0, 0)] = 10.0;
        assert_eq!(t.q, q);
        assert!((t.l[0] - 7.0).abs() < 1e-15 && t.l[1] == 0.0 && t.l[2] == 0.0);
    }
}
