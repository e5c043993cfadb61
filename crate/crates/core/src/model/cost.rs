//! Per-player stage and terminal costs.

use std::fmt;

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use super::dynamics::AGENT_STATE_DIM;
use super::geometry::Polyline;
use super::ControlSet;
use crate::error::{Error, Result};
use crate::linalg::{fd_gradient, fd_hessian, FD_STEP};

/// Second-order expansion in the state (gradient and Hessian).
#[derive(Debug, Clone, PartialEq)]
pub struct StateExpansion {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
}

/// Second-order expansion in one player's controls.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlExpansion {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
}

/// Expansion of a running cost; state/control cross terms are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct CostExpansion {
    pub state: StateExpansion,
    pub controls: Vec<ControlExpansion>,
}

pub trait CostModel: fmt::Debug + Send + Sync {
    fn running(&self, player: usize, state: &DVector<f64>, controls: &ControlSet) -> f64;
    fn terminal(&self, player: usize, state: &DVector<f64>) -> f64;

    fn running_expansion(&self, player: usize, state: &DVector<f64>, controls: &ControlSet) -> CostExpansion {
        fd_running_expansion(self, player, state, controls)
    }

    fn terminal_expansion(&self, player: usize, state: &DVector<f64>) -> StateExpansion {
        let f = |x: &DVector<f64>| self.terminal(player, x);
        StateExpansion {
            hessian: fd_hessian(|x| fd_gradient(f, x, FD_STEP), state, FD_STEP),
            gradient: fd_gradient(f, state, FD_STEP),
        }
    }
}

pub fn fd_running_expansion<C: CostModel + ?Sized>(
    cost: &C,
    player: usize,
    state: &DVector<f64>,
    controls: &ControlSet,
) -> CostExpansion {
    let fx = |x: &DVector<f64>| cost.running(player, x, controls);
    let state_exp = StateExpansion {
        hessian: fd_hessian(|x| fd_gradient(fx, x, FD_STEP), state, FD_STEP),
        gradient: fd_gradient(fx, state, FD_STEP),
    };
    let controls_exp = (0..controls.players())
        .map(|j| {
            let fu = |uj: &DVector<f64>| {
                let mut c = controls.clone();
                c.set(j, uj.clone());
                cost.running(player, state, &c)
            };
            ControlExpansion {
                hessian: fd_hessian(|u| fd_gradient(fu, u, FD_STEP), controls.get(j), FD_STEP),
                gradient: fd_gradient(fu, controls.get(j), FD_STEP),
            }
        })
        .collect();
    CostExpansion {
        state: state_exp,
        controls: controls_exp,
    }
}

/// Driving cost of one unicycle player: squared distance to the lane
/// center, squared deviation from a nominal speed and squared controls.
/// Player `i` owns agent block `i` of the joint state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlayerCost {
    pub lane: Polyline,
    pub lane_weight: f64,
    pub nominal_speed: f64,
    pub speed_weight: f64,
    /// Weights on yaw rate and acceleration.
    pub control_weights: [f64; 2],
}

impl PlayerCost {
    pub fn validate(&self) -> Result<()> {
        self.lane.validate()?;
        let weights = [self.lane_weight, self.speed_weight, self.control_weights[0], self.control_weights[1]];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidInput("cost weights must be finite and nonnegative".into()));
        }
        if !(self.nominal_speed.is_finite() && self.nominal_speed >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "nominal speed must be nonnegative, got {}",
                self.nominal_speed
            )));
        }
        Ok(())
    }

    fn state_terms(&self, player: usize, state: &DVector<f64>) -> f64 {
        let o = AGENT_STATE_DIM * player;
        let p = Vector2::new(state[o], state[o + 1]);
        let dv = state[o + 3] - self.nominal_speed;
        self.lane_weight * self.lane.squared_distance(p).value + self.speed_weight * dv * dv
    }

    fn state_expansion(&self, player: usize, state: &DVector<f64>) -> StateExpansion {
        let n = state.len();
        let o = AGENT_STATE_DIM * player;
        let lane = self.lane.squared_distance(Vector2::new(state[o], state[o + 1]));
        let mut hessian = DMatrix::zeros(n, n);
        let mut gradient = DVector::zeros(n);
        for r in 0..2 {
            gradient[o + r] = self.lane_weight * lane.gradient[r];
            for c in 0..2 {
                hessian[(o + r, o + c)] = self.lane_weight * lane.hessian[(r, c)];
            }
        }
        gradient[o + 3] = 2.0 * self.speed_weight * (state[o + 3] - self.nominal_speed);
        hessian[(o + 3, o + 3)] = 2.0 * self.speed_weight;
        StateExpansion { hessian, gradient }
    }
}

impl CostModel for PlayerCost {
    fn running(&self, player: usize, state: &DVector<f64>, controls: &ControlSet) -> f64 {
        let u = controls.get(player);
        self.state_terms(player, state)
            + self.control_weights[0] * u[0] * u[0]
            + self.control_weights[1] * u[1] * u[1]
    }

    fn terminal(&self, player: usize, state: &DVector<f64>) -> f64 {
        self.state_terms(player, state)
    }

    fn running_expansion(&self, player: usize, state: &DVector<f64>, controls: &ControlSet) -> CostExpansion {
        let controls_exp = controls
            .iter()
            .enumerate()
            .map(|(j, uj)| {
                let m = uj.len();
                if j == player {
                    let w = DVector::from_vec(self.control_weights.to_vec());
                    ControlExpansion {
                        hessian: DMatrix::from_diagonal(&(2.0 * &w)),
                        gradient: 2.0 * w.component_mul(uj),
                    }
                } else {
                    ControlExpansion {
                        hessian: DMatrix::zeros(m, m),
                        gradient: DVector::zeros(m),
                    }
                }
            })
            .collect();
        CostExpansion {
            state: self.state_expansion(player, state),
            controls: controls_exp,
        }
    }

    fn terminal_expansion(&self, player: usize, state: &DVector<f64>) -> StateExpansion {
        self.state_expansion(player, state)
    }
}

/// Checked evaluation of a driving cost for `player`.
pub fn running_cost(player: usize, state: &DVector<f64>, controls: &ControlSet, cost: &PlayerCost) -> Result<f64> {
    if AGENT_STATE_DIM * (player + 1) > state.len() || player >= controls.players() {
        return Err(Error::InvalidInput(format!("player index {player} out of range")));
    }
    if controls.get(player).len() != 2 {
        return Err(Error::Dimension {
            context: "player controls",
            expected: 2,
            actual: controls.get(player).len(),
        });
    }
    Ok(cost.running(player, state, controls))
}

/// Quadratic cost `1/2 x'Qx + l'x + sum_j (1/2 u_j'R_j u_j + r_j'u_j) + c`
/// with a separate quadratic terminal cost.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    pub q: DMatrix<f64>,
    pub l: DVector<f64>,
    pub r: Vec<DMatrix<f64>>,
    pub r_lin: Vec<DVector<f64>>,
    pub constant: f64,
    pub terminal_q: DMatrix<f64>,
    pub terminal_l: DVector<f64>,
}

impl CostModel for QuadraticCost {
    fn running(&self, _player: usize, state: &DVector<f64>, controls: &ControlSet) -> f64 {
        let mut total = 0.5 * state.dot(&(&self.q * state)) + self.l.dot(state) + self.constant;
        for ((rj, rl), uj) in self.r.iter().zip(&self.r_lin).zip(controls.iter()) {
            total += 0.5 * uj.dot(&(rj * uj)) + rl.dot(uj);
        }
        total
    }

    fn terminal(&self, _player: usize, state: &DVector<f64>) -> f64 {
        0.5 * state.dot(&(&self.terminal_q * state)) + self.terminal_l.dot(state)
    }

    fn running_expansion(&self, _player: usize, state: &DVector<f64>, controls: &ControlSet) -> CostExpansion {
        CostExpansion {
            state: StateExpansion {
                hessian: self.q.clone(),
                gradient: &self.q * state + &self.l,
            },
            controls: self
                .r
                .iter()
                .zip(&self.r_lin)
                .zip(controls.iter())
                .map(|((rj, rl), uj)| ControlExpansion {
                    hessian: rj.clone(),
                    gradient: rj * uj + rl,
                })
                .collect(),
        }
    }

    fn terminal_expansion(&self, _player: usize, state: &DVector<f64>) -> StateExpansion {
        StateExpansion {
            hessian: self.terminal_q.clone(),
            gradient: &self.terminal_q * state + &self.terminal_l,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight_lane_cost() -> PlayerCost {
        PlayerCost {
            lane: Polyline::new(vec![[0.0, 0.0], [100.0, 0.0]]).unwrap(),
            lane_weight: 2.0,
            nominal_speed: 5.0,
            speed_weight: 0.5,
            control_weights: [3.0, 0.25],
        }
    }

    #[test]
    fn on_reference_costs_nothing() {
        let x = DVector::from_vec(vec![10.0, 0.0, 0.0, 5.0]);
        let c = running_cost(0, &x, &ControlSet::zeros(&[2]), &straight_lane_cost()).unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn single_lane_term() {
        let x = DVector::from_vec(vec![10.0, 1.0, 0.0, 5.0]);
        let c = running_cost(0, &x, &ControlSet::zeros(&[2]), &straight_lane_cost()).unwrap();
        assert_eq!(c, 2.0);
    }

    #[test]
    fn mixed_terms_match_hand_sum() {
        // lane 0.5 m off, speed 1 m/s slow, yaw rate 0.2, accel -1
        let x = DVector::from_vec(vec![10.0, -0.5, 0.3, 4.0]);
        let controls = ControlSet::new(vec![DVector::from_vec(vec![0.2, -1.0])]).unwrap();
        let c = running_cost(0, &x, &controls, &straight_lane_cost()).unwrap();
        let hand = 2.0 * 0.25 + 0.5 * 1.0 + 3.0 * 0.04 + 0.25 * 1.0;
        assert!((c - hand).abs() < 1e-15);
    }

    #[test]
    fn second_player_uses_second_block() {
        let x = DVector::from_vec(vec![0.0, 9.0, 0.0, 0.0, 10.0, 1.0, 0.0, 5.0]);
        let c = running_cost(1, &x, &ControlSet::zeros(&[2, 2]), &straight_lane_cost()).unwrap();
        assert_eq!(c, 2.0);
        assert!(running_cost(2, &x, &ControlSet::zeros(&[2, 2]), &straight_lane_cost()).is_err());
    }

    #[test]
    fn analytic_expansion_matches_finite_differences() {
        let cost = straight_lane_cost();
        let x = DVector::from_vec(vec![0.0, 9.0, 0.0, 0.0, 10.0, 1.3, 0.2, 4.0]);
        let controls = ControlSet::new(vec![DVector::from_vec(vec![0.1, 0.2]), DVector::from_vec(vec![-0.3, 0.7])]).unwrap();
        let analytic = cost.running_expansion(1, &x, &controls);
        let fd = fd_running_expansion(&cost, 1, &x, &controls);
        assert!((&analytic.state.gradient - &fd.state.gradient).abs().max() < 1e-6);
        assert!((&analytic.state.hessian - &fd.state.hessian).abs().max() < 1e-4);
        for j in 0..2 {
            assert!((&analytic.controls[j].gradient - &fd.controls[j].gradient).abs().max() < 1e-6);
            assert!((&analytic.controls[j].hessian - &fd.controls[j].hessian).abs().max() < 1e-4);
        }
    }
}
