//! Finite-horizon N-player linear-quadratic games solved for the affine
//! feedback Nash equilibrium by coupled backward Riccati recursion.
//!
//! Each stage couples the players through one stacked linear system in all
//! players' gains and feedforward terms:
//!
//! ```text
//! (R^ii + B_i' Z_i B_i) P_i + B_i' Z_i sum_{j != i} B_j P_j = B_i' Z_i A
//! (R^ii + B_i' Z_i B_i) a_i + B_i' Z_i sum_{j != i} B_j a_j = B_i' z_i + r^ii
//! ```
//!
//! with `u_i = -P_i x - a_i` and `(Z_i, z_i)` the next-step value function.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{min_eigenvalue, symmetrize};

/// Smallest admissible eigenvalue of a player's own control Hessian.
pub const MIN_CONTROL_CURVATURE: f64 = 1e-9;
/// Stacked systems with a smaller singular value are reported as degenerate.
pub const MIN_SINGULAR_VALUE: f64 = 1e-10;

/// Player `i`'s stage cost
/// `1/2 x'Qx + l'x + sum_j (1/2 u_j' R^ij u_j + r^ij' u_j) + constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlayerQuadratic {
    pub q: DMatrix<f64>,
    pub l: DVector<f64>,
    pub r: Vec<DMatrix<f64>>,
    pub r_lin: Vec<DVector<f64>>,
    pub constant: f64,
}

/// One stage of an LQ game: `x' = A x + sum_j B_j u_j` plus stage costs.
#[derive(Debug, Clone, PartialEq)]
pub struct LQGameStage {
    pub a: DMatrix<f64>,
    pub b: Vec<DMatrix<f64>>,
    pub players: Vec<PlayerQuadratic>,
}

/// Terminal cost `1/2 x'Qx + l'x + constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalQuadratic {
    pub q: DMatrix<f64>,
    pub l: DVector<f64>,
    pub constant: f64,
}

/// Per-player time-varying affine policy `u_k = u_bar_k - P_k dx_k - a_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineFeedbackPolicy {
    pub gains: Vec<DMatrix<f64>>,
    pub feedforwards: Vec<DVector<f64>>,
}

impl AffineFeedbackPolicy {
    pub fn zeros(horizon: usize, control_dim: usize, state_dim: usize) -> Self {
        AffineFeedbackPolicy {
            gains: vec![DMatrix::zeros(control_dim, state_dim); horizon],
            feedforwards: vec![DVector::zeros(control_dim); horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.gains.len()
    }

    /// Same gains with every feedforward term multiplied by `step`.
    pub fn with_scaled_feedforward(&self, step: f64) -> Self {
        AffineFeedbackPolicy {
            gains: self.gains.clone(),
            feedforwards: self.feedforwards.iter().map(|a| a * step).collect(),
        }
    }
}

/// Quadratic value function `1/2 x'Zx + z'x + c` of one player.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    pub z: DMatrix<f64>,
    pub zeta: DVector<f64>,
    pub constant: f64,
}

impl ValueFunction {
    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.z * x)) + self.zeta.dot(x) + self.constant
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LqGameSolution {
    pub policies: Vec<AffineFeedbackPolicy>,
    /// `values[k][i]` is player `i`'s value function at step `k`, `k = 0..=L`.
    pub values: Vec<Vec<ValueFunction>>,
}

/// Control `u = u_bar - P (x_hat - x_bar) - a` for one player at step `k`.
pub fn apply_policy(
    policy: &AffineFeedbackPolicy,
    k: usize,
    estimate: &DVector<f64>,
    nominal_state: &DVector<f64>,
    nominal_control: &DVector<f64>,
) -> DVector<f64> {
    nominal_control - &policy.gains[k] * (estimate - nominal_state) - &policy.feedforwards[k]
}

pub fn solve_lq_game(stages: &[LQGameStage], terminal: &[TerminalQuadratic]) -> Result<Vec<AffineFeedbackPolicy>> {
    Ok(solve_lq_game_detailed(stages, terminal)?.policies)
}

fn validate(stages: &[LQGameStage], terminal: &[TerminalQuadratic]) -> Result<()> {
    let players = terminal.len();
    let n = terminal.first().map_or(0, |t| t.q.nrows());
    for t in terminal {
        check_dim("terminal Q", n, t.q.nrows())?;
        check_dim("terminal l", n, t.l.len())?;
    }
    for (k, stage) in stages.iter().enumerate() {
        check_dim("stage A rows", n, stage.a.nrows())?;
        check_dim("stage A columns", n, stage.a.ncols())?;
        check_dim("stage B count", players, stage.b.len())?;
        check_dim("stage player count", players, stage.players.len())?;
        for (i, pq) in stage.players.iter().enumerate() {
            check_dim("stage Q", n, pq.q.nrows())?;
            check_dim("stage l", n, pq.l.len())?;
            check_dim("stage R count", players, pq.r.len())?;
            if (&pq.q - pq.q.transpose()).abs().max() > 1e-9 {
                return Err(Error::InvalidInput(format!("player {i} state Hessian at step {k} is not symmetric")));
            }
            let own = min_eigenvalue(&pq.r[i]);
            if !(own > MIN_CONTROL_CURVATURE) {
                return Err(Error::InvalidInput(format!(
                    "player {i} control Hessian at step {k} is not positive definite (min eigenvalue {own:e})"
                )));
            }
        }
    }
    Ok(())
}

pub fn solve_lq_game_detailed(stages: &[LQGameStage], terminal: &[TerminalQuadratic]) -> Result<LqGameSolution> {
    validate(stages, terminal)?;
    let players = terminal.len();
    let horizon = stages.len();

    let mut value: Vec<ValueFunction> = terminal
        .iter()
        .map(|t| ValueFunction {
            z: t.q.clone(),
            zeta: t.l.clone(),
            constant: t.constant,
        })
        .collect();
    let mut values = vec![value.clone()];
    let mut gains_rev: Vec<Vec<DMatrix<f64>>> = Vec::with_capacity(horizon);
    let mut ff_rev: Vec<Vec<DVector<f64>>> = Vec::with_capacity(horizon);

    for (k, stage) in stages.iter().enumerate().rev() {
        let n = stage.a.nrows();
        let dims: Vec<usize> = stage.b.iter().map(|b| b.ncols()).collect();
        let offsets: Vec<usize> = dims.iter().scan(0, |acc, &m| {
            let o = *acc;
            *acc += m;
            Some(o)
        }).collect();
        let total: usize = dims.iter().sum();

        let mut lhs = DMatrix::zeros(total, total);
        let mut rhs = DMatrix::zeros(total, n + 1);
        for i in 0..players {
            let bi_t_z = stage.b[i].transpose() * &value[i].z;
            for j in 0..players {
                let mut block = &bi_t_z * &stage.b[j];
                if i == j {
                    block += &stage.players[i].r[i];
                }
                lhs.view_mut((offsets[i], offsets[j]), (dims[i], dims[j])).copy_from(&block);
            }
            rhs.view_mut((offsets[i], 0), (dims[i], n)).copy_from(&(&bi_t_z * &stage.a));
            let forcing = stage.b[i].transpose() * &value[i].zeta + &stage.players[i].r_lin[i];
            rhs.view_mut((offsets[i], n), (dims[i], 1)).copy_from(&forcing);
        }

        let svd = lhs.svd(true, true);
        let min_sv = svd.singular_values.iter().copied().fold(f64::INFINITY, f64::min);
        if !(min_sv >= MIN_SINGULAR_VALUE) {
            return Err(Error::EquilibriumDegeneracy {
                timestep: k,
                min_singular_value: min_sv,
            });
        }
        let solution = svd
            .solve(&rhs, 0.0)
            .map_err(|e| Error::Numerical(format!("stacked Nash system at step {k}: {e}")))?;

        let gains: Vec<DMatrix<f64>> = (0..players)
            .map(|i| solution.view((offsets[i], 0), (dims[i], n)).into_owned())
            .collect();
        let ffs: Vec<DVector<f64>> = (0..players)
            .map(|i| solution.view((offsets[i], n), (dims[i], 1)).column(0).into_owned())
            .collect();

        let mut closed_loop = stage.a.clone();
        let mut drift = DVector::zeros(n);
        for j in 0..players {
            closed_loop -= &stage.b[j] * &gains[j];
            drift -= &stage.b[j] * &ffs[j];
        }
        let closed_loop_t = closed_loop.transpose();

        value = (0..players)
            .map(|i| {
                let pq = &stage.players[i];
                let next = &value[i];
                let mut z = &closed_loop_t * &next.z * &closed_loop + &pq.q;
                let mut zeta = &closed_loop_t * (&next.zeta + &next.z * &drift) + &pq.l;
                let mut constant = next.constant
                    + next.zeta.dot(&drift)
                    + 0.5 * drift.dot(&(&next.z * &drift))
                    + pq.constant;
                for j in 0..players {
                    let p_t = gains[j].transpose();
                    z += &p_t * &pq.r[j] * &gains[j];
                    zeta += &p_t * (&pq.r[j] * &ffs[j] - &pq.r_lin[j]);
                    constant += 0.5 * ffs[j].dot(&(&pq.r[j] * &ffs[j])) - pq.r_lin[j].dot(&ffs[j]);
                }
                symmetrize(&mut z);
                ValueFunction { z, zeta, constant }
            })
            .collect();
        values.push(value.clone());
        gains_rev.push(gains);
        ff_rev.push(ffs);
    }

    values.reverse();
    gains_rev.reverse();
    ff_rev.reverse();
    let policies = (0..players)
        .map(|i| AffineFeedbackPolicy {
            gains: gains_rev.iter().map(|g| g[i].clone()).collect(),
            feedforwards: ff_rev.iter().map(|a| a[i].clone()).collect(),
        })
        .collect();
    Ok(LqGameSolution { policies, values })
}
