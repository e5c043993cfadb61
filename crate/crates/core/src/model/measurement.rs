//! Joint measurement models shared by all players.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use super::dynamics::AGENT_STATE_DIM;
use crate::error::{check_dim, Result};
use crate::linalg::{fd_jacobian, FD_STEP};

/// `y = h(x, v)` with Jacobians `H = dh/dx`, `V = dh/dv` at `v = 0`.
pub trait MeasurementModel: fmt::Debug + Send + Sync {
    fn output_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn measure(&self, state: &DVector<f64>, noise: &DVector<f64>) -> DVector<f64>;

    fn jacobians(&self, state: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        fd_measurement_jacobians(self, state)
    }
}

pub fn fd_measurement_jacobians<M: MeasurementModel + ?Sized>(
    model: &M,
    state: &DVector<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let zero = DVector::zeros(model.noise_dim());
    let h = fd_jacobian(|x| model.measure(x, &zero), state, FD_STEP);
    let v = fd_jacobian(|v| model.measure(state, v), &zero, FD_STEP);
    (h, v)
}

/// Each agent's full state block is observed with noise scaled by that
/// agent's speed: `y^i = x^i + speed^i * v^i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpeedScaledMeasurement {
    pub agents: usize,
}

impl MeasurementModel for SpeedScaledMeasurement {
    fn output_dim(&self) -> usize {
        AGENT_STATE_DIM * self.agents
    }

    fn noise_dim(&self) -> usize {
        AGENT_STATE_DIM * self.agents
    }

    fn measure(&self, state: &DVector<f64>, noise: &DVector<f64>) -> DVector<f64> {
        let mut y = state.clone();
        for i in 0..self.agents {
            let o = AGENT_STATE_DIM * i;
            let speed = state[o + 3];
            for c in 0..AGENT_STATE_DIM {
                y[o + c] += speed * noise[o + c];
            }
        }
        y
    }

    fn jacobians(&self, state: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.output_dim();
        let mut v = DMatrix::zeros(n, n);
        for i in 0..self.agents {
            let o = AGENT_STATE_DIM * i;
            for c in 0..AGENT_STATE_DIM {
                v[(o + c, o + c)] = state[o + 3];
            }
        }
        (DMatrix::identity(n, n), v)
    }
}

/// Full-state observation with additive noise, `y = x + v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdditiveMeasurement {
    pub dim: usize,
}

impl MeasurementModel for AdditiveMeasurement {
    fn output_dim(&self) -> usize {
        self.dim
    }

    fn noise_dim(&self) -> usize {
        self.dim
    }

    fn measure(&self, state: &DVector<f64>, noise: &DVector<f64>) -> DVector<f64> {
        state + noise
    }

    fn jacobians(&self, _state: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        (DMatrix::identity(self.dim, self.dim), DMatrix::identity(self.dim, self.dim))
    }
}

/// Checked evaluation of the speed-scaled model on a unicycle joint state.
pub fn speed_scaled_measurement(state: &DVector<f64>, noise: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim("measurement noise", state.len(), noise.len())?;
    if state.len() % AGENT_STATE_DIM != 0 {
        return Err(crate::Error::InvalidInput(format!(
            "joint state length {} is not a multiple of {AGENT_STATE_DIM}",
            state.len()
        )));
    }
    let model = SpeedScaledMeasurement {
        agents: state.len() / AGENT_STATE_DIM,
    };
    Ok(model.measure(state, noise))
}

/// Checked evaluation of the additive model.
pub fn additive_measurement(state: &DVector<f64>, noise: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim("measurement noise", state.len(), noise.len())?;
    Ok(state + noise)
}
