//! Discrete-time joint dynamics.

use std::fmt;

use nalgebra::{DMatrix, DVector, Vector2, Vector4};

use super::ControlSet;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{all_finite_vec, fd_jacobian, FD_STEP};

/// States per agent for the unicycle model: x, y, heading, speed.
pub const AGENT_STATE_DIM: usize = 4;
/// Controls per agent for the unicycle model: yaw rate, acceleration.
pub const AGENT_CONTROL_DIM: usize = 2;

/// Jacobians of the dynamics at a nominal point with zero process noise.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsJacobians {
    pub a: DMatrix<f64>,
    pub b: Vec<DMatrix<f64>>,
    pub w: DMatrix<f64>,
}

/// A discrete-time N-player dynamics map `x' = f(x, u^1..u^N, w)`.
///
/// Implementations may assume that dimensions were checked by the caller.
pub trait Dynamics: fmt::Debug + Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dims(&self) -> Vec<usize>;
    fn noise_dim(&self) -> usize {
        self.state_dim()
    }

    fn step(&self, state: &DVector<f64>, controls: &ControlSet, noise: &DVector<f64>, dt: f64) -> DVector<f64>;

    /// Jacobians at `(state, controls, w = 0)`. The default uses central
    /// finite differences; models with closed forms should override it.
    fn jacobians(&self, state: &DVector<f64>, controls: &ControlSet, dt: f64) -> DynamicsJacobians {
        fd_dynamics_jacobians(self, state, controls, dt)
    }

    fn players(&self) -> usize {
        self.control_dims().len()
    }
}

/// Finite-difference Jacobians of any dynamics model.
pub fn fd_dynamics_jacobians<D: Dynamics + ?Sized>(
    dynamics: &D,
    state: &DVector<f64>,
    controls: &ControlSet,
    dt: f64,
) -> DynamicsJacobians {
    let zero_noise = DVector::zeros(dynamics.noise_dim());
    let a = fd_jacobian(|x| dynamics.step(x, controls, &zero_noise, dt), state, FD_STEP);
    let b = (0..controls.players())
        .map(|j| {
            fd_jacobian(
                |uj| {
                    let mut perturbed = controls.clone();
                    perturbed.set(j, uj.clone());
                    dynamics.step(state, &perturbed, &zero_noise, dt)
                },
                controls.get(j),
                FD_STEP,
            )
        })
        .collect();
    let w = fd_jacobian(|w| dynamics.step(state, controls, w, dt), &zero_noise, FD_STEP);
    DynamicsJacobians { a, b, w }
}

/// Validated call into a dynamics model.
pub fn checked_step(
    dynamics: &dyn Dynamics,
    state: &DVector<f64>,
    controls: &ControlSet,
    noise: &DVector<f64>,
    dt: f64,
) -> Result<DVector<f64>> {
    check_dim("state", dynamics.state_dim(), state.len())?;
    check_dim("noise", dynamics.noise_dim(), noise.len())?;
    controls.check_dims(&dynamics.control_dims())?;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
    }
    if !all_finite_vec(state) || !all_finite_vec(noise) || !controls.is_finite() {
        return Err(Error::InvalidInput("non-finite dynamics input".into()));
    }
    Ok(dynamics.step(state, controls, noise, dt))
}

/// Explicit-Euler unicycle step for a single agent.
pub fn unicycle_step(
    state: &Vector4<f64>,
    control: &Vector2<f64>,
    noise: &Vector4<f64>,
    dt: f64,
) -> Result<Vector4<f64>> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
    }
    if state.iter().chain(control.iter()).chain(noise.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite unicycle input".into()));
    }
    Ok(euler(state, control, dt) + noise)
}

fn euler(s: &Vector4<f64>, u: &Vector2<f64>, dt: f64) -> Vector4<f64> {
    let (theta, v) = (s[2], s[3]);
    Vector4::new(
        s[0] + v * theta.cos() * dt,
        s[1] + v * theta.sin() * dt,
        theta + u[0] * dt,
        v + u[1] * dt,
    )
}

/// N independent unicycles with additive process noise on the full state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnicycleDynamics {
    pub agents: usize,
}

impl UnicycleDynamics {
    pub fn new(agents: usize) -> Self {
        UnicycleDynamics { agents }
    }
}

impl Dynamics for UnicycleDynamics {
    fn state_dim(&self) -> usize {
        AGENT_STATE_DIM * self.agents
    }

    fn control_dims(&self) -> Vec<usize> {
        vec![AGENT_CONTROL_DIM; self.agents]
    }

    fn step(&self, state: &DVector<f64>, controls: &ControlSet, noise: &DVector<f64>, dt: f64) -> DVector<f64> {
        let mut next = DVector::zeros(state.len());
        for i in 0..self.agents {
            let s = state.fixed_rows::<4>(4 * i).into_owned();
            let u = controls.get(i).fixed_rows::<2>(0).into_owned();
            let out = euler(&s, &u, dt) + noise.fixed_rows::<4>(4 * i);
            next.fixed_rows_mut::<4>(4 * i).copy_from(&out);
        }
        next
    }

    fn jacobians(&self, state: &DVector<f64>, _controls: &ControlSet, dt: f64) -> DynamicsJacobians {
        let n = self.state_dim();
        let mut a = DMatrix::identity(n, n);
        let mut b = Vec::with_capacity(self.agents);
        for i in 0..self.agents {
            let o = 4 * i;
            let (theta, v) = (state[o + 2], state[o + 3]);
            a[(o, o + 2)] = -v * theta.sin() * dt;
            a[(o, o + 3)] = theta.cos() * dt;
            a[(o + 1, o + 2)] = v * theta.cos() * dt;
            a[(o + 1, o + 3)] = theta.sin() * dt;
            let mut bi = DMatrix::zeros(n, 2);
            bi[(o + 2, 0)] = dt;
            bi[(o + 3, 1)] = dt;
            b.push(bi);
        }
        DynamicsJacobians {
            a,
            b,
            w: DMatrix::identity(n, n),
        }
    }
}

/// Joint unicycle step over all agents, with dimension and finiteness checks.
pub fn joint_step(state: &DVector<f64>, controls: &ControlSet, noise: &DVector<f64>, dt: f64) -> Result<DVector<f64>> {
    if state.len() % AGENT_STATE_DIM != 0 {
        return Err(Error::InvalidInput(format!(
            "joint state length {} is not a multiple of {AGENT_STATE_DIM}",
            state.len()
        )));
    }
    let dynamics = UnicycleDynamics::new(state.len() / AGENT_STATE_DIM);
    checked_step(&dynamics, state, controls, noise, dt)
}

/// Time-invariant linear dynamics `x' = A x + sum_j B_j u^j + W w`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDynamics {
    pub a: DMatrix<f64>,
    pub b: Vec<DMatrix<f64>>,
    pub w: DMatrix<f64>,
}

impl LinearDynamics {
    pub fn new(a: DMatrix<f64>, b: Vec<DMatrix<f64>>) -> Result<Self> {
        let n = a.nrows();
        check_dim("linear dynamics A columns", n, a.ncols())?;
        for bj in &b {
            check_dim("linear dynamics B rows", n, bj.nrows())?;
        }
        Ok(LinearDynamics {
            w: DMatrix::identity(n, n),
            a,
            b,
        })
    }
}

impl Dynamics for LinearDynamics {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn control_dims(&self) -> Vec<usize> {
        self.b.iter().map(|b| b.ncols()).collect()
    }

    fn noise_dim(&self) -> usize {
        self.w.ncols()
    }

    fn step(&self, state: &DVector<f64>, controls: &ControlSet, noise: &DVector<f64>, _dt: f64) -> DVector<f64> {
        let mut next = &self.a * state + &self.w * noise;
        for (bj, uj) in self.b.iter().zip(controls.iter()) {
            next += bj * uj;
        }
        next
    }

    fn jacobians(&self, _state: &DVector<f64>, _controls: &ControlSet, _dt: f64) -> DynamicsJacobians {
        DynamicsJacobians {
            a: self.a.clone(),
            b: self.b.clone(),
            w: self.w.clone(),
        }
    }
}
