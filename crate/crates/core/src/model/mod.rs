//! Game model: joint state layout, dynamics, measurements, costs and the
//! game definition that ties them together.

mod cost;
mod dynamics;
mod geometry;
mod measurement;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

pub use cost::{
    fd_running_expansion, running_cost, ControlExpansion, CostExpansion, CostModel, PlayerCost, QuadraticCost,
    StateExpansion,
};
pub use dynamics::{
    checked_step, fd_dynamics_jacobians, joint_step, unicycle_step, Dynamics, DynamicsJacobians, LinearDynamics,
    UnicycleDynamics, AGENT_CONTROL_DIM, AGENT_STATE_DIM,
};
pub use geometry::{Obstacle, Polyline, SquaredDistance, DEGENERATE_NUDGE};
pub use measurement::{
    additive_measurement, fd_measurement_jacobians, speed_scaled_measurement, AdditiveMeasurement,
    MeasurementModel, SpeedScaledMeasurement,
};

use crate::constraints::ChanceConstraintSpec;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{all_finite_mat, all_finite_vec, min_eigenvalue};

/// Symmetry and PSD tolerance for covariance matrices.
pub const COVARIANCE_TOL: f64 = 1e-9;

/// Per-player control vectors for one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSet(Vec<DVector<f64>>);

impl ControlSet {
    pub fn new(controls: Vec<DVector<f64>>) -> Result<Self> {
        let set = ControlSet(controls);
        if !set.is_finite() {
            return Err(Error::InvalidInput("non-finite control".into()));
        }
        Ok(set)
    }

    pub fn zeros(dims: &[usize]) -> Self {
        ControlSet(dims.iter().map(|&m| DVector::zeros(m)).collect())
    }

    pub fn from_stacked(dims: &[usize], stacked: &DVector<f64>) -> Result<Self> {
        check_dim("stacked controls", dims.iter().sum(), stacked.len())?;
        let mut offset = 0;
        let parts = dims
            .iter()
            .map(|&m| {
                let part = stacked.rows(offset, m).into_owned();
                offset += m;
                part
            })
            .collect();
        Ok(ControlSet(parts))
    }

    pub fn players(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, player: usize) -> &DVector<f64> {
        &self.0[player]
    }

    pub fn set(&mut self, player: usize, control: DVector<f64>) {
        self.0[player] = control;
    }

    pub fn iter(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.0.iter()
    }

    pub fn stacked(&self) -> DVector<f64> {
        DVector::from_iterator(self.0.iter().map(|u| u.len()).sum(), self.0.iter().flat_map(|u| u.iter().copied()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(all_finite_vec)
    }

    pub fn check_dims(&self, dims: &[usize]) -> Result<()> {
        check_dim("number of players", dims.len(), self.0.len())?;
        for (u, &m) in self.0.iter().zip(dims) {
            check_dim("player control", m, u.len())?;
        }
        Ok(())
    }

    pub fn into_inner(self) -> Vec<DVector<f64>> {
        self.0
    }
}

/// Gaussian belief over the joint state.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let belief = GaussianBelief { mean, covariance };
        belief.validate()?;
        Ok(belief)
    }

    pub fn validate(&self) -> Result<()> {
        check_dim("covariance rows", self.mean.len(), self.covariance.nrows())?;
        check_dim("covariance columns", self.mean.len(), self.covariance.ncols())?;
        if !all_finite_vec(&self.mean) {
            return Err(Error::InvalidInput("belief mean is not finite".into()));
        }
        validate_covariance("belief covariance", &self.covariance)
    }
}

pub(crate) fn validate_covariance(name: &str, cov: &DMatrix<f64>) -> Result<()> {
    if !cov.is_square() || !all_finite_mat(cov) {
        return Err(Error::InvalidInput(format!("{name} must be square and finite")));
    }
    if (cov - cov.transpose()).abs().max() > COVARIANCE_TOL {
        return Err(Error::InvalidInput(format!("{name} is not symmetric")));
    }
    if min_eigenvalue(cov) < -COVARIANCE_TOL {
        return Err(Error::InvalidInput(format!("{name} is not positive semidefinite")));
    }
    Ok(())
}

/// Process and measurement noise covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub process: DMatrix<f64>,
    pub measurement: DMatrix<f64>,
}

impl NoiseSpec {
    pub fn isotropic(process_dim: usize, measurement_dim: usize, variance: f64) -> Self {
        NoiseSpec {
            process: DMatrix::identity(process_dim, process_dim) * variance,
            measurement: DMatrix::identity(measurement_dim, measurement_dim) * variance,
        }
    }
}

/// A fully specified chance-constrained stochastic game.
#[derive(Debug, Clone)]
pub struct GameSpec {
    pub horizon: usize,
    pub dt: f64,
    pub dynamics: Arc<dyn Dynamics>,
    pub measurement: Arc<dyn MeasurementModel>,
    pub costs: Vec<Arc<dyn CostModel>>,
    pub constraints: Vec<ChanceConstraintSpec>,
    pub noise: NoiseSpec,
    pub initial_belief: GaussianBelief,
}

impl GameSpec {
    pub fn players(&self) -> usize {
        self.dynamics.players()
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn control_dims(&self) -> Vec<usize> {
        self.dynamics.control_dims()
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::InvalidInput("horizon must be at least one step".into()));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidInput(format!("dt must be positive, got {}", self.dt)));
        }
        let n = self.state_dim();
        self.initial_belief.validate()?;
        check_dim("initial belief", n, self.initial_belief.mean.len())?;
        check_dim("number of player costs", self.players(), self.costs.len())?;
        check_dim("process noise covariance", self.dynamics.noise_dim(), self.noise.process.nrows())?;
        check_dim("measurement noise covariance", self.measurement.noise_dim(), self.noise.measurement.nrows())?;
        validate_covariance("process noise covariance", &self.noise.process)?;
        validate_covariance("measurement noise covariance", &self.noise.measurement)?;
        for c in &self.constraints {
            c.validate(n, self.horizon)?;
            if c.probability < 0.5 {
                return Err(Error::InvalidInput(format!(
                    "chance threshold {} is below 0.5",
                    c.probability
                )));
            }
        }
        Ok(())
    }
}
