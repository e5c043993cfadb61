//! Declarative scenario files and the shipped driving scenarios.
//!
//! Scenarios are TOML documents. Unknown keys are rejected, defaults are
//! filled in on load and written back out by [`ScenarioConfig::to_toml`],
//! so saving a loaded file yields its canonical form.

mod builtin;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use builtin::{builtin_scenario, BUILTIN_SCENARIOS};

use crate::constraints::{ChanceConstraintSpec, ConstraintKind};
use crate::error::{Error, Result};
use crate::model::{
    AdditiveMeasurement, CostModel, GameSpec, GaussianBelief, MeasurementModel, NoiseSpec, PlayerCost,
    SpeedScaledMeasurement, UnicycleDynamics, AGENT_STATE_DIM,
};
use crate::solver::SolverConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasurementKind {
    /// Noise on each agent's block scales with that agent's speed.
    SpeedScaled,
    Additive,
}

/// Covariance given as a scalar variance, a diagonal, or a full matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovarianceConfig {
    Isotropic(f64),
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl CovarianceConfig {
    pub fn to_matrix(&self, dim: usize, field: &str) -> Result<DMatrix<f64>> {
        let bad = |reason: String| Error::Config {
            field: field.into(),
            reason,
        };
        let m = match self {
            CovarianceConfig::Isotropic(v) => DMatrix::identity(dim, dim) * *v,
            CovarianceConfig::Diagonal(d) => {
                if d.len() != dim {
                    return Err(bad(format!("expected {dim} diagonal entries, got {}", d.len())));
                }
                DMatrix::from_diagonal(&DVector::from_column_slice(d))
            }
            CovarianceConfig::Full(rows) => {
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                    return Err(bad(format!("expected a {dim}x{dim} matrix")));
                }
                DMatrix::from_fn(dim, dim, |r, c| rows[r][c])
            }
        };
        crate::model::validate_covariance(field, &m).map_err(|e| bad(e.to_string()))?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub process: CovarianceConfig,
    pub measurement: CovarianceConfig,
    /// Covariance of the initial belief.
    pub initial: CovarianceConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    /// `[x, y, heading, speed]`.
    pub initial_state: [f64; 4],
    pub cost: PlayerCost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub horizon_seconds: f64,
    pub steps: usize,
    pub measurement: MeasurementKind,
    pub noise: NoiseConfig,
    pub agents: Vec<AgentConfig>,
    #[serde(default)]
    pub constraints: Vec<ChanceConstraintSpec>,
    #[serde(default)]
    pub solver: SolverConfig,
}

impl ScenarioConfig {
    pub fn dt(&self) -> f64 {
        self.horizon_seconds / self.steps as f64
    }

    pub fn players(&self) -> usize {
        self.agents.len()
    }

    pub fn validate(&self) -> Result<()> {
        let field = |f: &str, reason: String| Error::Config { field: f.into(), reason };
        if !(self.horizon_seconds.is_finite() && self.horizon_seconds > 0.0) {
            return Err(field("horizon_seconds", format!("must be positive, got {}", self.horizon_seconds)));
        }
        if self.steps == 0 {
            return Err(field("steps", "must be at least 1".into()));
        }
        if self.agents.is_empty() {
            return Err(field("agents", "at least one agent is required".into()));
        }
        for (i, a) in self.agents.iter().enumerate() {
            if a.initial_state.iter().any(|v| !v.is_finite()) {
                return Err(field(&format!("agents[{i}].initial_state"), "must be finite".into()));
            }
            a.cost
                .validate()
                .map_err(|e| field(&format!("agents[{i}].cost"), e.to_string()))?;
        }
        let n = AGENT_STATE_DIM * self.players();
        for (m, c) in self.constraints.iter().enumerate() {
            if !(c.probability > 0.5 && c.probability < 1.0) {
                return Err(field(
                    &format!("constraints[{m}].probability"),
                    format!("must lie in (0.5, 1), got {}", c.probability),
                ));
            }
            c.validate(n, self.steps)
                .map_err(|e| field(&format!("constraints[{m}]"), e.to_string()))?;
        }
        self.solver.validate()?;
        Ok(())
    }

    /// Validated game and solver settings.
    pub fn build(&self) -> Result<(GameSpec, SolverConfig)> {
        self.validate()?;
        let players = self.players();
        let n = AGENT_STATE_DIM * players;
        let measurement: Arc<dyn MeasurementModel> = match self.measurement {
            MeasurementKind::SpeedScaled => Arc::new(SpeedScaledMeasurement { agents: players }),
            MeasurementKind::Additive => Arc::new(AdditiveMeasurement { dim: n }),
        };
        let mean = DVector::from_iterator(n, self.agents.iter().flat_map(|a| a.initial_state));
        let spec = GameSpec {
            horizon: self.steps,
            dt: self.dt(),
            dynamics: Arc::new(UnicycleDynamics::new(players)),
            measurement,
            costs: self
                .agents
                .iter()
                .map(|a| Arc::new(a.cost.clone()) as Arc<dyn CostModel>)
                .collect(),
            constraints: self.constraints.clone(),
            noise: NoiseSpec {
                process: self.noise.process.to_matrix(n, "noise.process")?,
                measurement: self.noise.measurement.to_matrix(n, "noise.measurement")?,
            },
            initial_belief: GaussianBelief {
                mean,
                covariance: self.noise.initial.to_matrix(n, "noise.initial")?,
            },
        };
        spec.validate()?;
        Ok((spec, self.solver.clone()))
    }

    /// Canonical TOML text with every default written out.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config {
            field: "scenario".into(),
            reason: e.to_string(),
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Parse {
            offset: e.span().map_or(0, |s| s.start),
            reason: e.message().to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Obstacles referenced by the constraint list, deduplicated.
    pub fn obstacles(&self) -> Vec<crate::model::Obstacle> {
        let mut out: Vec<crate::model::Obstacle> = Vec::new();
        for c in &self.constraints {
            if let ConstraintKind::Obstacle { obstacle, .. } = &c.kind {
                if !out.contains(obstacle) {
                    out.push(obstacle.clone());
                }
            }
        }
        out
    }
}

/// Parses, validates and builds a scenario document.
pub fn load_scenario(text: &str) -> Result<(GameSpec, SolverConfig)> {
    ScenarioConfig::from_toml(text)?.build()
}

/// Resolves a builtin name or a path to a scenario file.
pub fn resolve_scenario(reference: &str) -> Result<ScenarioConfig> {
    if BUILTIN_SCENARIOS.contains(&reference) {
        return builtin_scenario(reference);
    }
    let path = std::path::Path::new(reference);
    if path.extension().is_some_and(|e| e == "toml") || path.exists() {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidInput(format!("cannot read scenario file {reference}: {e}")))?;
        return ScenarioConfig::from_toml(&text);
    }
    builtin_scenario(reference)
}
