//! On-disk trajectory formats.
//!
//! The native format is JSON with an explicit `schema_version`; each
//! covariance is stored as lower-triangular packed rows (row `i` holds
//! columns `0..=i`). The tabular format is CSV with one row per timestep
//! per agent and the columns of [`CSV_HEADER`]; controls are blank on the
//! final timestep. Floats are written in shortest round-trip form, so the
//! conversion is lossless for means and controls.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::belief::BeliefTrajectory;
use crate::error::{Error, Result};
use crate::lq_game::AffineFeedbackPolicy;
use crate::model::{ControlSet, AGENT_CONTROL_DIM, AGENT_STATE_DIM};
use crate::solver::{Solution, SolverMode};

pub const TRAJECTORY_SCHEMA_VERSION: u32 = 1;

pub const CSV_HEADER: [&str; 8] = ["k", "agent", "x", "y", "theta", "v", "omega", "accel"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveMetadata {
    pub scenario: String,
    pub dt: f64,
    pub mode: SolverMode,
    pub converged: bool,
    pub final_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryStep {
    pub k: usize,
    pub mean: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
    /// One vector per player; absent on the final timestep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controls: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyRecord {
    pub player: usize,
    /// `gains[k]` as matrix rows.
    pub gains: Vec<Vec<Vec<f64>>>,
    pub feedforwards: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryFile {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solve: Option<SolveMetadata>,
    pub control_dims: Vec<usize>,
    pub steps: Vec<TrajectoryStep>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub policies: Vec<PolicyRecord>,
}

pub fn pack_lower(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..=i).map(|j| m[(i, j)]).collect()).collect()
}

pub fn unpack_lower(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let mut m = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != i + 1 {
            return Err(Error::InvalidInput(format!(
                "packed covariance row {i} has {} entries, expected {}",
                row.len(),
                i + 1
            )));
        }
        for (j, &v) in row.iter().enumerate() {
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn rows_matrix(rows: &[Vec<f64>], cols: usize) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidInput(format!("gain rows must all have {cols} entries")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

impl TrajectoryFile {
    pub fn from_solution(solution: &Solution, scenario: &str, dt: f64) -> Self {
        let nominal = &solution.trajectory;
        let control_dims = nominal
            .controls
            .first()
            .map(|u| u.iter().map(|c| c.len()).collect())
            .unwrap_or_else(|| solution.policies.iter().map(|p| p.feedforwards.first().map_or(0, |a| a.len())).collect());
        let steps = nominal
            .means
            .iter()
            .enumerate()
            .map(|(k, mean)| TrajectoryStep {
                k,
                mean: mean.iter().copied().collect(),
                covariance: nominal.covariances.get(k).map(pack_lower),
                controls: nominal
                    .controls
                    .get(k)
                    .map(|u| u.iter().map(|c| c.iter().copied().collect()).collect()),
            })
            .collect();
        let policies = solution
            .policies
            .iter()
            .enumerate()
            .map(|(player, p)| PolicyRecord {
                player,
                gains: p.gains.iter().map(matrix_rows).collect(),
                feedforwards: p.feedforwards.iter().map(|a| a.iter().copied().collect()).collect(),
            })
            .collect();
        TrajectoryFile {
            schema_version: TRAJECTORY_SCHEMA_VERSION,
            solve: Some(SolveMetadata {
                scenario: scenario.to_string(),
                dt,
                mode: solution.diagnostics.mode,
                converged: solution.diagnostics.converged,
                final_violation: solution.diagnostics.final_violation,
            }),
            control_dims,
            steps,
            policies,
        }
    }

    pub fn players(&self) -> usize {
        self.control_dims.len()
    }

    /// Checks schema version, step numbering and vector lengths.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != TRAJECTORY_SCHEMA_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported schema_version {}; expected {TRAJECTORY_SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        let state_dim = self.steps.first().map_or(0, |s| s.mean.len());
        let last = self.steps.len().saturating_sub(1);
        for (k, step) in self.steps.iter().enumerate() {
            if step.k != k {
                return Err(Error::InvalidInput(format!("step {k} is labelled k = {}", step.k)));
            }
            if step.mean.len() != state_dim {
                return Err(Error::InvalidInput(format!("mean at step {k} has the wrong length")));
            }
            if let Some(cov) = &step.covariance {
                if cov.len() != state_dim {
                    return Err(Error::InvalidInput(format!("covariance at step {k} has the wrong size")));
                }
                unpack_lower(cov)?;
            }
            match (&step.controls, k == last) {
                (Some(_), true) => {
                    return Err(Error::InvalidInput("the final step carries no controls".into()));
                }
                (None, false) => {
                    return Err(Error::InvalidInput(format!("controls missing at step {k}")));
                }
                (Some(u), false) => {
                    let dims: Vec<usize> = u.iter().map(Vec::len).collect();
                    if dims != self.control_dims {
                        return Err(Error::InvalidInput(format!("control sizes at step {k} do not match control_dims")));
                    }
                }
                (None, true) => {}
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("trajectory files contain only finite data");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TrajectoryFile = serde_json::from_str(text).map_err(|e| json_error(text, &e))?;
        file.validate()?;
        Ok(file)
    }

    /// Nominal trajectory and policies; needs covariances and policies.
    pub fn to_nominal(&self) -> Result<(BeliefTrajectory, Vec<AffineFeedbackPolicy>)> {
        self.validate()?;
        let mut means = Vec::with_capacity(self.steps.len());
        let mut covariances = Vec::with_capacity(self.steps.len());
        let mut controls = Vec::new();
        for step in &self.steps {
            means.push(DVector::from_column_slice(&step.mean));
            let cov = step
                .covariance
                .as_ref()
                .ok_or_else(|| Error::InvalidInput(format!("covariance missing at step {}", step.k)))?;
            covariances.push(unpack_lower(cov)?);
            if let Some(u) = &step.controls {
                controls.push(ControlSet::new(u.iter().map(|c| DVector::from_column_slice(c)).collect())?);
            }
        }
        if self.policies.len() != self.players() {
            return Err(Error::InvalidInput(format!(
                "expected {} policies, found {}",
                self.players(),
                self.policies.len()
            )));
        }
        let state_dim = means.first().map_or(0, |m: &DVector<f64>| m.len());
        let mut policies = Vec::with_capacity(self.players());
        for (i, record) in self.policies.iter().enumerate() {
            if record.player != i || record.gains.len() != controls.len() || record.feedforwards.len() != controls.len() {
                return Err(Error::InvalidInput(format!("policy {i} does not match the trajectory")));
            }
            let gains = record
                .gains
                .iter()
                .map(|g| {
                    let m = rows_matrix(g, state_dim)?;
                    if m.nrows() != self.control_dims[i] {
                        return Err(Error::InvalidInput(format!("gain of player {i} has the wrong row count")));
                    }
                    Ok(m)
                })
                .collect::<Result<Vec<_>>>()?;
            let feedforwards = record
                .feedforwards
                .iter()
                .map(|a| {
                    if a.len() != self.control_dims[i] {
                        return Err(Error::InvalidInput(format!("feedforward of player {i} has the wrong length")));
                    }
                    Ok(DVector::from_column_slice(a))
                })
                .collect::<Result<Vec<_>>>()?;
            policies.push(AffineFeedbackPolicy { gains, feedforwards });
        }
        Ok((BeliefTrajectory { means, covariances, controls }, policies))
    }

    /// Tabular form; requires unicycle agents.
    pub fn to_csv(&self) -> Result<String> {
        self.validate()?;
        let players = self.players();
        if self.control_dims.iter().any(|&d| d != AGENT_CONTROL_DIM) {
            return Err(Error::InvalidInput("tabular export needs two controls per agent".into()));
        }
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(CSV_HEADER).map_err(csv_write_error)?;
        for step in &self.steps {
            if step.mean.len() != players * AGENT_STATE_DIM {
                return Err(Error::InvalidInput("tabular export needs four states per agent".into()));
            }
            for agent in 0..players {
                let mut record = vec![step.k.to_string(), agent.to_string()];
                record.extend(step.mean[AGENT_STATE_DIM * agent..AGENT_STATE_DIM * (agent + 1)].iter().map(f64::to_string));
                match &step.controls {
                    Some(u) => record.extend(u[agent].iter().map(f64::to_string)),
                    None => record.extend([String::new(), String::new()]),
                }
                writer.write_record(&record).map_err(csv_write_error)?;
            }
        }
        let bytes = writer.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is ASCII"))
    }

    /// Inverse of [`TrajectoryFile::to_csv`]; covariances, policies and
    /// solve metadata are not part of the tabular form.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| csv_error(&e))?.clone();
        if header.iter().ne(CSV_HEADER.iter().copied()) {
            return Err(Error::Parse {
                offset: 0,
                reason: format!("expected header `{}`", CSV_HEADER.join(",")),
            });
        }
        let mut rows: BTreeMap<usize, Vec<(usize, Vec<f64>, Option<Vec<f64>>)>> = BTreeMap::new();
        for record in reader.records() {
            let record = record.map_err(|e| csv_error(&e))?;
            let offset = record.position().map_or(0, |p| p.byte() as usize);
            let parse_error = |column: &str, reason: String| Error::Parse {
                offset,
                reason: format!("column `{column}`: {reason}"),
            };
            let int = |i: usize| {
                record[i]
                    .parse::<usize>()
                    .map_err(|e| parse_error(CSV_HEADER[i], e.to_string()))
            };
            let float = |i: usize| {
                record[i]
                    .parse::<f64>()
                    .map_err(|e| parse_error(CSV_HEADER[i], e.to_string()))
            };
            let (k, agent) = (int(0)?, int(1)?);
            let state = (2..6).map(float).collect::<Result<Vec<_>>>()?;
            let controls = if record[6].is_empty() && record[7].is_empty() {
                None
            } else {
                Some((6..8).map(float).collect::<Result<Vec<_>>>()?)
            };
            rows.entry(k).or_default().push((agent, state, controls));
        }

        let players = rows.values().next().map_or(0, Vec::len);
        let mut steps = Vec::with_capacity(rows.len());
        for (index, (k, mut agents)) in rows.into_iter().enumerate() {
            if k != index {
                return Err(Error::InvalidInput(format!("timestep {index} is missing")));
            }
            agents.sort_by_key(|(agent, _, _)| *agent);
            if agents.len() != players || agents.iter().enumerate().any(|(i, (a, _, _))| *a != i) {
                return Err(Error::InvalidInput(format!("timestep {k} does not list agents 0..{players} once each")));
            }
            let with_controls = agents.iter().filter(|(_, _, u)| u.is_some()).count();
            if with_controls != 0 && with_controls != players {
                return Err(Error::InvalidInput(format!("timestep {k} has controls for only some agents")));
            }
            let mean = agents.iter().flat_map(|(_, s, _)| s.iter().copied()).collect();
            let controls = (with_controls == players).then(|| agents.iter().map(|(_, _, u)| u.clone().unwrap()).collect());
            steps.push(TrajectoryStep {
                k,
                mean,
                covariance: None,
                controls,
            });
        }
        let file = TrajectoryFile {
            schema_version: TRAJECTORY_SCHEMA_VERSION,
            solve: None,
            control_dims: vec![AGENT_CONTROL_DIM; players],
            steps,
            policies: Vec::new(),
        };
        file.validate()?;
        Ok(file)
    }
}

fn csv_write_error(e: csv::Error) -> Error {
    Error::InvalidInput(format!("csv output: {e}"))
}

fn csv_error(e: &csv::Error) -> Error {
    Error::Parse {
        offset: e.position().map_or(0, |p| p.byte() as usize),
        reason: e.to_string(),
    }
}

/// Byte offset of a one-based (line, column) position.
pub fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

pub(crate) fn json_error(text: &str, e: &serde_json::Error) -> Error {
    Error::Parse {
        offset: byte_offset(text, e.line(), e.column()),
        reason: e.to_string(),
    }
}
