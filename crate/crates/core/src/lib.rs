//! Chance-constrained iterative LQ games under partial observability.
//!
//! Agents share a Gaussian belief over the joint state, propagated by an
//! extended Kalman filter about a nominal trajectory. Probabilistic
//! collision and obstacle constraints are tightened by a covariance-based
//! margin and enforced through an augmented Lagrangian wrapped around an
//! iterative feedback Nash LQ game solver.

pub mod artifacts;
pub mod augmented_lagrangian;
pub mod belief;
pub mod constraints;
pub mod error;
pub mod linalg;
pub mod lq_game;
pub mod model;
pub mod monte_carlo;
pub mod scenarios;
pub mod solver;
pub mod special;

pub use artifacts::TrajectoryFile;
pub use augmented_lagrangian::{MultiplierKey, MultiplierState};
pub use belief::{BeliefTrajectory, Linearization};
pub use constraints::{ChanceConstraintSpec, ConstraintKind, LinearizedConstraint};
pub use error::{Error, Result};
pub use lq_game::{AffineFeedbackPolicy, LQGameStage, PlayerQuadratic, TerminalQuadratic};
pub use model::{ControlSet, GameSpec, GaussianBelief, NoiseSpec};
pub use monte_carlo::{run_trials, MonteCarloReport};
pub use scenarios::{builtin_scenario, load_scenario, ScenarioConfig};
pub use solver::{outer_solve, Solution, SolverConfig, SolverMode};
