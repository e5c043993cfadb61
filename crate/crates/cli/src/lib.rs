//! Command-line front end: `solve`, `montecarlo` and `export`.
//!
//! Exit codes: 0 success, 2 usage error, 3 solver did not converge,
//! 4 numerical failure. Output goes to `--out`, or to
//! `$CHANCEGAME_OUT/<scenario>/<command>-<mode>` (`out` when the variable
//! is unset).

pub mod plot;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use chancegame::monte_carlo::{run_model_trials, ClosedLoopModel};
use chancegame::scenarios::resolve_scenario;
use chancegame::solver::convergence_report;
use chancegame::{outer_solve, Error, ScenarioConfig, SolverMode, TrajectoryFile};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

pub const OUTPUT_ENV: &str = "CHANCEGAME_OUT";

#[derive(Debug, Parser)]
#[command(name = "chancegame", version, about = "Chance-constrained dynamic game solver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve a scenario and write the trajectory, diagnostics and plot.
    Solve(SolveArgs),
    /// Evaluate a solution with closed-loop noisy simulations.
    Montecarlo(MonteCarloArgs),
    /// Convert a trajectory file between JSON and CSV.
    Export(ExportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    #[value(alias = "al")]
    AugmentedLagrangian,
    FixedPenalty,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    /// Builtin scenario name or path to a scenario TOML file.
    pub scenario: String,
    #[arg(long, value_enum, default_value_t = ModeArg::AugmentedLagrangian)]
    pub mode: ModeArg,
    /// Penalty weight in fixed-penalty mode.
    #[arg(long, default_value_t = 1.0)]
    pub weight: f64,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct MonteCarloArgs {
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Evaluate a previously written trajectory file instead of solving.
    #[arg(long)]
    pub solution: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Trajectory file in either format.
    pub input: PathBuf,
    /// Target format.
    #[arg(long, value_enum)]
    pub to: Format,
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Overrides {
    pub mode: ModeArg,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Seeds {
    pub base_seed: u64,
    pub trials: u64,
}

/// Everything needed to rerun a command and reproduce its outputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub scenario: String,
    pub scenario_name: String,
    /// Canonical form of the resolved scenario.
    pub scenario_toml: String,
    pub overrides: Overrides,
    pub mode: SolverMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Seeds>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solution_input: Option<String>,
    pub tool_version: String,
    pub wall_time_seconds: f64,
    pub outputs: Vec<String>,
    pub exit_code: i32,
}

/// Failure carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidInput(_) | Error::Config { .. } | Error::Parse { .. } | Error::Dimension { .. } => EXIT_USAGE,
            _ => EXIT_NUMERICAL,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::usage(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str, outputs: &mut Vec<String>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_error(path, e))?;
    outputs.push(path.display().to_string());
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("serializable artifact");
    text.push('\n');
    text
}

fn solver_mode(args: &SolverArgs) -> Result<SolverMode, CliError> {
    match args.mode {
        ModeArg::AugmentedLagrangian => Ok(SolverMode::AugmentedLagrangian),
        ModeArg::FixedPenalty => {
            if !(args.weight.is_finite() && args.weight > 0.0) {
                return Err(CliError::usage("--weight must be positive and finite"));
            }
            Ok(SolverMode::FixedPenalty { weight: args.weight })
        }
    }
}

fn mode_tag(mode: ModeArg) -> &'static str {
    match mode {
        ModeArg::AugmentedLagrangian => "al",
        ModeArg::FixedPenalty => "fixed-penalty",
    }
}

fn output_dir(args: &SolverArgs, scenario: &ScenarioConfig, command: &str) -> Result<PathBuf, CliError> {
    let dir = match &args.out {
        Some(dir) => dir.clone(),
        None => {
            let root = std::env::var_os(OUTPUT_ENV).map_or_else(|| PathBuf::from("out"), PathBuf::from);
            root.join(&scenario.name)
                .join(format!("{command}-{}", mode_tag(args.mode)))
        }
    };
    fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
    Ok(dir)
}

struct Prepared {
    scenario: ScenarioConfig,
    mode: SolverMode,
    dir: PathBuf,
}

fn prepare(args: &SolverArgs, command: &str) -> Result<Prepared, CliError> {
    let mode = solver_mode(args)?;
    let scenario = resolve_scenario(&args.scenario).map_err(|e| CliError::usage(e.to_string()))?;
    let dir = output_dir(args, &scenario, command)?;
    Ok(Prepared { scenario, mode, dir })
}

#[allow(clippy::too_many_arguments)]
fn manifest(
    command: &str,
    args: &SolverArgs,
    prepared: &Prepared,
    seeds: Option<Seeds>,
    solution_input: Option<String>,
    started: Instant,
    outputs: Vec<String>,
    exit_code: i32,
) -> Result<RunManifest, CliError> {
    Ok(RunManifest {
        command: command.into(),
        scenario: args.scenario.clone(),
        scenario_name: prepared.scenario.name.clone(),
        scenario_toml: prepared.scenario.to_toml()?,
        overrides: Overrides {
            mode: args.mode,
            weight: matches!(args.mode, ModeArg::FixedPenalty).then_some(args.weight),
        },
        mode: prepared.mode,
        seeds,
        solution_input,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        wall_time_seconds: started.elapsed().as_secs_f64(),
        outputs,
        exit_code,
    })
}

/// Writes a failure description next to the other artifacts.
fn dump_failure(dir: &Path, error: &CliError) {
    let _ = fs::write(
        dir.join("failure.json"),
        to_json(&serde_json::json!({ "exit_code": error.code, "error": error.message })),
    );
}

pub fn cmd_solve(args: &SolveArgs) -> Result<i32, CliError> {
    let started = Instant::now();
    let prepared = prepare(&args.solver, "solve")?;
    let result = solve_into(&prepared, started);
    let (outputs, code) = match result {
        Ok(v) => v,
        Err(e) => {
            dump_failure(&prepared.dir, &e);
            return Err(e);
        }
    };
    let m = manifest("solve", &args.solver, &prepared, None, None, started, outputs, code)?;
    let mut ignored = Vec::new();
    write_file(&prepared.dir.join("manifest.json"), &to_json(&m), &mut ignored)?;
    Ok(code)
}

fn solve_into(prepared: &Prepared, started: Instant) -> Result<(Vec<String>, i32), CliError> {
    let (spec, mut config) = prepared.scenario.build()?;
    config.mode = prepared.mode;
    let solution = outer_solve(&spec, None, &config)?;
    let elapsed = started.elapsed();
    let file = TrajectoryFile::from_solution(&solution, &prepared.scenario.name, spec.dt);
    let dir = &prepared.dir;
    let mut outputs = Vec::new();
    write_file(&dir.join("trajectory.json"), &file.to_json(), &mut outputs)?;
    write_file(
        &dir.join("diagnostics.json"),
        &to_json(&serde_json::json!({
            "summary": convergence_report(&solution, Some(elapsed)),
            "constraints_violated": solution.final_violation() > config.outer_tolerance,
            "iterations": solution.diagnostics,
        })),
        &mut outputs,
    )?;
    write_file(
        &dir.join("trajectory.svg"),
        &plot::trajectory_svg(&file, Some(&prepared.scenario)),
        &mut outputs,
    )?;
    let code = if solution.converged() { EXIT_OK } else { EXIT_NOT_CONVERGED };
    Ok((outputs, code))
}

pub fn cmd_montecarlo(args: &MonteCarloArgs) -> Result<i32, CliError> {
    let started = Instant::now();
    let prepared = prepare(&args.solver, "montecarlo")?;
    let result = montecarlo_into(args, &prepared);
    let (outputs, code) = match result {
        Ok(v) => v,
        Err(e) => {
            dump_failure(&prepared.dir, &e);
            return Err(e);
        }
    };
    let seeds = Seeds {
        base_seed: args.seed,
        trials: args.trials,
    };
    let solution_input = args.solution.as_ref().map(|p| p.display().to_string());
    let m = manifest("montecarlo", &args.solver, &prepared, Some(seeds), solution_input, started, outputs, code)?;
    let mut ignored = Vec::new();
    write_file(&prepared.dir.join("manifest.json"), &to_json(&m), &mut ignored)?;
    Ok(code)
}

fn montecarlo_into(args: &MonteCarloArgs, prepared: &Prepared) -> Result<(Vec<String>, i32), CliError> {
    let (spec, mut config) = prepared.scenario.build()?;
    config.mode = prepared.mode;
    let (model, converged) = match &args.solution {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            let file = TrajectoryFile::from_json(&text)?;
            let (nominal, policies) = file.to_nominal()?;
            let converged = file.solve.as_ref().is_none_or(|s| s.converged);
            (ClosedLoopModel::new(&nominal, &policies, &spec)?, converged)
        }
        None => {
            let solution = outer_solve(&spec, None, &config)?;
            (ClosedLoopModel::from_solution(&solution, &spec)?, solution.converged())
        }
    };
    let trials = usize::try_from(args.trials).map_err(|_| CliError::usage("--trials is too large"))?;
    let report = run_model_trials(&model, &spec, trials, args.seed)?;
    let mut outputs = Vec::new();
    write_file(&prepared.dir.join("report.json"), &to_json(&report), &mut outputs)?;
    let title = format!(
        "{}: {} of {} trials satisfied ({:.0}%)",
        prepared.scenario.name,
        report.satisfied,
        report.trials,
        100.0 * report.satisfaction_rate
    );
    write_file(
        &prepared.dir.join("histogram.svg"),
        &plot::histogram_svg(&report.histogram, &title),
        &mut outputs,
    )?;
    let code = if converged { EXIT_OK } else { EXIT_NOT_CONVERGED };
    Ok((outputs, code))
}

/// Guesses the input format from the first non-blank character.
fn detect_format(text: &str) -> Format {
    match text.trim_start().chars().next() {
        Some('{') => Format::Json,
        _ => Format::Csv,
    }
}

pub fn cmd_export(args: &ExportArgs) -> Result<i32, CliError> {
    let text = fs::read_to_string(&args.input).map_err(|e| io_error(&args.input, e))?;
    let file = match detect_format(&text) {
        Format::Json => TrajectoryFile::from_json(&text)?,
        Format::Csv => TrajectoryFile::from_csv(&text)?,
    };
    let converted = match args.to {
        Format::Json => file.to_json(),
        Format::Csv => file.to_csv()?,
    };
    match &args.output {
        Some(path) => fs::write(path, converted).map_err(|e| io_error(path, e))?,
        None => print!("{converted}"),
    }
    Ok(EXIT_OK)
}

pub fn run(cli: &Cli) -> Result<i32, CliError> {
    match &cli.command {
        Command::Solve(args) => cmd_solve(args),
        Command::Montecarlo(args) => cmd_montecarlo(args),
        Command::Export(args) => cmd_export(args),
    }
}
