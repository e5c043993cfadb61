use std::path::PathBuf;

use chancegame::scenarios::{resolve_scenario, MeasurementKind, BUILTIN_SCENARIOS};
use chancegame::{builtin_scenario, load_scenario, outer_solve, ConstraintKind, Error, ScenarioConfig};

fn shipped(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("../../scenarios/{name}.toml"))
}

#[test]
fn toml_round_trip_is_byte_identical() {
    for name in BUILTIN_SCENARIOS {
        let config = builtin_scenario(name).unwrap();
        let text = config.to_toml().unwrap();
        let parsed = ScenarioConfig::from_toml(&text).unwrap();
        assert_eq!(parsed, config, "{name}");
        assert_eq!(parsed.to_toml().unwrap(), text, "{name}");
    }
}

#[test]
fn shipped_files_match_builtins() {
    for name in BUILTIN_SCENARIOS {
        let text = std::fs::read_to_string(shipped(name)).unwrap();
        assert_eq!(text, builtin_scenario(name).unwrap().to_toml().unwrap(), "{name}");
        let from_path = resolve_scenario(shipped(name).to_str().unwrap()).unwrap();
        assert_eq!(from_path, builtin_scenario(name).unwrap());
    }
}

#[test]
fn merge_shape() {
    let text = std::fs::read_to_string(shipped("merge")).unwrap();
    let (spec, _) = load_scenario(&text).unwrap();
    assert_eq!(spec.players(), 2);
    assert_eq!(spec.horizon, 20);
    assert!((spec.dt - 0.15).abs() < 1e-15);
    assert_eq!(spec.state_dim(), 8);
    assert_eq!(spec.control_dims(), vec![2, 2]);
    assert!(spec
        .constraints
        .iter()
        .any(|c| matches!(c.kind, ConstraintKind::Proximity { agents: [0, 1], .. })));
}

#[test]
fn intersection_and_roundabout_shape() {
    for name in ["intersection", "roundabout"] {
        let config = builtin_scenario(name).unwrap();
        let (spec, _) = config.build().unwrap();
        assert_eq!(spec.players(), 3, "{name}");
        assert_eq!(spec.horizon, 16);
        assert_eq!(spec.dt, 0.15625);
        assert_eq!(config.measurement, MeasurementKind::Additive);
        // Every pair of agents carries a proximity constraint.
        for pair in [[0, 1], [0, 2], [1, 2]] {
            assert!(
                spec.constraints
                    .iter()
                    .any(|c| matches!(c.kind, ConstraintKind::Proximity { agents, .. } if agents == pair)),
                "{name} {pair:?}"
            );
        }
    }
}

#[test]
fn probability_outside_open_interval_is_rejected() {
    for p in [1.5, 1.0, 0.5, 0.2] {
        let mut config = builtin_scenario("merge").unwrap();
        config.constraints[1].probability = p;
        let text = config.to_toml().unwrap();
        match ScenarioConfig::from_toml(&text) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "constraints[1].probability"),
            other => panic!("p = {p}: {other:?}"),
        }
    }
}

#[test]
fn unknown_builtin_lists_the_valid_names() {
    let err = builtin_scenario("highway").unwrap_err().to_string();
    for name in BUILTIN_SCENARIOS {
        assert!(err.contains(name), "{err}");
    }
    assert!(resolve_scenario("highway").is_err());
}

#[test]
fn unknown_fields_are_rejected() {
    let text = builtin_scenario("merge").unwrap().to_toml().unwrap();
    let extra = text.replacen("steps = 20", "steps = 20\nwind = 3.0", 1);
    assert!(matches!(ScenarioConfig::from_toml(&extra), Err(Error::Parse { .. })));
}

#[test]
fn malformed_toml_reports_an_offset() {
    let text = builtin_scenario("merge").unwrap().to_toml().unwrap();
    let broken = text.replacen("steps = 20", "steps = \"twenty\"", 1);
    match ScenarioConfig::from_toml(&broken) {
        Err(Error::Parse { offset, .. }) => {
            let at = broken.find("steps").unwrap();
            assert!(offset >= at && offset < at + 20, "offset {offset}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn solver_section_defaults_when_omitted() {
    let text = builtin_scenario("merge").unwrap().to_toml().unwrap();
    let cut = text.find("[solver]").unwrap();
    let config = ScenarioConfig::from_toml(&text[..cut]).unwrap();
    assert_eq!(config.solver, chancegame::SolverConfig::default());
}

#[test]
fn bad_covariance_names_its_field() {
    let mut config = builtin_scenario("merge").unwrap();
    config.noise.process = chancegame::scenarios::CovarianceConfig::Diagonal(vec![0.1; 3]);
    match config.build() {
        Err(Error::Config { field, .. }) => assert_eq!(field, "noise.process"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn obstacles_are_deduplicated() {
    let config = builtin_scenario("merge").unwrap();
    let obstacles = config.obstacles();
    assert_eq!(obstacles.len(), 2);
}

#[test]
fn every_builtin_converges() {
    for name in BUILTIN_SCENARIOS {
        let (spec, config) = builtin_scenario(name).unwrap().build().unwrap();
        let solution = outer_solve(&spec, None, &config).unwrap();
        assert!(solution.converged(), "{name}");
        assert!(solution.final_violation() <= config.outer_tolerance, "{name}");
    }
}
