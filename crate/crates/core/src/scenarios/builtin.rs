use std::f64::consts::{FRAC_PI_2, PI};

use super::{AgentConfig, CovarianceConfig, MeasurementKind, NoiseConfig, ScenarioConfig};
use crate::constraints::{ChanceConstraintSpec, ConstraintKind};
use crate::error::{Error, Result};
use crate::model::{Obstacle, PlayerCost, Polyline};
use crate::solver::SolverConfig;

pub const BUILTIN_SCENARIOS: [&str; 3] = ["merge", "intersection", "roundabout"];

const PROBABILITY: f64 = 0.9;
const MIN_DISTANCE: f64 = 3.0;
const NOISE_VARIANCE: f64 = 0.05;
const INITIAL_VARIANCE: f64 = 0.01;
const LANE_WEIGHT: f64 = 10.0;
const SPEED_WEIGHT: f64 = 10.0;
const CONTROL_WEIGHTS: [f64; 2] = [0.2, 0.2];

pub fn builtin_scenario(name: &str) -> Result<ScenarioConfig> {
    match name {
        "merge" => Ok(merge()),
        "intersection" => Ok(intersection()),
        "roundabout" => Ok(roundabout()),
        other => Err(Error::InvalidInput(format!(
            "unknown scenario `{other}`; builtin scenarios are: {}",
            BUILTIN_SCENARIOS.join(", ")
        ))),
    }
}

fn noise() -> NoiseConfig {
    NoiseConfig {
        process: CovarianceConfig::Isotropic(NOISE_VARIANCE),
        measurement: CovarianceConfig::Isotropic(NOISE_VARIANCE),
        initial: CovarianceConfig::Isotropic(INITIAL_VARIANCE),
    }
}

fn cost(lane: Vec<[f64; 2]>, nominal_speed: f64) -> PlayerCost {
    PlayerCost {
        lane: Polyline { points: lane },
        lane_weight: LANE_WEIGHT,
        nominal_speed,
        speed_weight: SPEED_WEIGHT,
        control_weights: CONTROL_WEIGHTS,
    }
}

fn agent(initial_state: [f64; 4], cost: PlayerCost) -> AgentConfig {
    AgentConfig { initial_state, cost }
}

fn pairwise_proximity(players: usize) -> Vec<ChanceConstraintSpec> {
    let mut out = Vec::new();
    for i in 0..players {
        for j in i + 1..players {
            out.push(ChanceConstraintSpec::new(
                ConstraintKind::Proximity {
                    agents: [i, j],
                    min_distance: MIN_DISTANCE,
                },
                PROBABILITY,
            ));
        }
    }
    out
}

fn obstacle(agent: usize, obstacle: Obstacle) -> ChanceConstraintSpec {
    ChanceConstraintSpec::new(ConstraintKind::Obstacle { agent, obstacle }, PROBABILITY)
}

fn disc(x: f64, y: f64, radius: f64) -> Obstacle {
    Obstacle::Disc { center: [x, y], radius }
}

fn square(x0: f64, y0: f64, x1: f64, y1: f64) -> Obstacle {
    Obstacle::Polygon {
        vertices: vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]],
    }
}

/// Main road along y = 0 and an on-ramp joining it from below; boundary
/// posts sit outside both lanes.
fn merge() -> ScenarioConfig {
    let main_speed = 5.0;
    let ramp_speed = 11.0;
    let junction = [10.0, 0.0];
    let ramp_heading: f64 = 0.25;
    let ramp_length = 2.4 * ramp_speed;
    let (sin, cos) = ramp_heading.sin_cos();
    let ramp_start = [junction[0] - ramp_length * cos, junction[1] - ramp_length * sin];
    let ramp_tail = [ramp_start[0] - 10.0 * cos, ramp_start[1] - 10.0 * sin];
    let agents = vec![
        agent([0.0, 0.0, 0.0, main_speed], cost(vec![[-20.0, 0.0], [80.0, 0.0]], main_speed)),
        agent(
            [ramp_start[0], ramp_start[1], ramp_heading, ramp_speed],
            cost(vec![ramp_tail, junction, [80.0, 0.0]], ramp_speed),
        ),
    ];
    let mut constraints = pairwise_proximity(2);
    constraints.push(obstacle(0, disc(15.0, 7.0, 1.5)));
    constraints.push(obstacle(0, disc(37.5, 7.0, 1.5)));
    constraints.push(obstacle(1, disc(37.5, 7.0, 1.5)));
    ScenarioConfig {
        name: "merge".into(),
        horizon_seconds: 3.0,
        steps: 20,
        measurement: MeasurementKind::SpeedScaled,
        noise: noise(),
        agents,
        constraints,
        solver: SolverConfig::default(),
    }
}

/// Four-way crossing: two opposing horizontal lanes and one northbound
/// lane, with building corners at the four quadrants.
fn intersection() -> ScenarioConfig {
    let offset = 2.5;
    let (s0, s1, s2) = (8.0, 4.0, 8.0);
    let agents = vec![
        agent([-8.0, -offset, 0.0, s0], cost(vec![[-40.0, -offset], [40.0, -offset]], s0)),
        agent(
            [offset, -8.0, FRAC_PI_2, s1],
            cost(vec![[offset, -40.0], [offset, 40.0]], s1),
        ),
        agent([14.0, offset, PI, s2], cost(vec![[40.0, offset], [-40.0, offset]], s2)),
    ];
    let corner = 7.0;
    let far = 30.0;
    let corners = [
        square(corner, corner, far, far),
        square(-far, corner, -corner, far),
        square(-far, -far, -corner, -corner),
        square(corner, -far, far, -corner),
    ];
    let mut constraints = pairwise_proximity(3);
    for a in 0..3 {
        for c in &corners {
            constraints.push(obstacle(a, c.clone()));
        }
    }
    ScenarioConfig {
        name: "intersection".into(),
        horizon_seconds: 2.5,
        steps: 16,
        measurement: MeasurementKind::Additive,
        noise: noise(),
        agents,
        constraints,
        solver: SolverConfig::default(),
    }
}

fn ring_point(radius: f64, angle: f64) -> [f64; 2] {
    [radius * angle.cos(), radius * angle.sin()]
}

/// Single-lane roundabout around a central island. Agent 0 circulates and
/// leaves by the east exit, agent 1 enters from the south, agent 2
/// circulates ahead.
fn roundabout() -> ScenarioConfig {
    let radius = 10.0;
    let segments = 24;

    let exit_angle = -PI / 4.0;
    let mut red = Polyline::arc([0.0, 0.0], radius, -PI, exit_angle + PI, segments).points;
    let exit = ring_point(radius, exit_angle);
    red.push([exit[0] + 20.0, exit[1] + 4.0]);

    let entry_x: f64 = 3.0;
    let entry_angle = -(radius * radius - entry_x * entry_x).sqrt().atan2(entry_x);
    let mut blue = vec![[entry_x, -40.0]];
    blue.extend(Polyline::arc([0.0, 0.0], radius, entry_angle, PI, segments).points);

    let green = Polyline::arc([0.0, 0.0], radius, -PI / 6.0, 1.5 * PI, segments).points;

    let tangent = |angle: f64| angle + FRAC_PI_2;
    let red_start = -2.5;
    let green_start = 0.3;
    let (rs, bs, gs) = (8.0, 4.0, 5.0);
    let at = |angle: f64| ring_point(radius, angle);
    let agents = vec![
        agent([at(red_start)[0], at(red_start)[1], tangent(red_start), rs], cost(red, rs)),
        agent([entry_x, -16.0, FRAC_PI_2, bs], cost(blue, bs)),
        agent(
            [at(green_start)[0], at(green_start)[1], tangent(green_start), gs],
            cost(green, gs),
        ),
    ];
    let island = disc(0.0, 0.0, 6.0);
    let mut constraints = pairwise_proximity(3);
    for a in 0..3 {
        constraints.push(obstacle(a, island.clone()));
    }
    ScenarioConfig {
        name: "roundabout".into(),
        horizon_seconds: 2.5,
        steps: 16,
        measurement: MeasurementKind::Additive,
        noise: noise(),
        agents,
        constraints,
        solver: SolverConfig::default(),
    }
}
