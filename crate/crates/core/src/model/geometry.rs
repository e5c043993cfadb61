//! Planar geometry: lane reference polylines and convex obstacles.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Degenerate directions (coincident points) are nudged along +x by this much.
pub const DEGENERATE_NUDGE: f64 = 1e-6;

/// Piecewise-linear lane center line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polyline {
    pub points: Vec<[f64; 2]>,
}

/// Squared distance to a polyline together with its derivatives in the
/// query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquaredDistance {
    pub value: f64,
    pub gradient: Vector2<f64>,
    pub hessian: Matrix2<f64>,
}

impl Polyline {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        let line = Polyline { points };
        line.validate()?;
        Ok(line)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::InvalidInput("polyline has no points".into()));
        }
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("polyline has non-finite coordinates".into()));
        }
        Ok(())
    }

    /// Polyline approximation of a circular arc, counterclockwise from
    /// `start_angle` when `sweep` is positive.
    pub fn arc(center: [f64; 2], radius: f64, start_angle: f64, sweep: f64, segments: usize) -> Self {
        let segments = segments.max(1);
        let points = (0..=segments)
            .map(|s| {
                let a = start_angle + sweep * s as f64 / segments as f64;
                [center[0] + radius * a.cos(), center[1] + radius * a.sin()]
            })
            .collect();
        Polyline { points }
    }

    pub fn squared_distance(&self, p: Vector2<f64>) -> SquaredDistance {
        let mut best: Option<SquaredDistance> = None;
        let mut consider = |cand: SquaredDistance| {
            if best.map_or(true, |b| cand.value < b.value) {
                best = Some(cand);
            }
        };
        if self.points.len() == 1 {
            consider(point_term(p, to_vec(self.points[0])));
        }
        for pair in self.points.windows(2) {
            let a = to_vec(pair[0]);
            let b = to_vec(pair[1]);
            let seg = b - a;
            let len2 = seg.norm_squared();
            if len2 == 0.0 {
                consider(point_term(p, a));
                continue;
            }
            let t = (p - a).dot(&seg) / len2;
            if t <= 0.0 {
                consider(point_term(p, a));
            } else if t >= 1.0 {
                consider(point_term(p, b));
            } else {
                let normal = Vector2::new(-seg.y, seg.x) / len2.sqrt();
                let offset = (p - a).dot(&normal);
                consider(SquaredDistance {
                    value: offset * offset,
                    gradient: 2.0 * offset * normal,
                    hessian: 2.0 * normal * normal.transpose(),
                });
            }
        }
        best.expect("validated polyline has at least one point")
    }

    pub fn distance(&self, p: Vector2<f64>) -> f64 {
        self.squared_distance(p).value.sqrt()
    }
}

fn point_term(p: Vector2<f64>, a: Vector2<f64>) -> SquaredDistance {
    let d = p - a;
    SquaredDistance {
        value: d.norm_squared(),
        gradient: 2.0 * d,
        hessian: 2.0 * Matrix2::identity(),
    }
}

fn to_vec(p: [f64; 2]) -> Vector2<f64> {
    Vector2::new(p[0], p[1])
}

/// Convex obstacle region in the plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Obstacle {
    Disc { center: [f64; 2], radius: f64 },
    /// Convex polygon; vertex order may be either orientation.
    Polygon { vertices: Vec<[f64; 2]> },
}

impl Obstacle {
    pub fn validate(&self) -> Result<()> {
        match self {
            Obstacle::Disc { center, radius } => {
                if !(center.iter().all(|v| v.is_finite()) && radius.is_finite() && *radius > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "disc obstacle needs a finite center and positive radius, got radius {radius}"
                    )));
                }
            }
            Obstacle::Polygon { vertices } => {
                if vertices.len() < 3 {
                    return Err(Error::InvalidInput(format!(
                        "polygon obstacle needs at least 3 vertices, got {}",
                        vertices.len()
                    )));
                }
                if vertices.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidInput("polygon obstacle has non-finite vertices".into()));
                }
                let n = vertices.len();
                let sign = orientation(vertices);
                if sign == 0.0 {
                    return Err(Error::InvalidInput("polygon obstacle has zero area".into()));
                }
                for i in 0..n {
                    let a = to_vec(vertices[i]);
                    let b = to_vec(vertices[(i + 1) % n]);
                    let c = to_vec(vertices[(i + 2) % n]);
                    let turn = cross(b - a, c - b);
                    if turn * sign < -1e-12 {
                        return Err(Error::InvalidInput("polygon obstacle is not convex".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Signed penetration of `p` into the obstacle: positive inside, zero
    /// on the boundary, minus the Euclidean clearance outside. Returned
    /// with its gradient in `p`.
    pub fn signed_value(&self, p: Vector2<f64>) -> (f64, Vector2<f64>) {
        match self {
            Obstacle::Disc { center, radius } => {
                let mut d = p - to_vec(*center);
                if d.norm() < DEGENERATE_NUDGE {
                    d.x += DEGENERATE_NUDGE;
                }
                let dist = d.norm();
                (radius - dist, -d / dist)
            }
            Obstacle::Polygon { vertices } => polygon_signed_value(vertices, p),
        }
    }

    /// Supporting halfspace `(n, b)` of the obstacle closest to `nominal`,
    /// so that `n·p - b <= 0` is the safe side.
    pub fn supporting_halfspace(&self, nominal: Vector2<f64>) -> (Vector2<f64>, f64) {
        let (g, n) = self.signed_value(nominal);
        (n, n.dot(&nominal) - g)
    }
}

fn cross(a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

fn orientation(vertices: &[[f64; 2]]) -> f64 {
    let n = vertices.len();
    let area: f64 = (0..n)
        .map(|i| cross(to_vec(vertices[i]), to_vec(vertices[(i + 1) % n])))
        .sum();
    if area > 0.0 {
        1.0
    } else if area < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn polygon_signed_value(vertices: &[[f64; 2]], p: Vector2<f64>) -> (f64, Vector2<f64>) {
    let n = vertices.len();
    let sign = orientation(vertices);
    // outward normal and offset per edge: a·x <= b inside
    let edges: Vec<(Vector2<f64>, f64, Vector2<f64>, Vector2<f64>)> = (0..n)
        .map(|i| {
            let a = to_vec(vertices[i]);
            let b = to_vec(vertices[(i + 1) % n]);
            let e = b - a;
            let outward = Vector2::new(e.y, -e.x).normalize() * sign;
            (outward, outward.dot(&a), a, b)
        })
        .collect();
    let inside = edges.iter().all(|(normal, off, _, _)| normal.dot(&p) - off <= 0.0);
    if inside {
        let (normal, depth) = edges
            .iter()
            .map(|(normal, off, _, _)| (*normal, off - normal.dot(&p)))
            .fold((Vector2::zeros(), f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
        return (depth, -normal);
    }
    let mut best = (f64::INFINITY, Vector2::zeros(), Vector2::zeros());
    for (normal, _, a, b) in &edges {
        let seg = b - a;
        let t = ((p - a).dot(&seg) / seg.norm_squared()).clamp(0.0, 1.0);
        let q = a + seg * t;
        let dist = (p - q).norm();
        if dist < best.0 {
            best = (dist, q, *normal);
        }
    }
    let (dist, q, normal) = best;
    if dist < DEGENERATE_NUDGE {
        return (-dist, -normal);
    }
    (-dist, -(p - q) / dist)
}
