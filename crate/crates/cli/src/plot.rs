//! Static SVG plots.

use std::fmt::Write;

use chancegame::model::{Obstacle, AGENT_STATE_DIM};
use chancegame::monte_carlo::Histogram;
use chancegame::{ScenarioConfig, TrajectoryFile};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const MARGIN: f64 = 50.0;
const PALETTE: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
/// Ellipses are drawn at this many standard deviations.
const ELLIPSE_SIGMAS: f64 = 2.0;

fn color(agent: usize) -> &'static str {
    PALETTE[agent % PALETTE.len()]
}

/// World-to-pixel map with equal axis scales and y pointing up.
struct Frame {
    x0: f64,
    y0: f64,
    scale: f64,
}

impl Frame {
    fn fit(points: &[[f64; 2]], pad: f64) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in points {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        if points.is_empty() {
            (lo, hi) = ([-1.0; 2], [1.0; 2]);
        }
        let span = [(hi[0] - lo[0] + 2.0 * pad).max(1e-6), (hi[1] - lo[1] + 2.0 * pad).max(1e-6)];
        let scale = ((WIDTH - 2.0 * MARGIN) / span[0]).min((HEIGHT - 2.0 * MARGIN) / span[1]);
        let cx = 0.5 * (lo[0] + hi[0]);
        let cy = 0.5 * (lo[1] + hi[1]);
        Frame {
            x0: cx - 0.5 * WIDTH / scale,
            y0: cy - 0.5 * HEIGHT / scale,
            scale,
        }
    }

    fn px(&self, p: [f64; 2]) -> (f64, f64) {
        ((p[0] - self.x0) * self.scale, HEIGHT - (p[1] - self.y0) * self.scale)
    }
}

fn header(out: &mut String) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
}

/// Principal semi-axes and orientation (degrees) of a 2x2 covariance.
pub fn ellipse_axes(sxx: f64, sxy: f64, syy: f64) -> (f64, f64, f64) {
    let mean = 0.5 * (sxx + syy);
    let root = (0.25 * (sxx - syy).powi(2) + sxy * sxy).sqrt();
    let major = (mean + root).max(0.0).sqrt();
    let minor = (mean - root).max(0.0).sqrt();
    let angle = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    (major, minor, angle.to_degrees())
}

/// Nominal paths with position covariance ellipses, lanes and obstacles.
pub fn trajectory_svg(file: &TrajectoryFile, scenario: Option<&ScenarioConfig>) -> String {
    let players = file.players();
    let position = |mean: &[f64], i: usize| [mean[AGENT_STATE_DIM * i], mean[AGENT_STATE_DIM * i + 1]];
    let points: Vec<[f64; 2]> = file
        .steps
        .iter()
        .flat_map(|s| (0..players).map(move |i| position(&s.mean, i)))
        .collect();
    let frame = Frame::fit(&points, 4.0);

    let mut out = String::new();
    header(&mut out);
    if let Some(scenario) = scenario {
        for obstacle in scenario.obstacles() {
            match obstacle {
                Obstacle::Disc { center, radius } => {
                    let (cx, cy) = frame.px(center);
                    let _ = writeln!(
                        out,
                        r##"<circle cx="{cx:.2}" cy="{cy:.2}" r="{:.2}" fill="#bbbbbb" stroke="#555555"/>"##,
                        radius * frame.scale
                    );
                }
                Obstacle::Polygon { vertices } => {
                    let pts: Vec<String> = vertices
                        .iter()
                        .map(|v| {
                            let (x, y) = frame.px(*v);
                            format!("{x:.2},{y:.2}")
                        })
                        .collect();
                    let _ = writeln!(
                        out,
                        r##"<polygon points="{}" fill="#bbbbbb" stroke="#555555"/>"##,
                        pts.join(" ")
                    );
                }
            }
        }
        for (i, agent) in scenario.agents.iter().enumerate() {
            let pts: Vec<String> = agent
                .cost
                .lane
                .points
                .iter()
                .map(|p| {
                    let (x, y) = frame.px(*p);
                    format!("{x:.2},{y:.2}")
                })
                .collect();
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-opacity="0.35" stroke-dasharray="6 4"/>"#,
                pts.join(" "),
                color(i)
            );
        }
    }
    for i in 0..players {
        for step in &file.steps {
            let Some(cov) = &step.covariance else { continue };
            let r = AGENT_STATE_DIM * i;
            let (major, minor, angle) = ellipse_axes(cov[r][r], cov[r + 1][r], cov[r + 1][r + 1]);
            let (cx, cy) = frame.px(position(&step.mean, i));
            let _ = writeln!(
                out,
                r#"<ellipse cx="{cx:.2}" cy="{cy:.2}" rx="{:.2}" ry="{:.2}" transform="rotate({:.2} {cx:.2} {cy:.2})" fill="{c}" fill-opacity="0.15" stroke="{c}" stroke-opacity="0.5"/>"#,
                ELLIPSE_SIGMAS * major * frame.scale,
                ELLIPSE_SIGMAS * minor * frame.scale,
                -angle,
                c = color(i)
            );
        }
        let pts: Vec<String> = file
            .steps
            .iter()
            .map(|s| {
                let (x, y) = frame.px(position(&s.mean, i));
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
            pts.join(" "),
            color(i)
        );
        if let Some(start) = file.steps.first() {
            let (x, y) = frame.px(position(&start.mean, i));
            let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="4" fill="{}"/>"#, color(i));
        }
    }
    let title = file.solve.as_ref().map_or(String::new(), |s| {
        format!("{} ({})", s.scenario, if s.converged { "converged" } else { "not converged" })
    });
    let _ = writeln!(
        out,
        r#"<text x="{MARGIN}" y="25" font-family="sans-serif" font-size="16">{title}</text>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{MARGIN}" y="{:.0}" font-family="sans-serif" font-size="12">ellipses: {ELLIPSE_SIGMAS} sigma position covariance</text>"#,
        HEIGHT - 15.0
    );
    out.push_str("</svg>\n");
    out
}

/// Bar chart of per-trial maximum constraint values with the zero line.
pub fn histogram_svg(histogram: &Histogram, title: &str) -> String {
    let mut out = String::new();
    header(&mut out);
    let lo = histogram.edges.first().copied().unwrap_or(-1.0).min(0.0);
    let hi = histogram.edges.last().copied().unwrap_or(0.0).max(0.0);
    let span = (hi - lo).max(1e-12);
    let peak = histogram.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let x = |v: f64| MARGIN + (v - lo) / span * plot_w;
    let y = |c: f64| HEIGHT - MARGIN - c / peak * plot_h;

    for (b, &count) in histogram.counts.iter().enumerate() {
        let (left, right) = (histogram.edges[b], histogram.edges[b + 1]);
        let fill = if left >= 0.0 { "#d62728" } else { "#1f77b4" };
        let _ = writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}" stroke="white"/>"#,
            x(left),
            y(count as f64),
            (x(right) - x(left)).max(0.0),
            HEIGHT - MARGIN - y(count as f64)
        );
    }
    let _ = writeln!(
        out,
        r#"<line x1="{MARGIN}" y1="{b:.2}" x2="{:.2}" y2="{b:.2}" stroke="black"/>"#,
        WIDTH - MARGIN,
        b = HEIGHT - MARGIN
    );
    let _ = writeln!(
        out,
        r#"<line x1="{z:.2}" y1="{MARGIN}" x2="{z:.2}" y2="{:.2}" stroke="black" stroke-dasharray="4 3"/>"#,
        HEIGHT - MARGIN,
        z = x(0.0)
    );
    for (v, anchor) in [(lo, "start"), (0.0, "middle"), (hi, "end")] {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.0}" font-family="sans-serif" font-size="12" text-anchor="{anchor}">{v:.2}</text>"#,
            x(v),
            HEIGHT - MARGIN + 18.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{MARGIN}" y="25" font-family="sans-serif" font-size="16">{title}</text>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.0}" y="{:.0}" font-family="sans-serif" font-size="12" text-anchor="middle">maximum constraint value per trial</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        out,
        r#"<text x="15" y="{MARGIN}" font-family="sans-serif" font-size="12">max count {peak}</text>"#
    );
    out.push_str("</svg>\n");
    out
}
