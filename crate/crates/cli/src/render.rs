//! SVG plots of planned trajectories and navigation episodes: a top-down
//! (x–y) panel above a side (x–z) panel, path colored by locomotion mode,
//! with the scene's occupancy projected underneath when available.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use keynav_core::modes::Mode;
use keynav_core::navigator::StepRecord;
use keynav_simenv::{Point3, VoxelScene};
use serde::Deserialize;

const PANEL_W: f64 = 800.0;
const PANEL_H: f64 = 320.0;
const PAD: f64 = 40.0;
const LAND: &str = "#1f77b4";
const AIR: &str = "#d62728";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Track {
    pub points: Vec<Point3>,
    pub modes: Vec<Mode>,
    pub keypoints: Vec<Point3>,
    pub start: Option<Point3>,
    pub goal: Option<Point3>,
}

#[derive(Debug, Deserialize)]
pub struct TrajectoryRow {
    pub index: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub segment: usize,
    pub mode: Mode,
}

pub fn read_trajectory_csv(path: &Path) -> Result<Track> {
    let mut rd =
        csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut track = Track::default();
    for row in rd.deserialize() {
        let row: TrajectoryRow = row.with_context(|| format!("reading {}", path.display()))?;
        track.points.push([row.x, row.y, row.z]);
        track.modes.push(row.mode);
    }
    track.start = track.points.first().copied();
    Ok(track)
}

pub fn read_episode_jsonl(path: &Path) -> Result<Track> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut track = Track::default();
    for (n, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let value: serde_json::Value =
            serde_json::from_str(line).with_context(|| format!("{}:{}", path.display(), n + 1))?;
        if value.get("summary").is_some() {
            let point = |k: &str| {
                value
                    .get(k)
                    .and_then(|v| serde_json::from_value::<Point3>(v.clone()).ok())
            };
            track.start = point("start");
            track.goal = point("goal");
            continue;
        }
        let rec: StepRecord = serde_json::from_value(value)
            .with_context(|| format!("{}:{}", path.display(), n + 1))?;
        track.points.push(rec.position);
        track.modes.push(rec.mode);
    }
    if let Some(s) = track.start {
        track.points.insert(0, s);
        let first = track.modes.first().copied().unwrap_or(Mode::Land);
        track.modes.insert(0, first);
    }
    Ok(track)
}

/// Reads a track by extension: `.csv` trajectories or `.jsonl` episodes.
pub fn read_track(path: &Path) -> Result<Track> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_trajectory_csv(path),
        Some("jsonl") => read_episode_jsonl(path),
        _ => bail!(
            "cannot render {}: expected a .csv trajectory or .jsonl episode",
            path.display()
        ),
    }
}

/// World rectangle → pixel panel, uniform scale, y up.
struct Panel {
    top: f64,
    lo: [f64; 2],
    scale: f64,
    height: f64,
}

impl Panel {
    fn new(top: f64, lo: [f64; 2], hi: [f64; 2]) -> Self {
        let (dx, dy) = ((hi[0] - lo[0]).max(1e-6), (hi[1] - lo[1]).max(1e-6));
        let scale = (PANEL_W / dx).min(PANEL_H / dy);
        Self {
            top,
            lo,
            scale,
            height: dy * scale,
        }
    }

    fn px(&self, u: f64, v: f64) -> (f64, f64) {
        (
            PAD + (u - self.lo[0]) * self.scale,
            self.top + self.height - (v - self.lo[1]) * self.scale,
        )
    }
}

fn bounds(track: &Track, scene: Option<&VoxelScene>) -> (Point3, Point3) {
    if let Some(s) = scene {
        return s.bounds();
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    let extra = track
        .start
        .iter()
        .chain(track.goal.iter())
        .chain(track.keypoints.iter());
    for p in track.points.iter().chain(extra) {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    if !lo[0].is_finite() {
        return ([0.0; 3], [1.0; 3]);
    }
    lo[2] = lo[2].min(0.0);
    for a in 0..3 {
        lo[a] -= 0.5;
        hi[a] += 0.5;
    }
    (lo, hi)
}

/// Occupancy projected along one axis: shade by the occupied fraction.
fn draw_occupancy(svg: &mut String, panel: &Panel, scene: &VoxelScene, drop_axis: usize) {
    let [nx, ny, nz] = scene.dims();
    let vs = scene.voxel_size();
    let o = scene.origin();
    let (nv, nd) = if drop_axis == 2 { (ny, nz) } else { (nz, ny) };
    for i in 0..nx {
        for v in 0..nv {
            let hits = (0..nd)
                .filter(|&d| {
                    let (j, k) = if drop_axis == 2 { (v, d) } else { (d, v) };
                    scene.occupied(i, j, k)
                })
                .count();
            if hits == 0 {
                continue;
            }
            let u0 = o[0] + i as f64 * vs;
            let v0 = o[if drop_axis == 2 { 1 } else { 2 }] + v as f64 * vs;
            let (x, y) = panel.px(u0, v0 + vs);
            let side = vs * panel.scale;
            let alpha = 0.2 + 0.6 * hits as f64 / nd as f64;
            let _ = writeln!(
                svg,
                r##"<rect x="{x:.2}" y="{y:.2}" width="{side:.2}" height="{side:.2}" fill="#555" fill-opacity="{alpha:.2}"/>"##
            );
        }
    }
}

fn draw_path(svg: &mut String, panel: &Panel, track: &Track, axis: usize) {
    let n = track.points.len();
    let mut s = 0;
    while s + 1 < n {
        let mode = track.modes.get(s + 1).copied().unwrap_or(Mode::Land);
        let mut e = s + 1;
        while e + 1 < n && track.modes.get(e + 1).copied().unwrap_or(Mode::Land) == mode {
            e += 1;
        }
        let pts: Vec<String> = track.points[s..=e]
            .iter()
            .map(|p| {
                let (x, y) = panel.px(p[0], p[axis]);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let color = if mode == Mode::Air { AIR } else { LAND };
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        s = e;
    }
    for k in &track.keypoints {
        let (x, y) = panel.px(k[0], k[axis]);
        let _ = writeln!(
            svg,
            r##"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="none" stroke="#333"/>"##
        );
    }
    if let Some(p) = track.start {
        let (x, y) = panel.px(p[0], p[axis]);
        let _ = writeln!(
            svg,
            r##"<circle cx="{x:.2}" cy="{y:.2}" r="5" fill="#2ca02c"/>"##
        );
    }
    if let Some(g) = track.goal {
        let (x, y) = panel.px(g[0], g[axis]);
        let _ = writeln!(
            svg,
            r##"<path d="M{:.2},{:.2} L{:.2},{:.2} M{:.2},{:.2} L{:.2},{:.2}" stroke="#ff7f0e" stroke-width="3"/>"##,
            x - 6.0,
            y - 6.0,
            x + 6.0,
            y + 6.0,
            x - 6.0,
            y + 6.0,
            x + 6.0,
            y - 6.0
        );
    }
}

pub fn render_svg(track: &Track, scene: Option<&VoxelScene>, title: &str) -> String {
    let (lo, hi) = bounds(track, scene);
    let top = Panel::new(PAD, [lo[0], lo[1]], [hi[0], hi[1]]);
    let side = Panel::new(2.0 * PAD + top.height, [lo[0], lo[2]], [hi[0], hi[2]]);
    let width = PANEL_W + 2.0 * PAD;
    let height = side.top + side.height + PAD;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{PAD}" y="20">{}</text>"#, escape(title));
    for (panel, axis, label) in [(&top, 1, "top view (x, y)"), (&side, 2, "side view (x, z)")] {
        let (x0, y0) = panel.px(panel.lo[0], panel.lo[1]);
        let w = (hi[0] - lo[0]) * panel.scale;
        let _ = writeln!(
            svg,
            r##"<rect x="{x0:.2}" y="{:.2}" width="{w:.2}" height="{:.2}" fill="none" stroke="#999"/>"##,
            y0 - panel.height,
            panel.height
        );
        let _ = writeln!(
            svg,
            r#"<text x="{x0:.2}" y="{:.2}">{label}</text>"#,
            y0 - panel.height - 4.0
        );
        if let Some(s) = scene {
            draw_occupancy(&mut svg, panel, s, 3 - axis);
        }
        draw_path(&mut svg, panel, track, axis);
    }
    let ly = height - 12.0;
    let _ = writeln!(
        svg,
        r##"<text x="{PAD}" y="{ly:.0}"><tspan fill="{LAND}">— land</tspan>  <tspan fill="{AIR}">— air</tspan>  <tspan fill="#2ca02c">● start</tspan>  <tspan fill="#ff7f0e">✕ goal</tspan></text>"##
    );
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
