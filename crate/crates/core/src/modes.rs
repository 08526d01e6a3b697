//! Land/air mode labels with hysteresis, and per-mode energy accounting.

use keynav_simenv::{dist2, Point3};
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mode {
    Land,
    Air,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Land => "LAND",
            Mode::Air => "AIR",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotParams {
    /// Body height while rolling, meters.
    pub h_r: f64,
    pub v_land: f64,
    pub v_air: f64,
    /// Power draw, watts.
    pub p_land: f64,
    pub p_air: f64,
    /// A segment is airborne once its peak exceeds `h_r + epsilon`.
    pub epsilon: f64,
    /// Airborne runs end only below `h_r + epsilon - hysteresis`.
    pub hysteresis: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        Self {
            h_r: 0.3,
            v_land: 0.729,
            v_air: 1.0,
            p_land: 85.5,
            p_air: 1500.0,
            epsilon: 0.15,
            hysteresis: 0.1,
        }
    }
}

impl RobotParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.h_r,
            self.v_land,
            self.v_air,
            self.p_land,
            self.p_air,
            self.epsilon,
            self.hysteresis,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(config(format!(
                "robot parameters must be positive: {self:?}"
            )));
        }
        if self.p_air <= self.p_land {
            return Err(config("flight power must exceed rolling power"));
        }
        Ok(())
    }
}

/// Hysteresis state carried across segments (and across planning steps).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModeTracker {
    pub current: Mode,
}

impl ModeTracker {
    pub fn new(initial: Mode) -> Self {
        Self { current: initial }
    }

    /// Label for a segment peaking at `max_z`.
    pub fn update(&mut self, max_z: f64, params: &RobotParams) -> Mode {
        let rise = max_z - params.h_r;
        self.current = match self.current {
            Mode::Land if rise > params.epsilon => Mode::Air,
            // the tiny slack keeps a peak exactly on the exit threshold airborne
            Mode::Air if rise < params.epsilon - params.hysteresis - 1e-9 => Mode::Land,
            m => m,
        };
        self.current
    }
}

pub fn max_z(segment: &[Point3]) -> f64 {
    segment
        .iter()
        .map(|p| p[2])
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Labels every segment, starting from `initial`.
pub fn assign_modes(segments: &[Vec<Point3>], params: &RobotParams, initial: Mode) -> Vec<Mode> {
    let mut tracker = ModeTracker::new(initial);
    segments
        .iter()
        .map(|s| tracker.update(max_z(s), params))
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub energy_j: f64,
    pub time_s: f64,
    pub land_length_m: f64,
    pub air_length_m: f64,
}

impl EnergyReport {
    /// Adds a stretch of `length` meters travelled in `mode`.
    pub fn add(&mut self, mode: Mode, length: f64, params: &RobotParams) {
        let (v, p) = match mode {
            Mode::Land => {
                self.land_length_m += length;
                (params.v_land, params.p_land)
            }
            Mode::Air => {
                self.air_length_m += length;
                (params.v_air, params.p_air)
            }
        };
        let t = length / v;
        self.time_s += t;
        self.energy_j += p * t;
    }
}

pub fn polyline_length(points: &[Point3]) -> f64 {
    points.windows(2).map(|w| dist2(w[0], w[1]).sqrt()).sum()
}

/// Energy, time and per-mode lengths of labelled segments.
pub fn account_energy(
    segments: &[Vec<Point3>],
    modes: &[Mode],
    params: &RobotParams,
) -> EnergyReport {
    let mut r = EnergyReport::default();
    for (seg, &mode) in segments.iter().zip(modes) {
        r.add(mode, polyline_length(seg), params);
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calibrated_land_row() {
        let p = RobotParams::default();
        let mut r = EnergyReport::default();
        r.add(Mode::Land, 8.6, &p);
        assert!((r.time_s - 11.797).abs() < 1e-3);
        assert!((r.energy_j - 1008.64).abs() < 0.01);
    }

    #[test]
    fn hysteresis_trace() {
        let p = RobotParams::default();
        let seg = |z: f64| vec![[0.0, 0.0, 0.3], [1.0, 0.0, z]];
        let labels = assign_modes(&[seg(0.3), seg(0.5), seg(0.35)], &p, Mode::Land);
        assert_eq!(labels, vec![Mode::Land, Mode::Air, Mode::Air]);
        let labels = assign_modes(&[seg(1.2), seg(0.3)], &p, Mode::Land);
        assert_eq!(labels, vec![Mode::Air, Mode::Land]);
    }
}
