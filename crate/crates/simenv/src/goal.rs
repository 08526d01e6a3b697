use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::collision::point_collides;
use crate::error::{Result, SimError};
use crate::scene::VoxelScene;
use crate::Point3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GoalMode {
    Land,
    Air,
    Mixed,
}

impl fmt::Display for GoalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GoalMode::Land => "land",
            GoalMode::Air => "air",
            GoalMode::Mixed => "mixed",
        })
    }
}

impl FromStr for GoalMode {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "land" => Ok(GoalMode::Land),
            "air" => Ok(GoalMode::Air),
            "mixed" => Ok(GoalMode::Mixed),
            _ => Err(SimError::DegenerateParams(format!(
                "unknown goal mode '{s}'"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GoalConfig {
    /// Robot body height; land goals sit exactly here.
    pub h_r: f64,
    pub air_z: (f64, f64),
    /// Probability of a land goal in mixed mode.
    pub land_ratio: f64,
    pub safety_radius: f64,
    /// World x/y window for goals; `None` uses the grid bounds less a margin.
    pub x_range: Option<(f64, f64)>,
    pub y_range: Option<(f64, f64)>,
    pub max_tries: usize,
}

impl Default for GoalConfig {
    fn default() -> Self {
        Self {
            h_r: 0.3,
            air_z: (0.8, 2.5),
            land_ratio: 0.5,
            safety_radius: crate::collision::DEFAULT_SAFETY_RADIUS,
            x_range: None,
            y_range: None,
            max_tries: 1000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub position: Point3,
    /// `true` for a land goal.
    pub land: bool,
}

impl Goal {
    /// Goal expressed in the frame of a robot at `position` with heading `yaw`.
    pub fn in_robot_frame(&self, position: Point3, yaw: f64) -> Point3 {
        to_robot_frame(self.position, position, yaw)
    }
}

/// World point → robot frame: x forward and y left of the robot's ground
/// footprint, z kept as height above ground so altitude rules stay absolute.
pub fn to_robot_frame(p: Point3, position: Point3, yaw: f64) -> Point3 {
    let d = [p[0] - position[0], p[1] - position[1]];
    let (s, c) = yaw.sin_cos();
    [c * d[0] + s * d[1], -s * d[0] + c * d[1], p[2]]
}

/// Inverse of [`to_robot_frame`].
pub fn to_world_frame(p: Point3, position: Point3, yaw: f64) -> Point3 {
    let (s, c) = yaw.sin_cos();
    [
        position[0] + c * p[0] - s * p[1],
        position[1] + s * p[0] + c * p[1],
        p[2],
    ]
}

pub fn sample_goal(
    scene: &VoxelScene,
    seed: u64,
    mode: GoalMode,
    cfg: &GoalConfig,
) -> Result<Goal> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_goal_with(scene, &mut rng, mode, cfg)
}

/// Rejection-samples a goal whose clearance is at least the safety radius.
pub fn sample_goal_with(
    scene: &VoxelScene,
    rng: &mut impl Rng,
    mode: GoalMode,
    cfg: &GoalConfig,
) -> Result<Goal> {
    if cfg
        .air_z
        .0
        .partial_cmp(&cfg.air_z.1)
        .is_none_or(|o| o.is_gt())
        || !(0.0..=1.0).contains(&cfg.land_ratio)
    {
        return Err(SimError::DegenerateParams(format!(
            "air_z {:?}, land_ratio {}",
            cfg.air_z, cfg.land_ratio
        )));
    }
    let land = match mode {
        GoalMode::Land => true,
        GoalMode::Air => false,
        GoalMode::Mixed => rng.gen_bool(cfg.land_ratio),
    };
    let (lo, hi) = scene.bounds();
    let margin = cfg.safety_radius;
    let xr = cfg.x_range.unwrap_or((lo[0] + margin, hi[0] - margin));
    let yr = cfg.y_range.unwrap_or((lo[1] + margin, hi[1] - margin));
    let xr = (xr.0.max(lo[0]), xr.1.min(hi[0]));
    let yr = (yr.0.max(lo[1]), yr.1.min(hi[1]));
    if !(xr.0 < xr.1 && yr.0 < yr.1) {
        return Err(SimError::DegenerateParams(format!(
            "goal window {xr:?} x {yr:?} is empty"
        )));
    }
    for _ in 0..cfg.max_tries {
        let x = rng.gen_range(xr.0..xr.1);
        let y = rng.gen_range(yr.0..yr.1);
        let z = if land {
            cfg.h_r
        } else {
            rng.gen_range(cfg.air_z.0..=cfg.air_z.1)
        };
        let p = [x, y, z];
        if z < hi[2] && !point_collides(scene, p, cfg.safety_radius) {
            return Ok(Goal { position: p, land });
        }
    }
    Err(SimError::NoValidGoal(cfg.max_tries))
}
