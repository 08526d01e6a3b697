//! Planner interface, the fear gate, and single-shot planning.

use keynav_simenv::{to_world_frame, Point3};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gkpn::{Gkpn, GkpnOutput};
use crate::modes::{account_energy, assign_modes, EnergyReport, Mode, RobotParams};
use crate::spline::{segment_trajectory, spline_points};
use keynav_simenv::DepthImage;

/// Anything that maps a depth image and a robot-frame goal to key points.
pub trait Planner: Sync {
    /// `start` is the robot-frame trajectory origin `(0, 0, z)`.
    fn plan(&self, depth: &DepthImage, goal: Point3, start: Point3) -> Result<GkpnOutput>;
}

impl Planner for Gkpn {
    fn plan(&self, depth: &DepthImage, goal: Point3, _start: Point3) -> Result<GkpnOutput> {
        self.infer(depth, goal)
    }
}

/// Evenly spaced key points on the straight line to the goal, never afraid.
/// Only sensible in free space; used to validate the evaluation harness.
#[derive(Clone, Copy, Debug)]
pub struct StraightLinePlanner {
    pub keypoints: usize,
    /// Longest plan, meters; farther goals are approached in chunks.
    pub reach: f64,
}

impl Default for StraightLinePlanner {
    fn default() -> Self {
        Self {
            keypoints: 5,
            reach: 6.0,
        }
    }
}

impl Planner for StraightLinePlanner {
    fn plan(&self, _depth: &DepthImage, goal: Point3, start: Point3) -> Result<GkpnOutput> {
        let d = [goal[0] - start[0], goal[1] - start[1], goal[2] - start[2]];
        let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        let f = if len > self.reach {
            self.reach / len
        } else {
            1.0
        };
        let n = self.keypoints.max(1);
        let keypoints = (1..=n)
            .map(|j| {
                let s = f * j as f64 / n as f64;
                [
                    start[0] + s * d[0],
                    start[1] + s * d[1],
                    start[2] + s * d[2],
                ]
            })
            .collect();
        Ok(GkpnOutput {
            keypoints,
            fear: 0.0,
        })
    }
}

pub const FEAR_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateDecision {
    Accept,
    /// Fear too high; keep following the previous accepted plan.
    Reuse,
    /// Fear too high and nothing to fall back on.
    Stop,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateOutcome {
    pub decision: GateDecision,
    /// The plan to follow, in whatever frame `previous` and `position` use;
    /// empty on `Accept` (the caller owns the new key points).
    pub plan: Vec<Point3>,
}

/// Passes a plan only when its collision probability is strictly below 0.5.
pub fn fear_gate(fear: f64, previous: Option<&[Point3]>, position: Point3) -> GateOutcome {
    // NaN fails the comparison and is treated as maximal fear
    if fear < FEAR_THRESHOLD {
        return GateOutcome {
            decision: GateDecision::Accept,
            plan: Vec::new(),
        };
    }
    match previous {
        Some(p) if !p.is_empty() => GateOutcome {
            decision: GateDecision::Reuse,
            plan: p.to_vec(),
        },
        _ => GateOutcome {
            decision: GateDecision::Stop,
            plan: vec![position],
        },
    }
}

/// One planning step in world coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub keypoints: Vec<Point3>,
    pub trajectory: Vec<Point3>,
    pub modes: Vec<Mode>,
    pub fear: f64,
    pub energy: EnergyReport,
}

/// Runs the planner once from a pose and labels the resulting trajectory.
#[allow(clippy::too_many_arguments)]
pub fn plan_once(
    planner: &dyn Planner,
    depth: &DepthImage,
    position: Point3,
    yaw: f64,
    goal_world: Point3,
    m: usize,
    robot: &RobotParams,
    initial: Mode,
) -> Result<PlanResult> {
    let goal = keynav_simenv::to_robot_frame(goal_world, position, yaw);
    let start = [0.0, 0.0, position[2]];
    let out = planner.plan(depth, goal, start)?;
    let local = spline_points(&out.keypoints, m, start)?;
    let segments = segment_trajectory(&local, &out.keypoints)?;
    let modes = assign_modes(&segments, robot, initial);
    let energy = account_energy(&segments, &modes, robot);
    let origin = [position[0], position[1], 0.0];
    Ok(PlanResult {
        keypoints: out
            .keypoints
            .iter()
            .map(|&k| to_world_frame(k, origin, yaw))
            .collect(),
        trajectory: local
            .iter()
            .map(|&p| to_world_frame(p, origin, yaw))
            .collect(),
        modes,
        fear: out.fear,
        energy,
    })
}
