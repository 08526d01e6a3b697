//! Closed-loop two-stage navigation: replan key points every control step,
//! gate them on fear, refine the part inside the local horizon against a
//! sensor-range ESDF, and advance the robot a fixed distance along it.

use std::io::Write;

use keynav_simenv::{
    build_esdf, check_collision, dist2, render_depth, to_robot_frame, to_world_frame, Camera,
    Point3, VoxelScene,
};
use serde::{Deserialize, Serialize};

use crate::error::{config, CoreError, Result};
use crate::modes::{polyline_length, EnergyReport, Mode, ModeTracker, RobotParams};
use crate::plan::{fear_gate, GateDecision, Planner};
use crate::refine::{refine_segment, RefineConfig};
use crate::spline::spline_points;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NavConfig {
    /// Distance advanced per control step, meters.
    pub step: f64,
    /// Length of the refined part of each plan, meters.
    pub horizon: f64,
    pub goal_tolerance: f64,
    pub step_limit: usize,
    pub safety_radius: f64,
    /// Spline samples per key-point gap.
    pub m: usize,
    pub refine: bool,
    pub refine_config: RefineConfig,
    pub d_max: f64,
    pub heading: Heading,
    /// While stopped by the fear gate the camera sweeps left and right in
    /// steps of this angle so the next plan sees a different view.
    pub scan_turn: f64,
    /// Hold position instead of stepping to within `safety_radius` of a
    /// voxel in the sensed local map.
    pub guard: bool,
    /// Keep following a plan that already ends at the goal and fits inside
    /// the horizon rather than replacing it every step; otherwise a plan
    /// that climbs only at its end is re-predicted before the climb starts.
    pub commit_terminal: bool,
}

/// Where the camera (and so the robot frame) points between steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Heading {
    /// Toward the goal's horizontal bearing.
    Goal,
    /// Along the last executed motion.
    Motion,
}

/// Sweep offset after `k` consecutive stops: +1, −1, +2, −2, … turns.
fn scan_offset(k: usize, turn: f64) -> f64 {
    let mag = k.div_ceil(2) as f64 * turn;
    let off = if k % 2 == 1 { mag } else { -mag };
    off.clamp(-std::f64::consts::PI, std::f64::consts::PI)
}

impl Default for NavConfig {
    fn default() -> Self {
        Self {
            step: 0.1,
            horizon: 3.0,
            goal_tolerance: 0.5,
            step_limit: 300,
            safety_radius: keynav_simenv::DEFAULT_SAFETY_RADIUS,
            m: 8,
            refine: true,
            refine_config: RefineConfig::default(),
            d_max: keynav_simenv::DEFAULT_D_MAX,
            heading: Heading::Goal,
            scan_turn: std::f64::consts::FRAC_PI_6,
            guard: true,
            commit_terminal: true,
        }
    }
}

impl NavConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.horizon > 0.0 && self.goal_tolerance > 0.0 && self.d_max > 0.0)
        {
            return Err(config(format!(
                "navigation distances must be positive: {self:?}"
            )));
        }
        if self.m == 0 {
            return Err(config("m must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub position: Point3,
    pub yaw: f64,
    pub mode: Mode,
    /// Fear of the freshly predicted plan.
    pub fear: f64,
    /// Fear of the plan actually followed this step.
    pub executed_fear: f64,
    pub decision: GateDecision,
    /// A terminal plan was kept and the fresh prediction ignored.
    #[serde(default)]
    pub committed: bool,
    pub energy_j: f64,
    pub goal_distance: f64,
    pub collided: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Reached,
    StepLimit,
    /// The robot ended up inside an obstacle and cannot sense.
    Blocked,
    /// The robot left the mapped workspace.
    OutOfBounds,
}

/// Final row of an episode, mirroring length/time/energy columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub success: bool,
    pub outcome: Outcome,
    pub collided: bool,
    pub steps: usize,
    pub final_error: f64,
    pub land_length_m: f64,
    pub air_length_m: f64,
    pub time_s: f64,
    pub energy_j: f64,
    pub air_steps: usize,
    pub rejected_plans: usize,
    /// Steps held in place because the next move came too close to a sensed obstacle.
    #[serde(default)]
    pub guard_stops: usize,
    /// Steps that followed a plan whose fear was at least 0.5.
    pub unsafe_executed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub start: Point3,
    pub goal: Point3,
    pub records: Vec<StepRecord>,
    /// Every executed point, starting with `start`.
    pub path: Vec<Point3>,
    pub summary: EpisodeSummary,
}

impl Episode {
    /// One JSON object per control step, then `{"summary": …, "start": …, "goal": …}`.
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            writeln!(w)?;
        }
        serde_json::to_writer(
            &mut w,
            &serde_json::json!({ "summary": self.summary, "start": self.start, "goal": self.goal }),
        )?;
        writeln!(w)?;
        Ok(())
    }
}

/// Walks `dist` meters along `path` from its first point. Returns the walked
/// polyline (inclusive of both ends) and the remainder starting at the stop.
fn walk(path: &[Point3], dist: f64) -> (Vec<Point3>, Vec<Point3>) {
    let mut walked = vec![path[0]];
    let mut left = dist;
    for i in 1..path.len() {
        let (a, b) = (path[i - 1], path[i]);
        let len = dist2(a, b).sqrt();
        if len >= left {
            let f = if len > 0.0 { left / len } else { 0.0 };
            let stop = [
                a[0] + f * (b[0] - a[0]),
                a[1] + f * (b[1] - a[1]),
                a[2] + f * (b[2] - a[2]),
            ];
            walked.push(stop);
            let mut rest = vec![stop];
            rest.extend_from_slice(&path[i..]);
            return (walked, rest);
        }
        left -= len;
        walked.push(b);
    }
    let end = *path.last().expect("non-empty path");
    (walked, vec![end])
}

/// Index of the last point within arc length `horizon`, plus one.
fn horizon_end(path: &[Point3], horizon: f64) -> usize {
    let mut acc = 0.0;
    for i in 1..path.len() {
        acc += dist2(path[i - 1], path[i]).sqrt();
        if acc > horizon {
            return i;
        }
    }
    path.len() - 1
}

struct Plan {
    points: Vec<Point3>,
    fear: f64,
}

/// Runs one episode from `start` (facing `yaw`) toward `goal`, both world frame.
#[allow(clippy::too_many_arguments)]
pub fn navigate(
    scene: &VoxelScene,
    start: Point3,
    yaw: f64,
    goal: Point3,
    planner: &dyn Planner,
    camera: &Camera,
    robot: &RobotParams,
    cfg: &NavConfig,
) -> Result<Episode> {
    cfg.validate()?;
    robot.validate()?;
    if scene.cell_of(start).is_none() || scene.cell_of(goal).is_none() {
        return Err(config("start and goal must lie inside the scene"));
    }
    if scene.is_occupied_at(start) {
        return Err(CoreError::Occupied("start"));
    }
    if scene.is_occupied_at(goal) {
        return Err(CoreError::Occupied("goal"));
    }
    let mut refine_cfg = cfg.refine_config.clone();
    refine_cfg.min_z = refine_cfg.min_z.max(robot.h_r);

    let mut pos = start;
    let mut yaw = yaw;
    let mut base_yaw = yaw;
    let mut stops = 0;
    let mut tracker = ModeTracker::new(if start[2] > robot.h_r + robot.epsilon {
        Mode::Air
    } else {
        Mode::Land
    });
    let mut energy = EnergyReport::default();
    let mut records = Vec::new();
    let mut path = vec![start];
    let mut current: Option<Plan> = None;
    let (mut collided, mut rejected, mut unsafe_executed, mut air_steps, mut guard_stops) =
        (false, 0, 0, 0, 0);
    let mut outcome = Outcome::StepLimit;

    for step in 0..cfg.step_limit {
        if dist2(pos, goal).sqrt() < cfg.goal_tolerance {
            outcome = Outcome::Reached;
            break;
        }
        if scene.cell_of(pos).is_none() {
            outcome = Outcome::OutOfBounds;
            break;
        }
        if scene.is_occupied_at(pos) {
            outcome = Outcome::Blocked;
            break;
        }
        let cam = camera.clone().at(pos, yaw);
        let depth = render_depth(scene, &cam)?;
        let local_goal = to_robot_frame(goal, pos, yaw);
        let origin = [0.0, 0.0, pos[2]];
        let proposal = planner
            .plan(&depth, local_goal, origin)
            .ok()
            .filter(|o| o.fear.is_finite() && o.keypoints.iter().flatten().all(|v| v.is_finite()));
        let fear = proposal.as_ref().map_or(1.0, |o| o.fear);
        let gate = fear_gate(fear, current.as_ref().map(|p| p.points.as_slice()), pos);
        let committed = cfg.commit_terminal
            && current.as_ref().is_some_and(|p| {
                let end = *p.points.last().expect("plans are non-empty");
                dist2(end, goal).sqrt() < cfg.goal_tolerance
                    && polyline_length(&p.points) <= cfg.horizon
            });
        match gate.decision {
            _ if committed => {}
            GateDecision::Accept => {
                let out = proposal.expect("accepted plans exist");
                let local = spline_points(&out.keypoints, cfg.m, origin)?;
                let ground = [pos[0], pos[1], 0.0];
                let world = local
                    .iter()
                    .map(|&p| to_world_frame(p, ground, yaw))
                    .collect();
                current = Some(Plan {
                    points: world,
                    fear: out.fear,
                });
            }
            GateDecision::Reuse => rejected += 1,
            GateDecision::Stop => {
                rejected += 1;
                current = None;
                stops += 1;
            }
        }

        // the local stage works on whichever plan is followed, against what
        // the sensor sees from here
        let esdf = (current.is_some() && (cfg.refine || cfg.guard)).then(|| {
            let window = scene.visible_window(pos, cfg.horizon + 1.0, camera.max_range);
            build_esdf(&window, cfg.d_max)
        });
        if let (Some(plan), Some(esdf)) = (current.as_mut(), esdf.as_ref()) {
            if cfg.refine {
                let end = horizon_end(&plan.points, cfg.horizon);
                if end >= 2 {
                    let refined = refine_segment(&plan.points[..=end], esdf, &refine_cfg)?;
                    plan.points.splice(..=end, refined.points);
                }
            }
        }

        let mut mode = tracker.current;
        let mut executed_fear = fear;
        let mut step_collided = false;
        if let Some(plan) = current.take() {
            let (mut walked, rest) = walk(&plan.points, cfg.step);
            for p in walked.iter_mut() {
                p[2] = p[2].max(robot.h_r);
            }
            let too_close = cfg.guard
                && esdf.as_ref().is_some_and(|e| {
                    walked[1..]
                        .iter()
                        .any(|&p| e.sample(p).is_ok_and(|s| s.distance < cfg.safety_radius))
                });
            if too_close {
                guard_stops += 1;
                stops += 1;
            } else {
                executed_fear = plan.fear;
                if plan.fear >= crate::plan::FEAR_THRESHOLD {
                    unsafe_executed += 1;
                }
                let next = *walked.last().expect("walk yields points");
                let length = polyline_length(&walked);
                mode = tracker.update(crate::modes::max_z(&walked), robot);
                energy.add(mode, length, robot);
                step_collided = check_collision(scene, &walked, cfg.safety_radius).collides;
                let (dx, dy) = (next[0] - pos[0], next[1] - pos[1]);
                pos = next;
                stops = 0;
                match cfg.heading {
                    Heading::Motion if dx.hypot(dy) > 1e-3 => base_yaw = dy.atan2(dx),
                    Heading::Goal if (goal[0] - pos[0]).hypot(goal[1] - pos[1]) > 0.3 => {
                        base_yaw = (goal[1] - pos[1]).atan2(goal[0] - pos[0]);
                    }
                    _ => {}
                }
                path.push(pos);
                if rest.len() > 1 && polyline_length(&rest) > 1e-9 {
                    current = Some(Plan {
                        points: rest,
                        fear: plan.fear,
                    });
                }
            }
        }
        yaw = base_yaw + scan_offset(stops, cfg.scan_turn);
        collided |= step_collided;
        if mode == Mode::Air {
            air_steps += 1;
        }
        records.push(StepRecord {
            step,
            position: pos,
            yaw,
            mode,
            fear,
            executed_fear,
            decision: gate.decision,
            committed,
            energy_j: energy.energy_j,
            goal_distance: dist2(pos, goal).sqrt(),
            collided: step_collided,
        });
    }
    if outcome == Outcome::StepLimit
        && cfg.step_limit > 0
        && dist2(pos, goal).sqrt() < cfg.goal_tolerance
    {
        outcome = Outcome::Reached;
    }
    let final_error = dist2(pos, goal).sqrt();
    let summary = EpisodeSummary {
        success: outcome == Outcome::Reached,
        outcome,
        collided,
        steps: records.len(),
        final_error,
        land_length_m: energy.land_length_m,
        air_length_m: energy.air_length_m,
        time_s: energy.time_s,
        energy_j: energy.energy_j,
        air_steps,
        rejected_plans: rejected,
        guard_stops,
        unsafe_executed,
    };
    Ok(Episode {
        start,
        goal,
        records,
        path,
        summary,
    })
}
