//! Training objective: obstacle, smoothness, goal and altitude costs on a
//! spline trajectory, plus the fear (collision-prediction) loss.

use keynav_autodiff::{Tape, Tensor, Var};
use keynav_simenv::{check_collision, to_world_frame, Esdf, Point3, VoxelScene};
use serde::{Deserialize, Serialize};

use crate::error::{config, CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Large enough that the averaged obstacle hinge is not outweighed by
    /// bunching the other trajectory points in free space.
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            beta: 0.1,
            gamma: 2.0,
            delta: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.alpha, self.beta, self.gamma, self.delta];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(config(format!(
                "loss weights must be finite and non-negative: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub weights: LossWeights,
    /// Hinge margin of the obstacle cost, meters.
    pub d_safe: f64,
    pub h_r: f64,
    /// Clearance below which the fear label is set.
    pub safety_radius: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            d_safe: 0.5,
            h_r: 0.3,
            safety_radius: keynav_simenv::DEFAULT_SAFETY_RADIUS,
        }
    }
}

/// Loss terms as tape values.
pub struct LossVars<'t> {
    pub c_obstacle: Var<'t>,
    pub c_motion: Var<'t>,
    pub c_goal: Var<'t>,
    pub c_energy: Var<'t>,
    pub fear: Var<'t>,
    pub total: Var<'t>,
    pub collision_label: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub c_obstacle: f64,
    pub c_motion: f64,
    pub c_goal: f64,
    pub c_energy: f64,
    pub fear: f64,
    pub total: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        self.terms().iter().all(|v| v.is_finite())
    }

    pub fn terms(&self) -> [f64; 6] {
        [
            self.c_obstacle,
            self.c_motion,
            self.c_goal,
            self.c_energy,
            self.fear,
            self.total,
        ]
    }

    /// Element-wise mean of several reports.
    pub fn mean(reports: &[LossReport]) -> LossReport {
        let n = reports.len().max(1) as f64;
        let mut acc = [0.0; 6];
        for r in reports {
            for (a, v) in acc.iter_mut().zip(r.terms()) {
                *a += v;
            }
        }
        let [c_obstacle, c_motion, c_goal, c_energy, fear, total] = acc.map(|a| a / n);
        LossReport {
            c_obstacle,
            c_motion,
            c_goal,
            c_energy,
            fear,
            total,
        }
    }
}

impl LossVars<'_> {
    pub fn report(&self) -> LossReport {
        LossReport {
            c_obstacle: self.c_obstacle.item(),
            c_motion: self.c_motion.item(),
            c_goal: self.c_goal.item(),
            c_energy: self.c_energy.item(),
            fear: self.fear.item(),
            total: self.total.item(),
        }
    }
}

/// Robot pose on the ground plane; trajectories live in its frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose {
    pub fn to_world(&self, p: Point3) -> Point3 {
        to_world_frame(p, [self.x, self.y, 0.0], self.yaw)
    }
}

/// Clearance of each row of `points` (robot frame) under `pose`.
pub fn sample_clearance<'t>(points: Var<'t>, esdf: &Esdf, pose: Pose) -> Result<Var<'t>> {
    let (s, c) = pose.yaw.sin_cos();
    let mut err = None;
    let out = points.row_field(|row| {
        let w = pose.to_world([row[0], row[1], row[2]]);
        match esdf.sample(w) {
            Ok(smp) => {
                let g = smp.gradient;
                // chain through the rotation: ∂w/∂row = R
                (
                    smp.distance,
                    vec![c * g[0] + s * g[1], -s * g[0] + c * g[1], g[2]],
                )
            }
            Err(e) => {
                err.get_or_insert(e);
                (0.0, vec![0.0; 3])
            }
        }
    })?;
    match err {
        Some(e) => Err(e.into()),
        None => Ok(out),
    }
}

/// Mean of `max(d_safe − esdf(p), 0)` over the trajectory.
pub fn obstacle_cost<'t>(traj: Var<'t>, esdf: &Esdf, pose: Pose, d_safe: f64) -> Result<Var<'t>> {
    let d = sample_clearance(traj, esdf, pose)?;
    Ok(d.scale(-1.0).add_scalar(d_safe).relu().mean(None)?)
}

/// Mean squared second difference; `None` for fewer than three points.
pub fn motion_cost<'t>(traj: Var<'t>) -> Result<Option<Var<'t>>> {
    let n = traj.shape()[0];
    if n < 3 {
        return Ok(None);
    }
    let ahead = traj.slice_rows(2, n)?;
    let mid = traj.slice_rows(1, n - 1)?;
    let behind = traj.slice_rows(0, n - 2)?;
    let acc = ahead.sub(mid.scale(2.0))?.add(behind)?;
    Ok(Some(acc.square().sum(Some(1))?.mean(None)?))
}

/// `ln(1 + d)` with `d` the distance from the last key point to the goal,
/// horizontal only when the goal is below the body height.
pub fn goal_cost<'t>(
    tape: &'t Tape,
    keypoints: Var<'t>,
    goal: Point3,
    h_r: f64,
) -> Result<Var<'t>> {
    let n = keypoints.shape()[0];
    let last = keypoints.slice_rows(n - 1, n)?;
    let target = tape.constant(Tensor::from_points(&[goal]));
    let diff = last.sub(target)?;
    let diff = if goal[2] < h_r {
        diff.slice_cols(0, 2)?
    } else {
        diff
    };
    Ok(diff.l2norm_rows()?.log1p().mean(None)?)
}

/// Mean `|z − h_R|` over the trajectory, excluding the fixed start point.
pub fn energy_cost<'t>(traj: Var<'t>, h_r: f64) -> Result<Var<'t>> {
    let n = traj.shape()[0];
    let from = usize::from(n > 1);
    Ok(traj
        .slice_rows(from, n)?
        .slice_cols(2, 3)?
        .add_scalar(-h_r)
        .abs()
        .mean(None)?)
}

/// Binary cross-entropy of the predicted collision probability.
pub fn fear_loss<'t>(mu: Var<'t>, collides: bool) -> Result<Var<'t>> {
    Ok(mu.bce(if collides { 1.0 } else { 0.0 })?)
}

pub struct LossInputs<'a> {
    pub scene: &'a VoxelScene,
    pub esdf: &'a Esdf,
    pub pose: Pose,
    /// Goal in the robot frame.
    pub goal: Point3,
    /// Use this collision label instead of the oracle's.
    pub label_override: Option<bool>,
}

/// World-frame points of a robot-frame trajectory value.
pub fn world_points(traj: &Tensor, pose: Pose) -> Result<Vec<Point3>> {
    Ok(traj
        .points()?
        .into_iter()
        .map(|p| pose.to_world(p))
        .collect())
}

pub fn total_loss<'t>(
    tape: &'t Tape,
    keypoints: Var<'t>,
    traj: Var<'t>,
    mu: Var<'t>,
    inputs: &LossInputs<'_>,
    cfg: &LossConfig,
) -> Result<LossVars<'t>> {
    cfg.weights.validate()?;
    if !traj.value().is_finite() {
        return Err(CoreError::NonFinite("trajectory".into()));
    }
    let w = cfg.weights;
    let c_obstacle = obstacle_cost(traj, inputs.esdf, inputs.pose, cfg.d_safe)?;
    let c_motion = match motion_cost(traj)? {
        Some(v) => v,
        None => tape.constant(Tensor::scalar(0.0)),
    };
    let c_goal = goal_cost(tape, keypoints, inputs.goal, cfg.h_r)?;
    let c_energy = energy_cost(traj, cfg.h_r)?;
    let collision_label = match inputs.label_override {
        Some(l) => l,
        None => {
            let pts = world_points(&traj.value(), inputs.pose)?;
            check_collision(inputs.scene, &pts, cfg.safety_radius).collides
        }
    };
    let fear = fear_loss(mu.reshape([1])?, collision_label)?;
    let total = c_obstacle
        .scale(w.alpha)
        .add(c_motion.scale(w.beta))?
        .add(c_goal.scale(w.gamma))?
        .add(c_energy.scale(w.delta))?
        .add(fear)?;
    Ok(LossVars {
        c_obstacle,
        c_motion,
        c_goal,
        c_energy,
        fear,
        total,
        collision_label,
    })
}
