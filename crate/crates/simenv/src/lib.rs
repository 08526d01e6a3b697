//! Synthetic voxel worlds for training and evaluating the planner: procedural
//! scene templates, exact Euclidean distance fields with trilinear sampling,
//! ray-cast range images, goal sampling and a brute-force collision oracle.
//!
//! World frame: x forward along the scene, y left, z up; the ground is the
//! free plane z = 0.

pub mod camera;
pub mod collision;
pub mod error;
pub mod esdf;
pub mod goal;
pub mod scene;

pub use camera::{cast_ray, render_depth, Camera, DepthImage};
pub use collision::{
    check_collision, nearest_occupied, point_collides, Collision, DEFAULT_SAFETY_RADIUS,
};
pub use error::{Result, SimError};
pub use esdf::{build_esdf, Esdf, EsdfSample, DEFAULT_D_MAX};
pub use goal::{
    sample_goal, sample_goal_with, to_robot_frame, to_world_frame, Goal, GoalConfig, GoalMode,
};
pub use scene::{generate_scene, SceneFile, SceneParams, Template, VoxelScene};

pub type Point3 = [f64; 3];

#[inline]
pub fn dist2(a: Point3, b: Point3) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}
