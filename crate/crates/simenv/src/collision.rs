use serde::{Deserialize, Serialize};

use crate::scene::VoxelScene;
use crate::{dist2, Point3};

pub const DEFAULT_SAFETY_RADIUS: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Collision {
    pub collides: bool,
    pub first_index: Option<usize>,
}

/// Distance from `p` to the nearest occupied voxel center, searching only
/// centers within `radius`; `None` if there is none that close. Independent
/// of any distance field.
pub fn nearest_occupied_within(scene: &VoxelScene, p: Point3, radius: f64) -> Option<f64> {
    let s = scene.voxel_size();
    let o = scene.origin();
    let dims = scene.dims();
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for a in 0..3 {
        let l = ((p[a] - radius - o[a]) / s - 0.5).floor().max(0.0);
        let h = ((p[a] + radius - o[a]) / s - 0.5).ceil() + 1.0;
        if h <= 0.0 || l >= dims[a] as f64 {
            return None;
        }
        lo[a] = l as usize;
        hi[a] = (h as usize).min(dims[a]);
    }
    let r2 = radius * radius;
    let mut best = f64::INFINITY;
    for k in lo[2]..hi[2] {
        for j in lo[1]..hi[1] {
            for i in lo[0]..hi[0] {
                if scene.occupied(i, j, k) {
                    let d = dist2(scene.center(i, j, k), p);
                    if d <= r2 && d < best {
                        best = d;
                    }
                }
            }
        }
    }
    best.is_finite().then(|| best.sqrt())
}

/// Exhaustive nearest occupied voxel center over the whole grid.
pub fn nearest_occupied(scene: &VoxelScene, p: Point3) -> Option<f64> {
    let [nx, ny, nz] = scene.dims();
    let mut best = f64::INFINITY;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                if scene.occupied(i, j, k) {
                    best = best.min(dist2(scene.center(i, j, k), p));
                }
            }
        }
    }
    best.is_finite().then(|| best.sqrt())
}

/// Whether a single point is closer than `radius` to an obstacle, or inside one.
pub fn point_collides(scene: &VoxelScene, p: Point3, radius: f64) -> bool {
    scene.is_occupied_at(p) || nearest_occupied_within(scene, p, radius).is_some_and(|d| d < radius)
}

/// Ground-truth collision test for a trajectory by brute-force search.
pub fn check_collision(scene: &VoxelScene, points: &[Point3], radius: f64) -> Collision {
    let first_index = points
        .iter()
        .position(|&p| point_collides(scene, p, radius));
    Collision {
        collides: first_index.is_some(),
        first_index,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn local_search_matches_exhaustive() {
        let mut s = VoxelScene::empty([8, 8, 8], 0.1, [0.0; 3]).unwrap();
        s.set(3, 4, 2, true);
        s.set(7, 0, 7, true);
        let p = [0.31, 0.42, 0.18];
        let full = nearest_occupied(&s, p).unwrap();
        assert_eq!(nearest_occupied_within(&s, p, 0.5), Some(full));
        assert_eq!(nearest_occupied_within(&s, p, full * 0.99), None);
    }
}
