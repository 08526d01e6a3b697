use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::scene::VoxelScene;
use crate::Point3;

/// Pinhole range camera looking along the body x axis, rotated by `yaw`
/// about world z. Pixel rows run top to bottom, columns left to right.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub hfov: f64,
    pub vfov: f64,
    pub max_range: f64,
    pub position: Point3,
    pub yaw: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            hfov: std::f64::consts::FRAC_PI_2,
            vfov: std::f64::consts::FRAC_PI_2,
            max_range: 6.0,
            position: [0.0; 3],
            yaw: 0.0,
        }
    }
}

impl Camera {
    pub fn at(mut self, position: Point3, yaw: f64) -> Self {
        self.position = position;
        self.yaw = yaw;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fov_ok = |f: f64| f > 0.0 && f < std::f64::consts::PI;
        if self.width < 8 || self.height < 8 {
            return Err(SimError::InvalidCamera(format!(
                "{}x{} below 8x8",
                self.width, self.height
            )));
        }
        if !fov_ok(self.hfov) || !fov_ok(self.vfov) {
            return Err(SimError::InvalidCamera(format!(
                "fov ({}, {}) outside (0, pi)",
                self.hfov, self.vfov
            )));
        }
        if !(self.max_range > 0.0 && self.max_range.is_finite()) {
            return Err(SimError::InvalidCamera(format!(
                "max range {}",
                self.max_range
            )));
        }
        if self.position.iter().any(|v| !v.is_finite()) || !self.yaw.is_finite() {
            return Err(SimError::NonFinite(self.position));
        }
        Ok(())
    }

    /// Unit world-frame ray through the center of pixel `(row, col)`.
    pub fn ray(&self, row: usize, col: usize) -> Point3 {
        let a = (col as f64 + 0.5) / self.width as f64 * 2.0 - 1.0;
        let b = (row as f64 + 0.5) / self.height as f64 * 2.0 - 1.0;
        let ly = -a * (self.hfov / 2.0).tan();
        let lz = -b * (self.vfov / 2.0).tan();
        let n = (1.0 + ly * ly + lz * lz).sqrt();
        let (sy, cy) = self.yaw.sin_cos();
        [(cy - sy * ly) / n, (sy + cy * ly) / n, lz / n]
    }
}

/// Along-ray range image in meters; pixels with no hit hold `max_range`.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub max_range: f64,
    pub data: Vec<f64>,
}

impl DepthImage {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    /// Ranges scaled into [0, 1] by `max_range`.
    pub fn normalized(&self) -> Vec<f64> {
        self.data.iter().map(|d| d / self.max_range).collect()
    }

    /// Binary 16-bit PGM with depth in millimeters.
    pub fn write_pgm(&self, mut w: impl Write) -> Result<()> {
        write!(w, "P5\n{} {}\n65535\n", self.width, self.height)?;
        let mut buf = Vec::with_capacity(self.data.len() * 2);
        for &d in &self.data {
            let mm = (d * 1000.0).round().clamp(0.0, 65535.0) as u16;
            buf.extend_from_slice(&mm.to_be_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_pgm(std::io::BufWriter::new(f))
    }
}

/// Ray-casts every pixel through the occupancy grid. The ground plane and
/// everything outside the grid read as empty.
pub fn render_depth(scene: &VoxelScene, camera: &Camera) -> Result<DepthImage> {
    camera.validate()?;
    if scene.is_occupied_at(camera.position) {
        return Err(SimError::CameraInObstacle(camera.position));
    }
    let mut data = Vec::with_capacity(camera.width * camera.height);
    for row in 0..camera.height {
        for col in 0..camera.width {
            let dir = camera.ray(row, col);
            let hit = cast_ray(scene, camera.position, dir, camera.max_range);
            data.push(hit.unwrap_or(camera.max_range).min(camera.max_range));
        }
    }
    Ok(DepthImage {
        width: camera.width,
        height: camera.height,
        max_range: camera.max_range,
        data,
    })
}

/// Distance along unit `dir` from `origin` to the first occupied voxel
/// within `max_t`, by slab clipping and voxel traversal.
pub fn cast_ray(scene: &VoxelScene, origin: Point3, dir: Point3, max_t: f64) -> Option<f64> {
    let (lo, hi) = scene.bounds();
    let dims = scene.dims();
    let s = scene.voxel_size();

    // clip against the grid box
    let mut t0: f64 = 0.0;
    let mut t1 = max_t;
    for a in 0..3 {
        if dir[a].abs() < 1e-15 {
            if origin[a] < lo[a] || origin[a] >= hi[a] {
                return None;
            }
        } else {
            let ta = (lo[a] - origin[a]) / dir[a];
            let tb = (hi[a] - origin[a]) / dir[a];
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
        }
    }
    if t0 > t1 {
        return None;
    }

    let entry = [0, 1, 2].map(|a| origin[a] + dir[a] * t0);
    let mut cell = [0isize; 3];
    let mut step = [0isize; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for a in 0..3 {
        let u = (entry[a] - lo[a]) / s;
        let mut c = u.floor() as isize;
        // on the far face the floor lands one past the grid
        c = c.clamp(0, dims[a] as isize - 1);
        if dir[a] > 0.0 {
            // a ray entering exactly on a lower face belongs to that cell
            cell[a] = c;
            step[a] = 1;
            t_max[a] = (lo[a] + (c + 1) as f64 * s - origin[a]) / dir[a];
            t_delta[a] = s / dir[a];
        } else if dir[a] < 0.0 {
            if u == u.floor() && c as f64 == u && c > 0 {
                // entering on an upper face: that face bounds the cell below
                c -= 1;
            }
            cell[a] = c;
            step[a] = -1;
            t_max[a] = (lo[a] + c as f64 * s - origin[a]) / dir[a];
            t_delta[a] = -s / dir[a];
        } else {
            cell[a] = c;
        }
    }

    let mut t = t0;
    loop {
        if t > t1 {
            return None;
        }
        let [i, j, k] = cell;
        if scene.occupied(i as usize, j as usize, k as usize) {
            return Some(t);
        }
        let a = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
            0
        } else if t_max[1] <= t_max[2] {
            1
        } else {
            2
        };
        t = t_max[a];
        cell[a] += step[a];
        if cell[a] < 0 || cell[a] >= dims[a] as isize {
            return None;
        }
        t_max[a] += t_delta[a];
    }
}
