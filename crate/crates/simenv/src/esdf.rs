use std::collections::VecDeque;

use crate::error::{Result, SimError};
use crate::scene::VoxelScene;
use crate::Point3;

pub const DEFAULT_D_MAX: f64 = 5.0;

/// Distance from each voxel center to the nearest occupied voxel center,
/// clamped to `d_max`. Shares the grid geometry of its scene.
#[derive(Clone, Debug, PartialEq)]
pub struct Esdf {
    dims: [usize; 3],
    voxel_size: f64,
    origin: Point3,
    d_max: f64,
    distance: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EsdfSample {
    pub distance: f64,
    pub gradient: [f64; 3],
    /// The query was outside the span of voxel centers and got clamped.
    pub clamped: bool,
}

const INF: f64 = 1e20;

/// Exact 1-D squared distance transform of a sampled function
/// (Felzenszwalb–Huttenlocher lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        if f[q] >= INF {
            continue;
        }
        loop {
            let p = v[k];
            if f[p] >= INF {
                // the seed parabola was at infinity: replace it
                v[k] = q;
                z[k + 1] = f64::INFINITY;
                break;
            }
            let s =
                ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
                continue;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    if f[v[0]] >= INF {
        out.iter_mut().for_each(|o| *o = INF);
        return;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

pub fn build_esdf(scene: &VoxelScene, d_max: f64) -> Esdf {
    let dims = scene.dims();
    let [nx, ny, nz] = dims;
    let mut g: Vec<f64> = scene
        .occupancy()
        .iter()
        .map(|&o| if o { 0.0 } else { INF })
        .collect();
    let longest = nx.max(ny).max(nz);
    let mut f = vec![0.0; longest];
    let mut out = vec![0.0; longest];
    let mut v = vec![0usize; longest];
    let mut z = vec![0.0; longest + 1];

    // separable passes along x, then y, then z
    let strides = [1, nx, nx * ny];
    for axis in 0..3 {
        let n = dims[axis];
        let stride = strides[axis];
        let (a, b) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        for jb in 0..dims[b] {
            for ja in 0..dims[a] {
                let base = ja * strides[a] + jb * strides[b];
                for q in 0..n {
                    f[q] = g[base + q * stride];
                }
                edt_1d(&f[..n], &mut out[..n], &mut v[..n], &mut z[..n + 1]);
                for q in 0..n {
                    g[base + q * stride] = out[q];
                }
            }
        }
    }
    let s = scene.voxel_size();
    let distance = g
        .into_iter()
        .map(|d2| {
            if d2 >= INF {
                d_max
            } else {
                (d2.sqrt() * s).min(d_max)
            }
        })
        .collect();
    Esdf {
        dims,
        voxel_size: s,
        origin: scene.origin(),
        d_max,
        distance,
    }
}

impl Esdf {
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn origin(&self) -> Point3 {
        self.origin
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    pub fn distances(&self) -> &[f64] {
        &self.distance
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.distance[i + self.dims[0] * (j + self.dims[1] * k)]
    }

    /// Trilinear interpolation over voxel centers with its analytic gradient.
    /// Outside the span of centers the query is clamped per axis and the
    /// gradient along a clamped axis is zero.
    pub fn sample(&self, p: Point3) -> Result<EsdfSample> {
        if p.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite(p));
        }
        let s = self.voxel_size;
        let mut i0 = [0usize; 3];
        let mut t = [0.0; 3];
        let mut live = [true; 3];
        let mut clamped = false;
        for a in 0..3 {
            let n = self.dims[a];
            let u = (p[a] - self.origin[a]) / s - 0.5;
            let hi = (n - 1) as f64;
            let uc = if u < 0.0 {
                clamped = true;
                live[a] = false;
                0.0
            } else if u > hi {
                clamped = true;
                live[a] = false;
                hi
            } else {
                u
            };
            if n == 1 {
                live[a] = false;
                continue;
            }
            let base = (uc.floor() as usize).min(n - 2);
            i0[a] = base;
            t[a] = uc - base as f64;
        }
        let corner = |di: usize, dj: usize, dk: usize| {
            let i = (i0[0] + di).min(self.dims[0] - 1);
            let j = (i0[1] + dj).min(self.dims[1] - 1);
            let k = (i0[2] + dk).min(self.dims[2] - 1);
            self.at(i, j, k)
        };
        let mut c = [[[0.0; 2]; 2]; 2];
        for (di, ci) in c.iter_mut().enumerate() {
            for (dj, cj) in ci.iter_mut().enumerate() {
                for (dk, v) in cj.iter_mut().enumerate() {
                    *v = corner(di, dj, dk);
                }
            }
        }
        let [tx, ty, tz] = t;
        let lerp = |a: f64, b: f64, w: f64| a + (b - a) * w;
        // collapse z, then y, then x
        let cz = |di: usize, dj: usize| lerp(c[di][dj][0], c[di][dj][1], tz);
        let cy = |di: usize| lerp(cz(di, 0), cz(di, 1), ty);
        let distance = lerp(cy(0), cy(1), tx);

        let dx = cy(1) - cy(0);
        let dy = {
            let y0 = lerp(cz(0, 0), cz(1, 0), tx);
            let y1 = lerp(cz(0, 1), cz(1, 1), tx);
            y1 - y0
        };
        let dz = {
            let plane = |dk: usize| {
                let a = lerp(c[0][0][dk], c[1][0][dk], tx);
                let b = lerp(c[0][1][dk], c[1][1][dk], tx);
                lerp(a, b, ty)
            };
            plane(1) - plane(0)
        };
        let mut gradient = [dx / s, dy / s, dz / s];
        for a in 0..3 {
            if !live[a] {
                gradient[a] = 0.0;
            }
        }
        Ok(EsdfSample {
            distance,
            gradient,
            clamped,
        })
    }

    /// Whether `goal` can be reached from `start` by rolling: 4-connected
    /// search over the horizontal layer at height `z`, through cells whose
    /// clearance is at least `clearance`.
    pub fn land_reachable(&self, start: Point3, goal: Point3, z: f64, clearance: f64) -> bool {
        let s = self.voxel_size;
        let [nx, ny, nz] = self.dims;
        let k = (((z - self.origin[2]) / s).floor().max(0.0) as usize).min(nz - 1);
        let cell = |p: Point3| -> Option<(usize, usize)> {
            let i = ((p[0] - self.origin[0]) / s).floor();
            let j = ((p[1] - self.origin[1]) / s).floor();
            (i >= 0.0 && j >= 0.0 && i < nx as f64 && j < ny as f64)
                .then_some((i as usize, j as usize))
        };
        let (Some(a), Some(b)) = (cell(start), cell(goal)) else {
            return false;
        };
        let free = |i: usize, j: usize| self.at(i, j, k) >= clearance;
        if !free(a.0, a.1) || !free(b.0, b.1) {
            return false;
        }
        let mut seen = vec![false; nx * ny];
        let mut queue = VecDeque::from([a]);
        seen[a.0 + nx * a.1] = true;
        while let Some((i, j)) = queue.pop_front() {
            if (i, j) == b {
                return true;
            }
            let nbrs = [
                (i.wrapping_sub(1), j),
                (i + 1, j),
                (i, j.wrapping_sub(1)),
                (i, j + 1),
            ];
            for (ni, nj) in nbrs {
                if ni < nx && nj < ny && !seen[ni + nx * nj] && free(ni, nj) {
                    seen[ni + nx * nj] = true;
                    queue.push_back((ni, nj));
                }
            }
        }
        false
    }
}
