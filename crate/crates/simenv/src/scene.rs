use std::fmt;
use std::path::Path;
use std::str::FromStr;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::Point3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Template {
    Corridor,
    RoomCluster,
    WallGap,
    RandomBoxes,
}

impl Template {
    pub const ALL: [Template; 4] = [
        Template::Corridor,
        Template::RoomCluster,
        Template::WallGap,
        Template::RandomBoxes,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Template::Corridor => "corridor",
            Template::RoomCluster => "room-cluster",
            Template::WallGap => "wall-gap",
            Template::RandomBoxes => "random-boxes",
        }
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Template {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        Template::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| SimError::DegenerateParams(format!("unknown template '{s}'")))
    }
}

/// Generation parameters. Lengths are meters; unset optional placements are
/// drawn from the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneParams {
    pub extents: [usize; 3],
    pub voxel_size: f64,
    /// World position of the (0, 0, 0) voxel corner; `None` centers the grid on y = 0.
    pub origin: Option<Point3>,
    /// Close the two y boundaries with one-voxel walls.
    pub side_walls: bool,
    pub corridor_width: f64,
    /// Pillars placed inside corridors and rooms.
    pub obstacles: usize,
    /// Narrowest free passage left beside any pillar.
    pub min_passage: f64,
    pub wall_x: Option<f64>,
    pub wall_thickness: f64,
    pub wall_height: Option<f64>,
    pub gap_width: f64,
    pub gap_height: f64,
    pub gap_center_y: Option<f64>,
    pub room_count: usize,
    pub door_width: f64,
    pub door_height: f64,
    /// Fraction of floor area covered by boxes.
    pub box_density: f64,
    pub box_size: (f64, f64),
    /// Obstacles keep clear of `x < keep_clear`, where robots start.
    pub keep_clear: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            extents: [100, 40, 30],
            voxel_size: 0.1,
            origin: None,
            side_walls: true,
            corridor_width: 2.0,
            obstacles: 2,
            min_passage: 0.9,
            wall_x: None,
            wall_thickness: 0.2,
            wall_height: None,
            gap_width: 1.2,
            gap_height: 1.0,
            gap_center_y: None,
            room_count: 2,
            door_width: 1.1,
            door_height: 2.0,
            box_density: 0.08,
            box_size: (0.3, 0.8),
            keep_clear: 1.5,
        }
    }
}

/// Boolean occupancy grid. Voxel `(i, j, k)` spans
/// `origin + [i, i+1) × [j, j+1) × [k, k+1) · voxel_size`; the ground plane
/// z = 0 is never occupied.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelScene {
    dims: [usize; 3],
    voxel_size: f64,
    origin: Point3,
    occupancy: Vec<bool>,
    pub template: Option<Template>,
    pub seed: u64,
}

impl VoxelScene {
    pub fn empty(dims: [usize; 3], voxel_size: f64, origin: Point3) -> Result<Self> {
        if dims.contains(&0) {
            return Err(SimError::DegenerateParams(format!(
                "zero extent in {dims:?}"
            )));
        }
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(SimError::DegenerateParams(format!(
                "voxel size {voxel_size}"
            )));
        }
        Ok(Self {
            dims,
            voxel_size,
            origin,
            occupancy: vec![false; dims.iter().product()],
            template: None,
            seed: 0,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn origin(&self) -> Point3 {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.occupancy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupancy.is_empty()
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occupancy
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn occupied(&self, i: usize, j: usize, k: usize) -> bool {
        self.occupancy[self.index(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, value: bool) {
        let idx = self.index(i, j, k);
        self.occupancy[idx] = value;
    }

    pub fn occupied_count(&self) -> usize {
        self.occupancy.iter().filter(|&&o| o).count()
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> Point3 {
        let s = self.voxel_size;
        [
            self.origin[0] + (i as f64 + 0.5) * s,
            self.origin[1] + (j as f64 + 0.5) * s,
            self.origin[2] + (k as f64 + 0.5) * s,
        ]
    }

    /// World-space corners of the grid.
    pub fn bounds(&self) -> (Point3, Point3) {
        let hi = [0, 1, 2].map(|a| self.origin[a] + self.dims[a] as f64 * self.voxel_size);
        (self.origin, hi)
    }

    /// Voxel containing `p`, if inside the grid.
    pub fn cell_of(&self, p: Point3) -> Option<[usize; 3]> {
        let mut c = [0usize; 3];
        for a in 0..3 {
            let u = ((p[a] - self.origin[a]) / self.voxel_size).floor();
            if !(u >= 0.0 && u < self.dims[a] as f64) {
                return None;
            }
            c[a] = u as usize;
        }
        Some(c)
    }

    pub fn is_occupied_at(&self, p: Point3) -> bool {
        self.cell_of(p)
            .is_some_and(|[i, j, k]| self.occupied(i, j, k))
    }

    /// Marks every voxel whose center lies in the axis-aligned box `[lo, hi)`.
    pub fn fill_box(&mut self, lo: Point3, hi: Point3) {
        let range = |a: usize| {
            let s = self.voxel_size;
            let first = ((lo[a] - self.origin[a]) / s - 0.5).ceil().max(0.0) as usize;
            let last =
                (((hi[a] - self.origin[a]) / s - 0.5).ceil().max(0.0) as usize).min(self.dims[a]);
            first..last
        };
        let (ri, rj, rk) = (range(0), range(1), range(2));
        for k in rk {
            for j in rj.clone() {
                for i in ri.clone() {
                    self.set(i, j, k, true);
                }
            }
        }
    }

    /// Copy that keeps only occupied voxels within `radius` of `center` and
    /// inside the horizontal window `center ± half_extent`; the full height is kept.
    pub fn visible_window(&self, center: Point3, half_extent: f64, radius: f64) -> VoxelScene {
        let s = self.voxel_size;
        let lo_i = |a: usize| {
            (((center[a] - half_extent - self.origin[a]) / s)
                .floor()
                .max(0.0) as usize)
                .min(self.dims[a] - 1)
        };
        let hi_i = |a: usize| {
            (((center[a] + half_extent - self.origin[a]) / s)
                .ceil()
                .max(1.0) as usize)
                .min(self.dims[a])
        };
        let (i0, i1, j0, j1) = (lo_i(0), hi_i(0), lo_i(1), hi_i(1));
        let (i1, j1) = (i1.max(i0 + 1), j1.max(j0 + 1));
        let dims = [i1 - i0, j1 - j0, self.dims[2]];
        let origin = [
            self.origin[0] + i0 as f64 * s,
            self.origin[1] + j0 as f64 * s,
            self.origin[2],
        ];
        let mut out = VoxelScene::empty(dims, s, origin).expect("non-empty window");
        let r2 = radius * radius;
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    if self.occupied(i + i0, j + j0, k) {
                        let c = self.center(i + i0, j + j0, k);
                        if crate::dist2(c, center) <= r2 {
                            out.set(i, j, k, true);
                        }
                    }
                }
            }
        }
        out.template = self.template;
        out.seed = self.seed;
        out
    }

    pub fn to_file(&self) -> SceneFile {
        let mut bits = vec![0u8; self.occupancy.len().div_ceil(8)];
        for (i, &o) in self.occupancy.iter().enumerate() {
            if o {
                bits[i / 8] |= 1 << (i % 8);
            }
        }
        SceneFile {
            extents: self.dims,
            voxel_size: self.voxel_size,
            origin: self.origin,
            template: self.template,
            seed: self.seed,
            occupancy: B64.encode(bits),
        }
    }

    pub fn from_file(file: &SceneFile) -> Result<Self> {
        let mut scene = VoxelScene::empty(file.extents, file.voxel_size, file.origin)?;
        let bits = B64
            .decode(&file.occupancy)
            .map_err(|e| SimError::Format(e.to_string()))?;
        if bits.len() != scene.occupancy.len().div_ceil(8) {
            return Err(SimError::Format(format!(
                "occupancy holds {} bytes, expected {}",
                bits.len(),
                scene.occupancy.len().div_ceil(8)
            )));
        }
        for (i, o) in scene.occupancy.iter_mut().enumerate() {
            *o = bits[i / 8] >> (i % 8) & 1 == 1;
        }
        scene.template = file.template;
        scene.seed = file.seed;
        Ok(scene)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(&self.to_file())?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: SceneFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_file(&file)
    }
}

/// On-disk scene: JSON header plus the occupancy bitmask (x fastest, then y,
/// then z; bit `i % 8` of byte `i / 8`) in base64.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub extents: [usize; 3],
    pub voxel_size: f64,
    pub origin: Point3,
    pub template: Option<Template>,
    pub seed: u64,
    pub occupancy: String,
}

/// Deterministic procedural scene for `(seed, template, params)`.
pub fn generate_scene(seed: u64, template: Template, params: &SceneParams) -> Result<VoxelScene> {
    validate(params)?;
    let s = params.voxel_size;
    let [nx, ny, nz] = params.extents;
    let origin = params.origin.unwrap_or([0.0, -(ny as f64) * s / 2.0, 0.0]);
    let mut scene = VoxelScene::empty(params.extents, s, origin)?;
    scene.template = Some(template);
    scene.seed = seed;
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ (template as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let (lo, hi) = scene.bounds();
    let length = hi[0] - lo[0];
    let height = hi[2] - lo[2];

    match template {
        Template::Corridor => {
            let half = params.corridor_width / 2.0;
            scene.fill_box([lo[0], lo[1], lo[2]], [hi[0], -half, hi[2]]);
            scene.fill_box([lo[0], half, lo[2]], [hi[0], hi[1], hi[2]]);
            place_pillars(
                &mut scene,
                &mut rng,
                params,
                -half,
                half,
                params.keep_clear,
                length - 1.0,
            );
        }
        Template::WallGap => {
            if params.side_walls {
                side_walls(&mut scene);
            }
            let wall_x = params
                .wall_x
                .unwrap_or_else(|| lo[0] + rng.gen_range(0.35..0.65) * length);
            let wx0 = ((wall_x - origin[0]) / s).round() as usize;
            let wt = ((params.wall_thickness / s).round() as usize).max(1);
            let wh = params
                .wall_height
                .map_or(nz, |h| ((h / s).round() as usize).clamp(1, nz));
            let gw = ((params.gap_width / s).round() as usize).clamp(1, ny);
            let gh = ((params.gap_height / s).round() as usize).clamp(1, nz);
            let gy0 = match params.gap_center_y {
                Some(y) => ((y - origin[1]) / s - gw as f64 / 2.0).round().max(0.0) as usize,
                None => {
                    let margin = usize::from(params.side_walls) + 1;
                    rng.gen_range(margin..=(ny - gw - margin).max(margin))
                }
            }
            .min(ny - gw);
            for k in 0..wh {
                for j in 0..ny {
                    let in_gap = (gy0..gy0 + gw).contains(&j) && k < gh;
                    if in_gap {
                        continue;
                    }
                    for i in wx0..(wx0 + wt).min(nx) {
                        scene.set(i, j, k, true);
                    }
                }
            }
            let _ = height;
        }
        Template::RoomCluster => {
            if params.side_walls {
                side_walls(&mut scene);
            }
            let rooms = params.room_count.max(1);
            let span = length - params.keep_clear - 1.0;
            let wt = ((params.wall_thickness / s).round() as usize).max(1);
            let dw = ((params.door_width / s).round() as usize).clamp(1, ny);
            let dh = ((params.door_height / s).round() as usize).clamp(1, nz);
            for r in 0..rooms {
                let x = lo[0] + params.keep_clear + span * (r as f64 + 1.0) / (rooms as f64 + 1.0);
                let x = x + rng.gen_range(-0.3..0.3);
                let wx0 = ((x - origin[0]) / s).round() as usize;
                let margin = usize::from(params.side_walls) + 1;
                let gy0 = rng
                    .gen_range(margin..=(ny - dw - margin).max(margin))
                    .min(ny - dw);
                for k in 0..nz {
                    for j in 0..ny {
                        if (gy0..gy0 + dw).contains(&j) && k < dh {
                            continue;
                        }
                        for i in wx0..(wx0 + wt).min(nx) {
                            scene.set(i, j, k, true);
                        }
                    }
                }
            }
            let inner = (lo[1] + s, hi[1] - s);
            place_pillars(
                &mut scene,
                &mut rng,
                params,
                inner.0,
                inner.1,
                params.keep_clear,
                length - 1.0,
            );
        }
        Template::RandomBoxes => {
            let (bmin, bmax) = params.box_size;
            let mean_area = ((bmin + bmax) / 2.0).powi(2);
            let floor = (length - params.keep_clear) * (hi[1] - lo[1]);
            let count = (params.box_density * floor / mean_area).round() as usize;
            for _ in 0..count {
                let (sx, sy) = (rng.gen_range(bmin..=bmax), rng.gen_range(bmin..=bmax));
                let sz = rng.gen_range((0.3 * height)..=height);
                let x0 = rng.gen_range(
                    lo[0] + params.keep_clear..(hi[0] - sx).max(lo[0] + params.keep_clear + 1e-9),
                );
                let y0 = rng.gen_range(lo[1]..(hi[1] - sy).max(lo[1] + 1e-9));
                scene.fill_box([x0, y0, 0.0], [x0 + sx, y0 + sy, sz]);
            }
        }
    }
    Ok(scene)
}

fn validate(p: &SceneParams) -> Result<()> {
    if p.extents.contains(&0) {
        return Err(SimError::DegenerateParams(format!(
            "zero extent in {:?}",
            p.extents
        )));
    }
    if p.extents.iter().any(|&e| e < 4) {
        return Err(SimError::DegenerateParams(format!(
            "extents {:?} below 4 voxels",
            p.extents
        )));
    }
    if !(p.voxel_size > 0.0 && p.voxel_size.is_finite()) {
        return Err(SimError::DegenerateParams(format!(
            "voxel size {}",
            p.voxel_size
        )));
    }
    let positive = [
        ("corridor_width", p.corridor_width),
        ("gap_width", p.gap_width),
        ("gap_height", p.gap_height),
        ("door_width", p.door_width),
        ("door_height", p.door_height),
        ("wall_thickness", p.wall_thickness),
    ];
    for (name, v) in positive {
        if !(v > 0.0 && v.is_finite()) {
            return Err(SimError::DegenerateParams(format!("{name} = {v}")));
        }
    }
    if !(0.0..=1.0).contains(&p.box_density) {
        return Err(SimError::DegenerateParams(format!(
            "box_density = {}",
            p.box_density
        )));
    }
    if !(p.box_size.0 > 0.0 && p.box_size.0 <= p.box_size.1) {
        return Err(SimError::DegenerateParams(format!(
            "box_size = {:?}",
            p.box_size
        )));
    }
    Ok(())
}

fn side_walls(scene: &mut VoxelScene) {
    let [nx, ny, nz] = scene.dims;
    for k in 0..nz {
        for i in 0..nx {
            scene.set(i, 0, k, true);
            scene.set(i, ny - 1, k, true);
        }
    }
}

/// Full-height square pillars between `y_lo` and `y_hi`, each leaving at
/// least `min_passage` free on one side.
#[allow(clippy::too_many_arguments)]
fn place_pillars(
    scene: &mut VoxelScene,
    rng: &mut ChaCha8Rng,
    params: &SceneParams,
    y_lo: f64,
    y_hi: f64,
    x_lo: f64,
    x_hi: f64,
) {
    let (_, hi) = scene.bounds();
    let x_lo = scene.origin[0] + x_lo;
    let x_hi = scene.origin[0] + x_hi;
    if x_hi <= x_lo {
        return;
    }
    for _ in 0..params.obstacles {
        for _attempt in 0..32 {
            let size = rng.gen_range(0.3..=0.5);
            let x0 = rng.gen_range(x_lo..x_hi);
            if y_hi - y_lo <= size {
                break;
            }
            let y0 = rng.gen_range(y_lo..y_hi - size);
            let widest = (y0 - y_lo).max(y_hi - (y0 + size));
            if widest >= params.min_passage {
                scene.fill_box([x0, y0, 0.0], [x0 + size, y0 + size, hi[2]]);
                break;
            }
        }
    }
}
