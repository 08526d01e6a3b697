//! Imperative-learning loop: draw a scene, pose and goal, render depth, run
//! the network, densify, score the trajectory with the task loss and step
//! the optimizer on its gradient. Also the held-out evaluation protocol.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use keynav_autodiff::{Adam, Tape, Tensor};
use keynav_simenv::{
    build_esdf, generate_scene, point_collides, render_depth, sample_goal_with, to_robot_frame,
    Camera, DepthImage, Esdf, GoalConfig, GoalMode, Point3, SceneParams, Template, VoxelScene,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, CoreError, Result};
use crate::gkpn::{Gkpn, GkpnConfig};
use crate::loss::{total_loss, LossConfig, LossInputs, LossReport, Pose};
use crate::modes::RobotParams;
use crate::navigator::{navigate, Episode, EpisodeSummary, NavConfig};
use crate::plan::Planner;
use crate::spline::spline_interpolate;

/// Scene seeds at or above this are reserved for evaluation.
pub const HELD_OUT_SEED_BASE: u64 = 1 << 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch: usize,
    pub steps: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables it.
    pub clip: f64,
    pub templates: Vec<Template>,
    pub scene_count: usize,
    pub scene: SceneParams,
    pub goal_mode: GoalMode,
    pub goals: GoalConfig,
    pub spn: bool,
    pub lapn: bool,
    /// Spline samples per key-point gap.
    pub m: usize,
    pub loss: LossConfig,
    /// Save weights every this many steps (0 = only at the end).
    pub checkpoint_every: usize,
    /// Fraction of samples whose robot starts airborne.
    pub air_start_prob: f64,
    /// Uniform heading noise around the goal bearing, radians.
    pub yaw_noise: f64,
    /// Goals lie this far ahead of the robot along x, meters (negative is behind).
    pub goal_ahead: (f64, f64),
    /// Draw one batch and reuse it every step.
    pub fixed_batch: bool,
    /// Pre-rendered samples to train on instead of online generation.
    pub dataset: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            batch: 32,
            steps: 2000,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: 5.0,
            templates: vec![Template::Corridor, Template::WallGap],
            scene_count: 100,
            scene: SceneParams::default(),
            goal_mode: GoalMode::Mixed,
            goals: GoalConfig::default(),
            spn: true,
            lapn: true,
            m: 8,
            loss: LossConfig::default(),
            checkpoint_every: 0,
            air_start_prob: 0.2,
            yaw_noise: 0.6,
            goal_ahead: (-1.0, 9.0),
            fixed_batch: false,
            dataset: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.scene_count == 0 || self.m == 0 {
            return Err(config("batch, scene_count and m must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0)
        {
            return Err(config("optimizer decay constants must lie in [0, 1)"));
        }
        if self.templates.is_empty() {
            return Err(config("at least one scene template is required"));
        }
        if self.clip.is_nan() || self.clip < 0.0 {
            return Err(config(format!("clip {} must be non-negative", self.clip)));
        }
        if !(0.0..=1.0).contains(&self.air_start_prob) {
            return Err(config("air_start_prob must lie in [0, 1]"));
        }
        if self.goal_ahead.0.partial_cmp(&self.goal_ahead.1) != Some(std::cmp::Ordering::Less) {
            return Err(config(format!("goal_ahead {:?} is empty", self.goal_ahead)));
        }
        self.loss.weights.validate()
    }

    /// The model config with this run's ablation flags applied.
    pub fn model_config(&self, base: &GkpnConfig) -> GkpnConfig {
        GkpnConfig {
            spn: self.spn,
            lapn: self.lapn,
            ..base.clone()
        }
    }
}

/// Camera matching a model's input size and range.
pub fn camera_for(cfg: &GkpnConfig) -> Camera {
    Camera {
        width: cfg.width,
        height: cfg.height,
        max_range: cfg.max_range,
        ..Camera::default()
    }
}

pub struct SceneEntry {
    pub template: Template,
    pub seed: u64,
    pub scene: VoxelScene,
    pub esdf: Esdf,
}

impl SceneEntry {
    pub fn generate(
        template: Template,
        seed: u64,
        params: &SceneParams,
        d_max: f64,
    ) -> Result<Self> {
        let scene = generate_scene(seed, template, params)?;
        let esdf = build_esdf(&scene, d_max);
        Ok(Self {
            template,
            seed,
            scene,
            esdf,
        })
    }
}

fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of training scene `i`; always below [`HELD_OUT_SEED_BASE`].
pub fn training_scene_seed(run_seed: u64, i: usize) -> u64 {
    mix(run_seed, i as u64) % HELD_OUT_SEED_BASE
}

/// Seed of held-out scene `i`.
pub fn held_out_scene_seed(eval_seed: u64, i: usize) -> u64 {
    HELD_OUT_SEED_BASE + mix(eval_seed ^ 0x5EED, i as u64) % HELD_OUT_SEED_BASE
}

pub fn training_scenes(cfg: &TrainConfig) -> Result<Vec<SceneEntry>> {
    (0..cfg.scene_count)
        .map(|i| {
            let t = cfg.templates[i % cfg.templates.len()];
            SceneEntry::generate(
                t,
                training_scene_seed(cfg.seed, i),
                &cfg.scene,
                keynav_simenv::DEFAULT_D_MAX,
            )
        })
        .collect()
}

/// One training example: where the robot is, where it should go, what it sees.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub scene: usize,
    pub pose: Pose,
    /// Start height of the trajectory.
    pub z: f64,
    /// Goal in the robot frame.
    pub goal: Point3,
    pub depth: DepthImage,
}

/// Knobs shared by training-sample generation and evaluation.
#[derive(Clone, Debug)]
pub struct SampleSpec<'a> {
    pub goal_mode: GoalMode,
    pub goals: &'a GoalConfig,
    pub air_start_prob: f64,
    pub yaw_noise: f64,
    pub goal_ahead: (f64, f64),
}

impl<'a> SampleSpec<'a> {
    pub fn from_train(cfg: &'a TrainConfig) -> Self {
        Self {
            goal_mode: cfg.goal_mode,
            goals: &cfg.goals,
            air_start_prob: cfg.air_start_prob,
            yaw_noise: cfg.yaw_noise,
            goal_ahead: cfg.goal_ahead,
        }
    }
}

const START_CLEARANCE: f64 = 0.3;

/// Draws a free pose in scene `idx` with a reachable-looking goal ahead.
pub fn draw_sample(
    scenes: &[SceneEntry],
    idx: usize,
    rng: &mut ChaCha8Rng,
    spec: &SampleSpec<'_>,
    camera: &Camera,
) -> Result<Sample> {
    let scene = &scenes[idx].scene;
    let (lo, hi) = scene.bounds();
    let h_r = spec.goals.h_r;
    for _ in 0..200 {
        let x = rng.gen_range(lo[0] + 0.3..hi[0] - 1.0);
        let y = rng.gen_range(lo[1] + 0.3..hi[1] - 0.3);
        let z = if rng.gen_bool(spec.air_start_prob) {
            rng.gen_range(spec.goals.air_z.0..=spec.goals.air_z.1)
        } else {
            h_r
        };
        let pos = [x, y, z];
        if point_collides(scene, pos, START_CLEARANCE) {
            continue;
        }
        let goals = GoalConfig {
            x_range: Some((
                (x + spec.goal_ahead.0).max(lo[0] + 0.2),
                (x + spec.goal_ahead.1).min(hi[0] - 0.2),
            )),
            max_tries: 50,
            ..spec.goals.clone()
        };
        if goals.x_range.is_some_and(|(a, b)| a >= b) {
            continue;
        }
        let Ok(goal) = sample_goal_with(scene, rng, spec.goal_mode, &goals) else {
            continue;
        };
        let g = goal.position;
        let bearing = if (g[0] - x).hypot(g[1] - y) > 0.3 {
            (g[1] - y).atan2(g[0] - x)
        } else {
            rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI)
        };
        let yaw = bearing + rng.gen_range(-1.0..=1.0) * spec.yaw_noise;
        let depth = render_depth(scene, &camera.clone().at(pos, yaw))?;
        return Ok(Sample {
            scene: idx,
            pose: Pose { x, y, yaw },
            z,
            goal: to_robot_frame(g, pos, yaw),
            depth,
        });
    }
    Err(config(format!(
        "no valid training pose in scene {}",
        scenes[idx].seed
    )))
}

/// Forward + loss for one sample on its own tape; returns the report, the
/// collision label, the predicted fear and (optionally) parameter gradients.
pub struct SampleResult {
    pub report: LossReport,
    pub label: bool,
    pub fear: f64,
    pub grads: Option<Vec<Vec<f64>>>,
}

pub fn sample_loss(
    model: &Gkpn,
    sample: &Sample,
    entry: &SceneEntry,
    m: usize,
    loss: &LossConfig,
    with_grads: bool,
) -> Result<SampleResult> {
    let tape = Tape::new();
    let depth = tape.constant(model.depth_tensor(&sample.depth)?);
    let goal = tape.constant(Tensor::vector(sample.goal.to_vec()));
    let out = model.forward(&tape, depth, goal)?;
    let traj = spline_interpolate(&tape, out.keypoints, m, [0.0, 0.0, sample.z])?;
    let inputs = LossInputs {
        scene: &entry.scene,
        esdf: &entry.esdf,
        pose: sample.pose,
        goal: sample.goal,
        label_override: None,
    };
    let vars = total_loss(&tape, out.keypoints, traj, out.fear, &inputs, loss)?;
    let report = vars.report();
    let grads = if with_grads {
        Some(tape.backward(vars.total)?.param_grads(&model.params))
    } else {
        None
    };
    Ok(SampleResult {
        report,
        label: vars.collision_label,
        fear: out.fear.item(),
        grads,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct DatasetHeader {
    scene_params: SceneParams,
    scenes: Vec<(Template, u64)>,
    width: usize,
    height: usize,
    max_range: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct DatasetRecord {
    scene: usize,
    pose: Pose,
    z: f64,
    goal: Point3,
    /// Little-endian f64 ranges, row-major.
    depth: String,
}

/// Pre-renders `count` samples from the training scenes of `cfg` into a
/// JSON-lines file (header line first).
pub fn write_dataset(
    path: impl AsRef<Path>,
    model: &GkpnConfig,
    cfg: &TrainConfig,
    count: usize,
) -> Result<()> {
    cfg.validate()?;
    let scenes = training_scenes(cfg)?;
    let camera = camera_for(model);
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 0xDA7A));
    let mut w = BufWriter::new(File::create(path)?);
    let header = DatasetHeader {
        scene_params: cfg.scene.clone(),
        scenes: scenes.iter().map(|s| (s.template, s.seed)).collect(),
        width: model.width,
        height: model.height,
        max_range: model.max_range,
    };
    serde_json::to_writer(&mut w, &header)?;
    writeln!(w)?;
    let spec = SampleSpec::from_train(cfg);
    for i in 0..count {
        let s = draw_sample(&scenes, i % scenes.len(), &mut rng, &spec, &camera)?;
        let bytes: Vec<u8> = s.depth.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        let rec = DatasetRecord {
            scene: s.scene,
            pose: s.pose,
            z: s.z,
            goal: s.goal,
            depth: B64.encode(bytes),
        };
        serde_json::to_writer(&mut w, &rec)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a dataset written by [`write_dataset`], regenerating its scenes.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<(Vec<SceneEntry>, Vec<Sample>)> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header: DatasetHeader = match lines.next() {
        Some(l) => serde_json::from_str(&l?)?,
        None => return Err(config("empty dataset")),
    };
    let scenes = header
        .scenes
        .iter()
        .map(|&(t, seed)| {
            SceneEntry::generate(t, seed, &header.scene_params, keynav_simenv::DEFAULT_D_MAX)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut samples = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DatasetRecord = serde_json::from_str(&line)?;
        if rec.scene >= scenes.len() {
            return Err(config(format!(
                "sample refers to scene {} of {}",
                rec.scene,
                scenes.len()
            )));
        }
        let bytes = B64
            .decode(rec.depth)
            .map_err(|e| config(format!("depth payload: {e}")))?;
        let expected = header.width * header.height;
        if bytes.len() != expected * 8 {
            return Err(CoreError::Length {
                what: "depth bytes",
                expected: expected * 8,
                got: bytes.len(),
            });
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        samples.push(Sample {
            scene: rec.scene,
            pose: rec.pose,
            z: rec.z,
            goal: rec.goal,
            depth: DepthImage {
                width: header.width,
                height: header.height,
                max_range: header.max_range,
                data,
            },
        });
    }
    if samples.is_empty() {
        return Err(config("dataset has no samples"));
    }
    Ok((scenes, samples))
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: Gkpn,
    pub log: Vec<LossReport>,
    scenes: Vec<SceneEntry>,
    dataset: Option<Vec<Sample>>,
    fixed: Option<Vec<Sample>>,
    camera: Camera,
    adam: Adam,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: &GkpnConfig, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model_cfg = cfg.model_config(model);
        let net = Gkpn::new(model_cfg.clone(), mix(cfg.seed, 0x1417))?;
        let (scenes, dataset) = match &cfg.dataset {
            Some(path) => {
                let (s, d) = read_dataset(path)?;
                (s, Some(d))
            }
            None => (training_scenes(cfg)?, None),
        };
        Ok(Self {
            config: cfg.clone(),
            model: net,
            log: Vec::new(),
            scenes,
            dataset,
            fixed: None,
            camera: camera_for(&model_cfg),
            adam: Adam::new(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
                .with_clip((cfg.clip > 0.0).then_some(cfg.clip)),
            rng: ChaCha8Rng::seed_from_u64(mix(cfg.seed, 0x5A3E)),
        })
    }

    pub fn scenes(&self) -> &[SceneEntry] {
        &self.scenes
    }

    fn draw_batch(&mut self) -> Result<Vec<Sample>> {
        let n = self.config.batch;
        if let Some(d) = &self.dataset {
            return Ok((0..n)
                .map(|_| d[self.rng.gen_range(0..d.len())].clone())
                .collect());
        }
        let spec = SampleSpec::from_train(&self.config);
        (0..n)
            .map(|_| {
                let idx = self.rng.gen_range(0..self.scenes.len());
                draw_sample(&self.scenes, idx, &mut self.rng, &spec, &self.camera)
            })
            .collect()
    }

    /// One optimizer step on a freshly drawn (or the fixed) batch; returns
    /// the batch-mean losses before the update.
    pub fn step(&mut self) -> Result<LossReport> {
        let batch = match (&self.fixed, self.config.fixed_batch) {
            (Some(b), true) => b.clone(),
            _ => {
                let b = self.draw_batch()?;
                if self.config.fixed_batch {
                    self.fixed = Some(b.clone());
                }
                b
            }
        };
        let step = self.log.len();
        let mut grads: Vec<Vec<f64>> = self
            .model
            .params
            .iter()
            .map(|(_, t)| vec![0.0; t.numel()])
            .collect();
        let mut reports = Vec::with_capacity(batch.len());
        for sample in &batch {
            let entry = &self.scenes[sample.scene];
            let diverged = |detail: String| CoreError::Diverged {
                step,
                scene_seed: entry.seed,
                checksum: self.model.params.checksum(),
                detail,
            };
            let r = match sample_loss(
                &self.model,
                sample,
                entry,
                self.config.m,
                &self.config.loss,
                true,
            ) {
                Ok(r) => r,
                Err(CoreError::NonFinite(what)) => {
                    return Err(diverged(format!("non-finite {what}")))
                }
                Err(e) => return Err(e),
            };
            if !r.report.is_finite() {
                return Err(diverged(format!("{:?}", r.report)));
            }
            for (acc, g) in grads.iter_mut().zip(r.grads.as_deref().unwrap_or_default()) {
                for (a, v) in acc.iter_mut().zip(g) {
                    *a += v;
                }
            }
            reports.push(r.report);
        }
        let scale = 1.0 / batch.len() as f64;
        for g in grads.iter_mut().flatten() {
            *g *= scale;
        }
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(CoreError::Diverged {
                step,
                scene_seed: self.scenes[batch[0].scene].seed,
                checksum: self.model.params.checksum(),
                detail: "non-finite gradient".into(),
            });
        }
        self.adam.step(&mut self.model.params, &grads);
        let mean = LossReport::mean(&reports);
        self.log.push(mean);
        Ok(mean)
    }

    /// Runs all configured steps. With `out_dir`, writes `train_log.csv`,
    /// periodic `checkpoint_<step>.bin` files and the final `model.bin`.
    pub fn run(&mut self, out_dir: Option<&Path>) -> Result<()> {
        let mut log = match out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let mut w = BufWriter::new(File::create(dir.join("train_log.csv"))?);
                writeln!(w, "step,c_obstacle,c_motion,c_goal,c_energy,fear,total")?;
                Some(w)
            }
            None => None,
        };
        while self.log.len() < self.config.steps {
            let step = self.log.len();
            let r = self.step()?;
            if let Some(w) = log.as_mut() {
                writeln!(
                    w,
                    "{step},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}",
                    r.c_obstacle, r.c_motion, r.c_goal, r.c_energy, r.fear, r.total
                )?;
                let every = self.config.checkpoint_every;
                if every > 0 && (step + 1).is_multiple_of(every) {
                    w.flush()?;
                    self.model.save(
                        out_dir
                            .expect("log implies dir")
                            .join(format!("checkpoint_{:06}.bin", step + 1)),
                    )?;
                }
            }
        }
        if let (Some(mut w), Some(dir)) = (log, out_dir) {
            w.flush()?;
            self.model.save(dir.join("model.bin"))?;
        }
        Ok(())
    }
}

/// Trains a model from scratch; returns it with the per-step loss log.
pub fn train(
    model: &GkpnConfig,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<(Gkpn, Vec<LossReport>)> {
    let mut t = Trainer::new(model, cfg)?;
    t.run(out_dir)?;
    Ok((t.model, t.log))
}

/// Mean total loss over the last `tail` logged steps.
pub fn final_loss(log: &[LossReport], tail: usize) -> f64 {
    let tail = tail.clamp(1, log.len().max(1));
    let from = log.len().saturating_sub(tail);
    LossReport::mean(&log[from..]).total
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub seed: u64,
    pub trials: usize,
    pub templates: Vec<Template>,
    pub scene: SceneParams,
    pub goal_mode: GoalMode,
    pub goals: GoalConfig,
    /// Start x range, meters from the near end of the scene.
    pub start_x: (f64, f64),
    /// Goal x range, meters back from the far end of the scene.
    pub goal_x_from_end: (f64, f64),
    pub nav: NavConfig,
    pub robot: RobotParams,
    /// Held-out samples used for loss and fear-calibration statistics.
    pub loss_samples: usize,
    pub loss: LossConfig,
    pub jobs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 20,
            templates: vec![Template::Corridor, Template::WallGap],
            scene: SceneParams::default(),
            goal_mode: GoalMode::Mixed,
            goals: GoalConfig::default(),
            start_x: (0.5, 1.0),
            goal_x_from_end: (0.5, 2.5),
            nav: NavConfig::default(),
            robot: RobotParams::default(),
            loss_samples: 32,
            loss: LossConfig::default(),
            jobs: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub trials: usize,
    pub successes: usize,
    pub collisions: usize,
    pub goal_reached_rate: f64,
    pub collision_rate: f64,
    /// Mean task loss of the network on held-out samples.
    pub mean_loss: Option<f64>,
    /// Mean |μ − collision label| on the same samples.
    pub fear_calibration_error: Option<f64>,
    pub loss_samples: usize,
    pub unsafe_executed: usize,
    pub rejected_plans: usize,
    pub mean_final_error: f64,
    pub mean_energy_j: f64,
    pub episodes: Vec<EpisodeSummary>,
}

/// Start pose and goal of held-out trial `i`.
pub struct Trial {
    pub entry: SceneEntry,
    pub start: Point3,
    pub yaw: f64,
    pub goal: Point3,
}

pub fn make_trial(cfg: &EvalConfig, i: usize) -> Result<Trial> {
    let template = cfg.templates[i % cfg.templates.len()];
    let entry = SceneEntry::generate(
        template,
        held_out_scene_seed(cfg.seed, i),
        &cfg.scene,
        cfg.nav.d_max,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 0x7E57 + i as u64));
    let (lo, hi) = entry.scene.bounds();
    let h_r = cfg.goals.h_r;
    for _ in 0..500 {
        let x = lo[0] + rng.gen_range(cfg.start_x.0..=cfg.start_x.1);
        let y = rng.gen_range(lo[1] + 0.3..hi[1] - 0.3);
        let start = [x, y, h_r];
        if point_collides(&entry.scene, start, START_CLEARANCE) {
            continue;
        }
        let goals = GoalConfig {
            x_range: Some((hi[0] - cfg.goal_x_from_end.1, hi[0] - cfg.goal_x_from_end.0)),
            ..cfg.goals.clone()
        };
        let goal = sample_goal_with(&entry.scene, &mut rng, cfg.goal_mode, &goals)?.position;
        let yaw = (goal[1] - y).atan2(goal[0] - x);
        return Ok(Trial {
            entry,
            start,
            yaw,
            goal,
        });
    }
    Err(config(format!("no free start in held-out scene {i}")))
}

/// Held-out loss statistics: mean total loss and mean |μ − label|.
pub fn held_out_loss(model: &Gkpn, cfg: &EvalConfig) -> Result<(f64, f64)> {
    let n = cfg.loss_samples.max(1);
    let scenes = (0..n.min(cfg.trials.max(1)))
        .map(|i| {
            let t = cfg.templates[i % cfg.templates.len()];
            SceneEntry::generate(
                t,
                held_out_scene_seed(cfg.seed, i),
                &cfg.scene,
                cfg.nav.d_max,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let camera = camera_for(&model.config);
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 0x1055));
    let spec = SampleSpec {
        goal_mode: cfg.goal_mode,
        goals: &cfg.goals,
        air_start_prob: 0.0,
        yaw_noise: 0.0,
        goal_ahead: TrainConfig::default().goal_ahead,
    };
    let (mut loss, mut calib) = (0.0, 0.0);
    for i in 0..n {
        let s = draw_sample(&scenes, i % scenes.len(), &mut rng, &spec, &camera)?;
        let r = sample_loss(model, &s, &scenes[s.scene], cfg.nav.m, &cfg.loss, false)?;
        loss += r.report.total;
        calib += (r.fear - if r.label { 1.0 } else { 0.0 }).abs();
    }
    Ok((loss / n as f64, calib / n as f64))
}

/// Runs `cfg.trials` navigation episodes on held-out scenes. `model`, when
/// given, also supplies the held-out loss statistics.
pub fn evaluate(
    planner: &dyn Planner,
    model: Option<&Gkpn>,
    camera: &Camera,
    cfg: &EvalConfig,
) -> Result<(EvalReport, Vec<Episode>)> {
    if cfg.trials == 0 || cfg.templates.is_empty() {
        return Err(config("evaluation needs trials and templates"));
    }
    let run = |i: usize| -> Result<Episode> {
        let t = make_trial(cfg, i)?;
        navigate(
            &t.entry.scene,
            t.start,
            t.yaw,
            t.goal,
            planner,
            camera,
            &cfg.robot,
            &cfg.nav,
        )
    };
    let jobs = cfg.jobs.clamp(1, cfg.trials);
    let mut slots: Vec<Option<Result<Episode>>> = (0..cfg.trials).map(|_| None).collect();
    if jobs == 1 {
        for (i, s) in slots.iter_mut().enumerate() {
            *s = Some(run(i));
        }
    } else {
        std::thread::scope(|scope| {
            for (w, chunk) in slots.chunks_mut(cfg.trials.div_ceil(jobs)).enumerate() {
                let run = &run;
                let base = w * cfg.trials.div_ceil(jobs);
                scope.spawn(move || {
                    for (k, s) in chunk.iter_mut().enumerate() {
                        *s = Some(run(base + k));
                    }
                });
            }
        });
    }
    let episodes = slots
        .into_iter()
        .map(|s| s.expect("every trial ran"))
        .collect::<Result<Vec<_>>>()?;
    let (mean_loss, calib) = match model {
        Some(m) => {
            let (l, c) = held_out_loss(m, cfg)?;
            (Some(l), Some(c))
        }
        None => (None, None),
    };
    let n = episodes.len() as f64;
    let successes = episodes.iter().filter(|e| e.summary.success).count();
    let collisions = episodes.iter().filter(|e| e.summary.collided).count();
    let report = EvalReport {
        trials: episodes.len(),
        successes,
        collisions,
        goal_reached_rate: successes as f64 / n,
        collision_rate: collisions as f64 / n,
        mean_loss,
        fear_calibration_error: calib,
        loss_samples: if model.is_some() {
            cfg.loss_samples.max(1)
        } else {
            0
        },
        unsafe_executed: episodes.iter().map(|e| e.summary.unsafe_executed).sum(),
        rejected_plans: episodes.iter().map(|e| e.summary.rejected_plans).sum(),
        mean_final_error: episodes.iter().map(|e| e.summary.final_error).sum::<f64>() / n,
        mean_energy_j: episodes.iter().map(|e| e.summary.energy_j).sum::<f64>() / n,
        episodes: episodes.iter().map(|e| e.summary.clone()).collect(),
    };
    Ok((report, episodes))
}
