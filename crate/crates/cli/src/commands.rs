//! What each subcommand does once its flags are merged into a [`RunConfig`].
//! Every function writes only inside the run directory it is given.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use keynav_core::gkpn::Gkpn;
use keynav_core::modes::Mode;
use keynav_core::navigator::{navigate, Episode};
use keynav_core::plan::{plan_once, PlanResult, Planner, StraightLinePlanner};
use keynav_core::trainer::{
    camera_for, evaluate, final_loss, train, training_scene_seed, EvalReport,
};
use keynav_simenv::{generate_scene, render_depth, Point3, Template, VoxelScene};
use serde::Serialize;

use crate::config::RunConfig;
use crate::render::{read_track, render_svg, Track};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SceneManifestEntry {
    pub file: String,
    pub template: Template,
    pub seed: u64,
    pub occupied: usize,
}

/// Writes `count` scenes as `scene_<i>.json`, plus `manifest.json`.
pub fn gen_scenes(
    cfg: &RunConfig,
    template: Template,
    count: usize,
    seed: u64,
    jobs: usize,
    dir: &Path,
) -> Result<Vec<SceneManifestEntry>> {
    let one = |i: usize| -> Result<SceneManifestEntry> {
        let scene_seed = training_scene_seed(seed, i);
        let scene = generate_scene(scene_seed, template, &cfg.train.scene)?;
        let file = format!("scene_{i:04}.json");
        scene.save(dir.join(&file))?;
        Ok(SceneManifestEntry {
            file,
            template,
            seed: scene_seed,
            occupied: scene.occupied_count(),
        })
    };
    let entries = run_parallel(count, jobs, one)?;
    write_json(&dir.join("manifest.json"), &entries)?;
    Ok(entries)
}

/// Runs `f(0..count)` on up to `jobs` threads; results keep index order.
fn run_parallel<T: Send>(
    count: usize,
    jobs: usize,
    f: impl Fn(usize) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let mut slots: Vec<Option<Result<T>>> = (0..count).map(|_| None).collect();
    if count > 0 {
        let chunk = count.div_ceil(jobs.clamp(1, count));
        std::thread::scope(|scope| {
            for (w, part) in slots.chunks_mut(chunk).enumerate() {
                let f = &f;
                scope.spawn(move || {
                    for (k, s) in part.iter_mut().enumerate() {
                        *s = Some(f(w * chunk + k));
                    }
                });
            }
        });
    }
    slots
        .into_iter()
        .map(|s| s.expect("every item ran"))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub initial_loss: Option<f64>,
    /// Mean total loss over the last 50 steps.
    pub final_loss: Option<f64>,
    pub parameters: usize,
    pub weights: PathBuf,
}

/// Writes `train_log.csv`, checkpoints, `model.bin` and `train_summary.json`.
pub fn train_cmd(cfg: &RunConfig, dir: &Path) -> Result<TrainSummary> {
    let model_cfg = cfg.train.model_config(&cfg.model);
    let (model, log) = train(&model_cfg, &cfg.train, Some(dir))?;
    let summary = TrainSummary {
        steps: log.len(),
        initial_loss: log.first().map(|r| r.total),
        final_loss: (!log.is_empty()).then(|| final_loss(&log, 50)),
        parameters: model.params.iter().map(|(_, t)| t.numel()).sum(),
        weights: dir.join("model.bin"),
    };
    write_json(&dir.join("train_summary.json"), &summary)?;
    Ok(summary)
}

/// Which planner drives `eval` and `navigate`.
pub enum PlannerChoice {
    Weights(PathBuf),
    /// The straight-line reference planner (no network).
    Straight,
}

fn load_planner(
    cfg: &RunConfig,
    choice: &PlannerChoice,
) -> Result<(Box<dyn Planner>, Option<Gkpn>, keynav_simenv::Camera)> {
    match choice {
        PlannerChoice::Weights(p) => {
            let model =
                Gkpn::load(p).with_context(|| format!("loading weights {}", p.display()))?;
            let camera = camera_for(&model.config);
            Ok((Box::new(model.clone()), Some(model), camera))
        }
        PlannerChoice::Straight => Ok((
            Box::new(StraightLinePlanner::default()),
            None,
            camera_for(&cfg.model),
        )),
    }
}

/// Writes `eval_report.json` and one `episodes/episode_<i>.jsonl` per trial.
pub fn eval_cmd(cfg: &RunConfig, planner: &PlannerChoice, dir: &Path) -> Result<EvalReport> {
    let (planner, model, camera) = load_planner(cfg, planner)?;
    let (report, episodes) = evaluate(planner.as_ref(), model.as_ref(), &camera, &cfg.eval)?;
    let ep_dir = dir.join("episodes");
    fs::create_dir_all(&ep_dir)?;
    for (i, ep) in episodes.iter().enumerate() {
        write_episode(ep, &ep_dir.join(format!("episode_{i:04}.jsonl")))?;
    }
    write_json(&dir.join("eval_report.json"), &report)?;
    Ok(report)
}

fn write_episode(ep: &Episode, path: &Path) -> Result<()> {
    let mut w =
        BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    ep.write_jsonl(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Start used when none is given: half a meter in from the scene's near end,
/// centered in y, at body height.
pub fn default_start(scene: &VoxelScene, h_r: f64) -> Point3 {
    let (lo, hi) = scene.bounds();
    [lo[0] + 0.5, 0.5 * (lo[1] + hi[1]), h_r]
}

pub fn bearing(from: Point3, to: Point3) -> f64 {
    (to[1] - from[1]).atan2(to[0] - from[0])
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlanOutput {
    pub start: Point3,
    pub yaw: f64,
    pub goal: Point3,
    #[serde(flatten)]
    pub plan: PlanResult,
}

/// One-shot plan from `start`: `plan.json` (key points, μ, modes, energy)
/// and `trajectory.csv` with `m·n + 1` rows.
pub fn plan_cmd(
    cfg: &RunConfig,
    scene: &Path,
    weights: &Path,
    start: Option<Point3>,
    yaw: Option<f64>,
    goal: Point3,
    dir: &Path,
) -> Result<PlanOutput> {
    let scene = load_scene(scene)?;
    let model =
        Gkpn::load(weights).with_context(|| format!("loading weights {}", weights.display()))?;
    let robot = &cfg.eval.robot;
    let start = start.unwrap_or_else(|| default_start(&scene, robot.h_r));
    check_inside(&scene, start, "start")?;
    check_inside(&scene, goal, "goal")?;
    let yaw = yaw.unwrap_or_else(|| bearing(start, goal));
    let depth = render_depth(&scene, &camera_for(&model.config).at(start, yaw))?;
    let initial = if start[2] > robot.h_r + robot.epsilon {
        Mode::Air
    } else {
        Mode::Land
    };
    let plan = plan_once(
        &model,
        &depth,
        start,
        yaw,
        goal,
        cfg.eval.nav.m,
        robot,
        initial,
    )?;
    write_trajectory_csv(&plan, cfg.eval.nav.m, &dir.join("trajectory.csv"))?;
    let out = PlanOutput {
        start,
        yaw,
        goal,
        plan,
    };
    write_json(&dir.join("plan.json"), &out)?;
    Ok(out)
}

fn write_trajectory_csv(plan: &PlanResult, m: usize, path: &Path) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["index", "x", "y", "z", "segment", "mode"])?;
    for (i, p) in plan.trajectory.iter().enumerate() {
        // the start point belongs to the first segment
        let seg = i.saturating_sub(1) / m;
        let mode = plan.modes.get(seg).copied().unwrap_or(Mode::Land);
        w.write_record([
            i.to_string(),
            format!("{:.6}", p[0]),
            format!("{:.6}", p[1]),
            format!("{:.6}", p[2]),
            seg.to_string(),
            mode.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Closed-loop episode: `episode.jsonl` and `summary.json`.
#[allow(clippy::too_many_arguments)]
pub fn navigate_cmd(
    cfg: &RunConfig,
    scene: &Path,
    planner: &PlannerChoice,
    start: Option<Point3>,
    yaw: Option<f64>,
    goal: Point3,
    dir: &Path,
) -> Result<Episode> {
    let scene = load_scene(scene)?;
    let (planner, _, camera) = load_planner(cfg, planner)?;
    let start = start.unwrap_or_else(|| default_start(&scene, cfg.eval.robot.h_r));
    let yaw = yaw.unwrap_or_else(|| bearing(start, goal));
    let ep = navigate(
        &scene,
        start,
        yaw,
        goal,
        planner.as_ref(),
        &camera,
        &cfg.eval.robot,
        &cfg.eval.nav,
    )?;
    write_episode(&ep, &dir.join("episode.jsonl"))?;
    write_json(&dir.join("summary.json"), &ep.summary)?;
    Ok(ep)
}

/// Converts a trajectory CSV or an episode JSONL into an SVG plot.
pub fn render_cmd(
    input: &Path,
    scene: Option<&Path>,
    plan_json: Option<&Path>,
    output: &Path,
) -> Result<()> {
    let mut track = read_track(input)?;
    if let Some(p) = plan_json {
        add_plan_markers(&mut track, p)?;
    }
    let scene = scene.map(load_scene).transpose()?;
    let title = input
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("track");
    let svg = render_svg(&track, scene.as_ref(), title);
    fs::write(output, svg).with_context(|| format!("writing {}", output.display()))?;
    Ok(())
}

fn add_plan_markers(track: &mut Track, path: &Path) -> Result<()> {
    #[derive(serde::Deserialize)]
    struct Markers {
        start: Point3,
        goal: Point3,
        keypoints: Vec<Point3>,
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let m: Markers =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    track.start = Some(m.start);
    track.goal = Some(m.goal);
    track.keypoints = m.keypoints;
    Ok(())
}

pub fn load_scene(path: &Path) -> Result<VoxelScene> {
    VoxelScene::load(path).with_context(|| format!("loading scene {}", path.display()))
}

fn check_inside(scene: &VoxelScene, p: Point3, what: &str) -> Result<()> {
    if scene.cell_of(p).is_none() {
        bail!(
            "{what} {p:?} lies outside the scene bounds {:?}",
            scene.bounds()
        );
    }
    if scene.is_occupied_at(p) {
        bail!("{what} {p:?} is inside an obstacle");
    }
    Ok(())
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
