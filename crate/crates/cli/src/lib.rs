//! The `keynav` command line. Flags are merged over an optional TOML config
//! (flags win), the effective config is echoed into a fresh run directory,
//! and the subcommand writes all of its outputs there.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure
//! (a diagnostic file is written and its path printed).

pub mod commands;
pub mod config;
pub mod render;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use keynav_simenv::{GoalMode, Point3, Template};

use crate::commands::PlannerChoice;
use crate::config::{create_run_dir, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "keynav",
    version,
    about = "Learned key-point planning for a land-air robot"
)]
pub struct Cli {
    /// TOML run configuration; any flag given on the command line wins over it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Write outputs to this directory instead of a new timestamped one.
    #[arg(long, global = true, value_name = "DIR")]
    pub run_dir: Option<PathBuf>,
    /// Parent of timestamped run directories (config: output.root).
    #[arg(long, global = true, value_name = "DIR")]
    pub output_root: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate procedural voxel scenes (scene_<i>.json + manifest.json).
    GenScenes(GenScenesArgs),
    /// Train the key-point network (train_log.csv, checkpoints, model.bin).
    Train(TrainArgs),
    /// Navigate held-out scenes and write eval_report.json.
    Eval(EvalArgs),
    /// Plan once from a pose (plan.json, trajectory.csv).
    Plan(PlanArgs),
    /// Run one closed-loop episode (episode.jsonl, summary.json).
    Navigate(NavigateArgs),
    /// Plot a trajectory CSV or episode JSONL as SVG.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
pub struct GenScenesArgs {
    /// Scene template: corridor, room-cluster, wall-gap or random-boxes.
    #[arg(long, value_parser = parse_template)]
    pub template: Template,
    /// Number of scenes.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Base seed; scene i uses a seed derived from (seed, i).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run seed: weight init, training scenes and samples (config: train.seed).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Optimizer steps (config: train.steps).
    #[arg(long)]
    pub steps: Option<usize>,
    /// Samples per step (config: train.batch).
    #[arg(long)]
    pub batch: Option<usize>,
    /// Adam learning rate (config: train.lr).
    #[arg(long)]
    pub lr: Option<f64>,
    /// Obstacle-cost weight (config: train.loss.weights.alpha).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Motion-cost weight (config: train.loss.weights.beta).
    #[arg(long)]
    pub beta: Option<f64>,
    /// Goal-cost weight (config: train.loss.weights.gamma).
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Energy-cost weight (config: train.loss.weights.delta).
    #[arg(long)]
    pub delta: Option<f64>,
    /// Drop the Sobel edge branch of the depth encoder.
    #[arg(long)]
    pub no_spn: bool,
    /// Replace the goal-reweighting planner with quadratic attention.
    #[arg(long)]
    pub no_lapn: bool,
    /// Save a checkpoint every N steps (config: train.checkpoint_every).
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Train on a pre-rendered dataset file (config: train.dataset).
    #[arg(long, value_name = "FILE")]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[group(id = "planner", required = true, multiple = false, args = ["weights", "straight"])]
pub struct PlannerArgs {
    /// Trained model weights (model.bin).
    #[arg(long, value_name = "FILE")]
    pub weights: Option<PathBuf>,
    /// Use the straight-line reference planner instead of a network.
    #[arg(long)]
    pub straight: bool,
}

impl PlannerArgs {
    fn choice(&self) -> PlannerChoice {
        match &self.weights {
            Some(w) => PlannerChoice::Weights(w.clone()),
            None => PlannerChoice::Straight,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub planner: PlannerArgs,
    /// Held-out episodes (config: eval.trials).
    #[arg(long)]
    pub trials: Option<usize>,
    /// Held-out scene seed (config: eval.seed).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (config: eval.jobs).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Goal heights: land, air or mixed (config: eval.goal_mode).
    #[arg(long, value_parser = parse_goal_mode)]
    pub goal_mode: Option<GoalMode>,
    /// Control steps per episode (config: eval.nav.step_limit).
    #[arg(long)]
    pub step_limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Scene file written by gen-scenes.
    #[arg(long, value_name = "FILE")]
    pub scene: PathBuf,
    /// Goal position "x,y,z" in world meters.
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    pub goal: Point3,
    /// Model weights (model.bin).
    #[arg(long, value_name = "FILE")]
    pub weights: PathBuf,
    /// Start position "x,y,z"; defaults to 0.5 m inside the near end at body height.
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    pub start: Option<Point3>,
    /// Heading in radians; defaults to the bearing of the goal.
    #[arg(long, allow_hyphen_values = true)]
    pub yaw: Option<f64>,
}

#[derive(Debug, Args)]
pub struct NavigateArgs {
    /// Scene file written by gen-scenes.
    #[arg(long, value_name = "FILE")]
    pub scene: PathBuf,
    /// Goal position "x,y,z" in world meters.
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    pub goal: Point3,
    #[command(flatten)]
    pub planner: PlannerArgs,
    /// Start position "x,y,z"; defaults to 0.5 m inside the near end at body height.
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    pub start: Option<Point3>,
    /// Initial heading in radians; defaults to the bearing of the goal.
    #[arg(long, allow_hyphen_values = true)]
    pub yaw: Option<f64>,
    /// Control steps (config: eval.nav.step_limit).
    #[arg(long)]
    pub step_limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// trajectory.csv from plan, or an episode .jsonl from navigate/eval.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Scene file to draw underneath.
    #[arg(long, value_name = "FILE")]
    pub scene: Option<PathBuf>,
    /// plan.json whose start, goal and key points are marked.
    #[arg(long, value_name = "FILE")]
    pub plan: Option<PathBuf>,
    /// Output SVG; defaults to the input path with an .svg extension.
    #[arg(long, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

fn parse_template(s: &str) -> Result<Template, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_goal_mode(s: &str) -> Result<GoalMode, String> {
    s.parse().map_err(|e| format!("{e}"))
}

/// `"x,y,z"` → point.
pub fn parse_point(s: &str) -> Result<Point3, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected x,y,z but got '{s}'"));
    }
    let mut p = [0.0f64; 3];
    for (v, part) in p.iter_mut().zip(parts) {
        *v = part
            .parse()
            .map_err(|_| format!("'{part}' is not a number"))?;
        if !v.is_finite() {
            return Err(format!("'{part}' is not finite"));
        }
    }
    Ok(p)
}

/// Failure classes that map to distinct exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0:#}")]
    Usage(anyhow::Error),
    #[error("{error:#}")]
    Runtime {
        error: anyhow::Error,
        run_dir: Option<PathBuf>,
    },
}

impl Cli {
    /// The config file (or defaults) with this command line's flags applied.
    pub fn effective_config(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(root) = &self.output_root {
            cfg.output.root = root.clone();
        }
        match &self.command {
            Command::GenScenes(_) | Command::Render(_) | Command::Plan(_) => {}
            Command::Train(a) => {
                let t = &mut cfg.train;
                set(&mut t.seed, a.seed);
                set(&mut t.steps, a.steps);
                set(&mut t.batch, a.batch);
                set(&mut t.lr, a.lr);
                set(&mut t.checkpoint_every, a.checkpoint_every);
                let w = &mut t.loss.weights;
                set(&mut w.alpha, a.alpha);
                set(&mut w.beta, a.beta);
                set(&mut w.gamma, a.gamma);
                set(&mut w.delta, a.delta);
                if a.no_spn {
                    t.spn = false;
                }
                if a.no_lapn {
                    t.lapn = false;
                }
                if a.dataset.is_some() {
                    t.dataset = a.dataset.clone();
                }
            }
            Command::Eval(a) => {
                let e = &mut cfg.eval;
                set(&mut e.trials, a.trials);
                set(&mut e.seed, a.seed);
                set(&mut e.jobs, a.jobs);
                set(&mut e.goal_mode, a.goal_mode);
                set(&mut e.nav.step_limit, a.step_limit);
            }
            Command::Navigate(a) => set(&mut cfg.eval.nav.step_limit, a.step_limit),
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn run_seed(&self, cfg: &RunConfig) -> u64 {
        match &self.command {
            Command::GenScenes(a) => a.seed,
            Command::Train(_) => cfg.train.seed,
            _ => cfg.eval.seed,
        }
    }

    /// Executes the command; returns a one-line result for stdout.
    pub fn execute(&self) -> Result<String, CliError> {
        let cfg = self.effective_config().map_err(CliError::Usage)?;
        if let Command::Render(a) = &self.command {
            let output = a
                .output
                .clone()
                .unwrap_or_else(|| a.input.with_extension("svg"));
            return commands::render_cmd(&a.input, a.scene.as_deref(), a.plan.as_deref(), &output)
                .map(|_| format!("wrote {}", output.display()))
                .map_err(|error| CliError::Runtime {
                    error,
                    run_dir: None,
                });
        }
        let name = match &self.command {
            Command::GenScenes(_) => "gen-scenes",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Plan(_) => "plan",
            Command::Navigate(_) => "navigate",
            Command::Render(_) => unreachable!(),
        };
        let dir = create_run_dir(
            &cfg.output.root,
            name,
            self.run_seed(&cfg),
            self.run_dir.as_deref(),
        )
        .map_err(|error| CliError::Runtime {
            error,
            run_dir: None,
        })?;
        let wrap = |error: anyhow::Error| CliError::Runtime {
            error,
            run_dir: Some(dir.clone()),
        };
        cfg.echo(&dir).map_err(wrap)?;
        self.dispatch(&cfg, &dir).map_err(wrap)
    }

    fn dispatch(&self, cfg: &RunConfig, dir: &Path) -> anyhow::Result<String> {
        let d = dir.display();
        Ok(match &self.command {
            Command::GenScenes(a) => {
                let entries = commands::gen_scenes(cfg, a.template, a.count, a.seed, a.jobs, dir)?;
                format!("wrote {} scenes to {d}", entries.len())
            }
            Command::Train(_) => {
                let s = commands::train_cmd(cfg, dir)?;
                match s.final_loss {
                    Some(l) => format!(
                        "trained {} steps, final loss {l:.4}; weights in {}",
                        s.steps,
                        s.weights.display()
                    ),
                    None => format!("wrote untrained weights to {}", s.weights.display()),
                }
            }
            Command::Eval(a) => {
                let r = commands::eval_cmd(cfg, &a.planner.choice(), dir)?;
                format!(
                    "goal reached {:.3}, collisions {:.3} over {} trials; report in {d}/eval_report.json",
                    r.goal_reached_rate, r.collision_rate, r.trials
                )
            }
            Command::Plan(a) => {
                let p = commands::plan_cmd(cfg, &a.scene, &a.weights, a.start, a.yaw, a.goal, dir)?;
                format!(
                    "planned {} points, fear {:.3}; outputs in {d}",
                    p.plan.trajectory.len(),
                    p.plan.fear
                )
            }
            Command::Navigate(a) => {
                let ep = commands::navigate_cmd(
                    cfg,
                    &a.scene,
                    &a.planner.choice(),
                    a.start,
                    a.yaw,
                    a.goal,
                    dir,
                )?;
                format!(
                    "{:?} after {} steps; outputs in {d}",
                    ep.summary.outcome, ep.summary.steps
                )
            }
            Command::Render(_) => unreachable!(),
        })
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Writes the failure next to the run's outputs (or in the temp directory
/// when there is no run directory) and returns the file's path.
fn write_diagnostic(
    error: &anyhow::Error,
    run_dir: Option<&Path>,
    argv: &[OsString],
) -> Option<PathBuf> {
    let dir = run_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(std::env::temp_dir);
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
    let path = match run_dir {
        Some(_) => dir.join("error.txt"),
        None => dir.join(format!("keynav-error-{stamp}.txt")),
    };
    let args: Vec<String> = argv
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    let mut text = format!(
        "command: {}\ntime: {stamp}\n\nerror: {error:#}\n",
        args.join(" ")
    );
    for (i, cause) in error.chain().enumerate().skip(1) {
        text.push_str(&format!("  cause {i}: {cause}\n"));
    }
    std::fs::write(&path, text).ok().map(|_| path)
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match cli.execute() {
        Ok(msg) => {
            println!("{msg}");
            EXIT_OK
        }
        Err(CliError::Usage(e)) => {
            eprintln!("error: {e:#}");
            EXIT_USAGE
        }
        Err(CliError::Runtime { error, run_dir }) => {
            eprintln!("error: {error:#}");
            match write_diagnostic(&error, run_dir.as_deref(), &argv) {
                Some(p) => eprintln!("diagnostic written to {}", p.display()),
                None => eprintln!("could not write a diagnostic file"),
            }
            EXIT_RUNTIME
        }
    }
}
