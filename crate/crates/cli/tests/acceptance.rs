//! Acceptance suite: one pass/fail line per criterion, each at its stated
//! tolerance. Runs as a plain binary (`harness = false`).
//!
//! `KEYNAV_ACCEPTANCE=1,3,9` limits the run to the listed criteria.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use keynav_autodiff::{Adam, ParamSet, Tape, Tensor};
use keynav_core::gkpn::{compare_params, config_for_m, loglog_slope, Gkpn, GkpnConfig};
use keynav_core::gradcheck::{check_gradients, GradCheckOptions};
use keynav_core::loss::{
    energy_cost, fear_loss, goal_cost, total_loss, LossConfig, LossInputs, Pose,
};
use keynav_core::modes::{account_energy, Mode, RobotParams};
use keynav_core::navigator::{navigate, Episode, NavConfig, StepRecord};
use keynav_core::plan::FEAR_THRESHOLD;
use keynav_core::spline::{spline_interpolate, spline_points};
use keynav_core::trainer::{camera_for, evaluate, final_loss, train, EvalConfig, TrainConfig};
use keynav_simenv::{
    build_esdf, generate_scene, to_robot_frame, Point3, SceneParams, Template, VoxelScene,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// State shared between criteria: the desk-trained model and its episodes.
#[derive(Default)]
struct Shared {
    model: Option<Gkpn>,
    episodes: Vec<Episode>,
}

fn main() {
    let only: Option<Vec<String>> = std::env::var("KEYNAV_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').map(|s| s.trim().to_string()).collect());
    // "9" selects 9a, 9b and 9c
    let wanted = |id: &str| {
        only.as_ref().is_none_or(|o| {
            o.iter().any(|x| {
                id.strip_prefix(x.as_str())
                    .is_some_and(|rest| rest.chars().all(|c| c.is_ascii_alphabetic()))
            })
        })
    };
    let mut shared = Shared::default();
    type Check = fn(&mut Shared) -> Outcome;
    let criteria: [(&str, &str, Check); 13] = [
        ("1", "gradient integrity", gradient_integrity),
        ("2", "ESDF oracle equivalence", esdf_oracle),
        ("3", "spline contract", spline_contract),
        ("4", "conditional goal loss", conditional_goal_loss),
        ("5", "loss identities", loss_identities),
        ("6", "linear-complexity attention", linear_attention),
        ("7", "desk-scale training", desk_training),
        ("8", "ablation direction", ablation_direction),
        ("9a", "energy weight sweep", energy_sweep),
        ("9b", "air goal above start", air_goal),
        ("9c", "calibrated land energy", land_energy),
        ("10", "fear gate audit", fear_gate_audit),
        ("11", "end-to-end determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (id, name, check) in criteria {
        if !wanted(id) {
            continue;
        }
        let t0 = Instant::now();
        let r = check(&mut shared);
        let verdict = if r.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {id:>3} {verdict} {name}: {} [{:.1}s]",
            r.detail,
            t0.elapsed().as_secs_f64()
        );
        if !r.pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all selected criteria passed");
    } else {
        println!("acceptance: failed {failed:?}");
        std::process::exit(1);
    }
}

fn gradient_integrity(_: &mut Shared) -> Outcome {
    let t0 = Instant::now();
    let (model, train) = (GkpnConfig::default(), TrainConfig::default());
    let opts = GradCheckOptions::default();
    let (mut checked, mut kinks, mut worst, mut bad) = (0, 0, 0.0f64, Vec::new());
    for seed in 0..10 {
        match check_gradients(&model, &train, seed, &opts) {
            Ok(r) => {
                for f in [&r.params, &r.keypoints] {
                    checked += f.checked;
                    kinks += f.kinks;
                    worst = worst.max(f.max_rel_err);
                }
                if !r.passed() {
                    bad.push(seed);
                }
            }
            Err(e) => return outcome(false, format!("seed {seed}: {e}")),
        }
    }
    let elapsed = t0.elapsed();
    outcome(
        bad.is_empty() && elapsed < Duration::from_secs(300),
        format!(
            "{checked} elements over 10 seeds, max rel err {worst:.2e} (≤ 1e-4), {kinks} kink-straddling skipped, failing seeds {bad:?}, {:.0}s (< 300s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn esdf_oracle(_: &mut Shared) -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut voxels = 0;
    for s in 0..50 {
        let dims = [
            rng.gen_range(2..=24),
            rng.gen_range(2..=24),
            rng.gen_range(2..=24),
        ];
        let vs = rng.gen_range(0.05..0.3);
        let mut scene = VoxelScene::empty(
            dims,
            vs,
            [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), 0.0],
        )
        .unwrap();
        // one empty scene; the rest with random density
        let density = if s == 0 {
            0.0
        } else {
            rng.gen_range(0.001..0.15)
        };
        let mut occupied = Vec::new();
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    if rng.gen_bool(density) {
                        scene.set(i, j, k, true);
                        occupied.push(scene.center(i, j, k));
                    }
                }
            }
        }
        let d_max = rng.gen_range(0.5..4.0);
        let esdf = build_esdf(&scene, d_max);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let c = scene.center(i, j, k);
                    let exact = occupied
                        .iter()
                        .map(|o| keynav_simenv::dist2(*o, c))
                        .fold(f64::INFINITY, f64::min)
                        .sqrt()
                        .min(d_max);
                    worst = worst.max((esdf.at(i, j, k) - exact).abs());
                    voxels += 1;
                }
            }
        }
    }
    let elapsed = t0.elapsed();
    outcome(
        worst <= 1e-9 && elapsed < Duration::from_secs(120),
        format!("{voxels} voxels in 50 scenes, max |esdf − exhaustive| = {worst:.1e} (≤ 1e-9), {:.1}s (< 120s)", elapsed.as_secs_f64()),
    )
}

fn spline_contract(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut knot_err, mut line_err, mut bad_len) = (0.0f64, 0.0f64, 0);
    for _ in 0..200 {
        let n = rng.gen_range(1..=8);
        let m = rng.gen_range(1..=16);
        let start = [0.0, 0.0, rng.gen_range(0.0..2.0)];
        let kps: Vec<Point3> = (0..n)
            .map(|_| {
                [
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(0.0..3.0),
                ]
            })
            .collect();
        let pts = spline_points(&kps, m, start).unwrap();
        if pts.len() != m * n + 1 {
            bad_len += 1;
            continue;
        }
        knot_err = knot_err.max(max_abs(pts[0], start));
        for (j, k) in kps.iter().enumerate() {
            knot_err = knot_err.max(max_abs(pts[(j + 1) * m], *k));
        }
        // the differentiable path must agree with the plain one
        let tape = Tape::new();
        let kv = tape.constant(Tensor::from_points(&kps));
        let taped = spline_interpolate(&tape, kv, m, start)
            .unwrap()
            .value()
            .points()
            .unwrap();
        for (a, b) in taped.iter().zip(&pts) {
            knot_err = knot_err.max(max_abs(*a, *b));
        }

        let dir: [f64; 3] = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
        let d = [dir[0] / norm, dir[1] / norm, dir[2] / norm];
        let line: Vec<Point3> = (0..n)
            .map(|_| {
                let t = rng.gen_range(-4.0..4.0);
                [
                    start[0] + t * d[0],
                    start[1] + t * d[1],
                    start[2] + t * d[2],
                ]
            })
            .collect();
        for p in spline_points(&line, m, start).unwrap() {
            let v = [p[0] - start[0], p[1] - start[1], p[2] - start[2]];
            let cross = [
                v[1] * d[2] - v[2] * d[1],
                v[2] * d[0] - v[0] * d[2],
                v[0] * d[1] - v[1] * d[0],
            ];
            line_err = line_err.max(cross.iter().map(|c| c.abs()).fold(0.0, f64::max));
        }
    }
    outcome(
        bad_len == 0 && knot_err <= 1e-12 && line_err <= 1e-12,
        format!("200 cases: {bad_len} wrong lengths, knot err {knot_err:.1e}, off-line err {line_err:.1e} (≤ 1e-12)"),
    )
}

fn max_abs(a: Point3, b: Point3) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).abs()).fold(0.0, f64::max)
}

fn conditional_goal_loss(_: &mut Shared) -> Outcome {
    let h_r = 0.3;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut land_nonzero, mut air_zero, mut air_cases) = (0, 0, 0);
    for case in 0..100 {
        let n = rng.gen_range(1..=8);
        let kps: Vec<Point3> = (0..n)
            .map(|_| {
                [
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(0.0..3.0),
                ]
            })
            .collect();
        let land = case % 2 == 0;
        let gz = if land {
            rng.gen_range(0.0..h_r)
        } else {
            rng.gen_range(h_r..3.0)
        };
        let goal = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), gz];
        let tape = Tape::new();
        let k = tape.var(Tensor::from_points(&kps));
        let c = goal_cost(&tape, k, goal, h_r).unwrap();
        let g = tape.backward(c).unwrap().wrt_or_zero(k);
        if land {
            land_nonzero += (0..n).filter(|j| g[3 * j + 2] != 0.0).count();
        } else {
            air_cases += 1;
            let last = kps[n - 1];
            let dist = max_abs(last, goal);
            let norm: f64 = g[3 * (n - 1)..].iter().map(|v| v * v).sum();
            if dist > 0.0 && norm == 0.0 {
                air_zero += 1;
            }
        }
    }
    outcome(
        land_nonzero == 0 && air_zero == 0,
        format!("50 land goals: {land_nonzero} nonzero z-gradients (want 0); {air_cases} air goals: {air_zero} zero gradients (want 0)"),
    )
}

fn loss_identities(_: &mut Shared) -> Outcome {
    let h_r = 0.3;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut errors = Vec::new();
    for case in 0..100 {
        let n = rng.gen_range(2..=41);
        let level = case % 2 == 0;
        let traj: Vec<Point3> = (0..n)
            .map(|i| {
                let z = if level || i == 0 {
                    h_r
                } else {
                    h_r + rng.gen_range(-0.2..1.0)
                };
                [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), z]
            })
            .collect();
        let tape = Tape::new();
        let e = energy_cost(tape.constant(Tensor::from_points(&traj)), h_r)
            .unwrap()
            .item();
        if level && e.abs() > 1e-12 || !level && e <= 1e-12 {
            errors.push(format!("energy {e} level={level}"));
        }
    }
    for label in [false, true] {
        let tape = Tape::new();
        let b = fear_loss(tape.constant(Tensor::vector(vec![0.5])), label)
            .unwrap()
            .item();
        if (b - std::f64::consts::LN_2).abs() > 1e-6 {
            errors.push(format!("bce {b}"));
        }
    }
    for case in 0..100 {
        let land = case % 2 == 0;
        let gz = if land {
            rng.gen_range(0.0..h_r)
        } else {
            rng.gen_range(h_r..3.0)
        };
        let goal = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), gz];
        let meets = case % 4 < 2;
        let last = match (meets, land) {
            (true, true) => [goal[0], goal[1], rng.gen_range(0.0..3.0)],
            (true, false) => goal,
            (false, _) => [goal[0] + rng.gen_range(0.01..1.0), goal[1], goal[2]],
        };
        let tape = Tape::new();
        let c = goal_cost(
            &tape,
            tape.constant(Tensor::from_points(&[[1.0, 0.0, 0.3], last])),
            goal,
            h_r,
        )
        .unwrap()
        .item();
        if meets != (c == 0.0) {
            errors.push(format!("goal cost {c} meets={meets} land={land}"));
        }
    }
    outcome(
        errors.is_empty(),
        if errors.is_empty() {
            "C^E zero iff level (100 cases), BCE(0.5) = ln 2, C^G zero iff met (100 cases)"
                .to_string()
        } else {
            errors.join("; ")
        },
    )
}

fn linear_attention(_: &mut Shared) -> Outcome {
    let base = GkpnConfig::default();
    let ms = [64usize, 128, 256];
    let reports: Vec<_> = ms
        .iter()
        .map(|&m| compare_params(&config_for_m(&base, m).unwrap()).unwrap())
        .collect();
    let xs: Vec<f64> = ms.iter().map(|&m| m as f64).collect();
    let lapn = loglog_slope(
        &xs,
        &reports
            .iter()
            .map(|r| r.lapn_flops as f64)
            .collect::<Vec<_>>(),
    );
    let quad = loglog_slope(
        &xs,
        &reports
            .iter()
            .map(|r| r.baseline_core_flops as f64)
            .collect::<Vec<_>>(),
    );
    let fewer = reports.iter().all(|r| r.lapn_params < r.baseline_params);
    let params: Vec<String> = reports
        .iter()
        .map(|r| format!("{}<{}", r.lapn_params, r.baseline_params))
        .collect();
    outcome(
        (lapn - 1.0).abs() <= 0.05 && (quad - 2.0).abs() <= 0.1 && fewer,
        format!("LAPN slope {lapn:.3} (1 ± 0.05), dot-product attention slope {quad:.3} (2 ± 0.1), params {}", params.join(", ")),
    )
}

fn desk_training(shared: &mut Shared) -> Outcome {
    let t0 = Instant::now();
    let (model_cfg, train_cfg) = (GkpnConfig::default(), TrainConfig::default());
    let (model, log) = match train(&model_cfg, &train_cfg, None) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("training failed: {e}")),
    };
    let trained = t0.elapsed();
    let eval = EvalConfig::default();
    let (report, episodes) = match evaluate(&model, Some(&model), &camera_for(&model.config), &eval)
    {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("evaluation failed: {e}")),
    };
    let elapsed = t0.elapsed();
    shared.model = Some(model);
    shared.episodes = episodes;
    outcome(
        report.goal_reached_rate >= 0.80 && report.collision_rate <= 0.05 && elapsed <= Duration::from_secs(1800),
        format!(
            "{} steps on {} scenes (final loss {:.3}), {} held-out {} goals: reached {:.2} (≥ 0.80), collisions {:.2} (≤ 0.05), train {:.0}s + eval {:.0}s (≤ 1800s)",
            log.len(),
            train_cfg.scene_count,
            final_loss(&log, 50),
            report.trials,
            eval.goal_mode,
            report.goal_reached_rate,
            report.collision_rate,
            trained.as_secs_f64(),
            (elapsed - trained).as_secs_f64()
        ),
    )
}

/// Trains the model of criterion 7 if it has not run.
fn desk_model(shared: &mut Shared) -> Option<&Gkpn> {
    if shared.model.is_none() {
        let r = desk_training(shared);
        println!("  (trained the desk model on demand: {})", r.detail);
    }
    shared.model.as_ref()
}

fn ablation_direction(_: &mut Shared) -> Outcome {
    let mut full = Vec::new();
    let mut plain = Vec::new();
    for seed in 0..5 {
        for (spn, out) in [(true, &mut full), (false, &mut plain)] {
            let cfg = TrainConfig {
                seed,
                steps: 300,
                scene_count: 20,
                templates: vec![Template::WallGap, Template::RandomBoxes],
                spn,
                lapn: spn,
                ..TrainConfig::default()
            };
            match train(&cfg.model_config(&GkpnConfig::default()), &cfg, None) {
                Ok((_, log)) => out.push(final_loss(&log, 50)),
                Err(e) => return outcome(false, format!("seed {seed}: {e}")),
            }
        }
    }
    let (mf, mp) = (median(&full), median(&plain));
    outcome(
        mf <= mp,
        format!("median final loss over 5 seeds: SPN+LAPN {mf:.4} vs no-SPN-no-LAPN {mp:.4} (full {full:.3?}, ablated {plain:.3?})"),
    )
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[s.len() / 2]
}

const FINAL_LR: f64 = 2e-4;

/// Key points for a fixed scene and goal optimized directly under the
/// training objective, for each energy weight; reports mean |z − h_R|.
fn energy_sweep(_: &mut Shared) -> Outcome {
    let params = SceneParams {
        wall_x: Some(4.0),
        gap_center_y: Some(0.6),
        gap_width: 1.2,
        gap_height: 1.0,
        ..SceneParams::default()
    };
    let scene = generate_scene(9, Template::WallGap, &params).unwrap();
    let esdf = build_esdf(&scene, keynav_simenv::DEFAULT_D_MAX);
    let pose = Pose {
        x: 1.5,
        y: 0.0,
        yaw: 0.0,
    };
    let h_r = 0.3;
    let goal_world = [7.0, 0.6, h_r];
    let goal = to_robot_frame(goal_world, [pose.x, pose.y, h_r], pose.yaw);
    let start = [0.0, 0.0, h_r];
    let (n, m) = (5, 8);
    // a hopping initial guess: intermediate key points lifted off the ground
    let init: Vec<Point3> = (1..=n)
        .map(|j| {
            let f = j as f64 / n as f64;
            let lift = if j < n { 0.6 } else { 0.0 };
            [f * goal[0], f * goal[1], h_r + lift]
        })
        .collect();
    let mut lifts = Vec::new();
    for delta in [0.0, 0.5, 2.0] {
        let mut cfg = LossConfig::default();
        cfg.weights.delta = delta;
        let mut ps = ParamSet::new();
        ps.add("k", Tensor::from_points(&init));
        // decreasing step phases so the result settles to within FINAL_LR
        for (lr, iters) in [(0.02, 400), (0.002, 300), (FINAL_LR, 300)] {
            let mut adam = Adam::new(lr, 0.9, 0.999, 1e-8);
            for _ in 0..iters {
                let tape = Tape::new();
                let k = tape.param(&ps, 0);
                let traj = spline_interpolate(&tape, k, m, start).unwrap();
                let mu = tape.constant(Tensor::vector(vec![0.5]));
                let inputs = LossInputs {
                    scene: &scene,
                    esdf: &esdf,
                    pose,
                    goal,
                    label_override: Some(false),
                };
                let l = total_loss(&tape, k, traj, mu, &inputs, &cfg).unwrap();
                let grads = tape.backward(l.total).unwrap().param_grads(&ps);
                adam.step(&mut ps, &grads);
            }
        }
        let pts = spline_points(&ps.tensor(0).points().unwrap(), m, start).unwrap();
        let lift =
            pts[1..].iter().map(|p| (p[2] - h_r).abs()).sum::<f64>() / (pts.len() - 1) as f64;
        lifts.push(lift);
    }
    // |z − h_R| has its minimum on a kink, where the optimizer can only
    // settle to within its last step size; differences below that are ties
    let monotone = lifts.windows(2).all(|w| w[1] <= w[0] + FINAL_LR);
    outcome(
        monotone,
        format!(
            "mean |z − h_R| for δ = 0, 0.5, 2.0: {:.5}, {:.5}, {:.5} (non-increasing, ties within the final step {FINAL_LR:e})",
            lifts[0], lifts[1], lifts[2]
        ),
    )
}

fn air_goal(shared: &mut Shared) -> Outcome {
    let Some(model) = desk_model(shared) else {
        return outcome(false, "no trained model");
    };
    let scene = VoxelScene::empty([100, 40, 30], 0.1, [0.0, -2.0, 0.0]).unwrap();
    let start = [2.0, 0.0, 0.3];
    let goal = [2.0, 0.0, 1.5];
    let ep = match navigate(
        &scene,
        start,
        0.0,
        goal,
        model,
        &camera_for(&model.config),
        &RobotParams::default(),
        &NavConfig::default(),
    ) {
        Ok(e) => e,
        Err(e) => return outcome(false, format!("navigation failed: {e}")),
    };
    let air = ep.records.iter().filter(|r| r.mode == Mode::Air).count();
    let s = &ep.summary;
    shared.episodes.push(ep.clone());
    outcome(
        s.success && air > 0 && s.final_error < 0.5,
        format!(
            "goal at z = 1.5 m above the start: {:?} after {} steps, {air} AIR steps, final error {:.2} m (< 0.5)",
            s.outcome, s.steps, s.final_error
        ),
    )
}

fn land_energy(_: &mut Shared) -> Outcome {
    let robot = RobotParams::default();
    let segment: Vec<Point3> = (0..=86).map(|i| [i as f64 * 0.1, 0.0, robot.h_r]).collect();
    let e = account_energy(&[segment], &[Mode::Land], &robot);
    outcome(
        (e.time_s - 11.8).abs() <= 0.05
            && (e.energy_j - 1008.7).abs() <= 5.0
            && e.air_length_m == 0.0,
        format!(
            "8.6 m on land: {:.2} s (11.8 ± 0.05), {:.1} J (1008.7 ± 5)",
            e.time_s, e.energy_j
        ),
    )
}

/// Re-reads every episode from its JSON-lines log and counts control steps
/// that moved the robot along a plan whose fear was at least 0.5.
fn fear_gate_audit(shared: &mut Shared) -> Outcome {
    if desk_model(shared).is_none() {
        return outcome(false, "no trained model");
    }
    let dir = tempfile::tempdir().unwrap();
    let (mut steps, mut violations, mut rejected) = (0, 0, 0);
    for (i, ep) in shared.episodes.iter().enumerate() {
        let path = dir.path().join(format!("episode_{i}.jsonl"));
        ep.write_jsonl(fs::File::create(&path).unwrap()).unwrap();
        let (records, start) = read_log(&path);
        let mut prev = start;
        for r in records {
            steps += 1;
            let moved = max_abs(prev, r.position) > 0.0;
            if moved && r.executed_fear >= FEAR_THRESHOLD {
                violations += 1;
            }
            if r.fear >= FEAR_THRESHOLD {
                rejected += 1;
            }
            prev = r.position;
        }
    }
    outcome(
        violations == 0 && steps > 0,
        format!(
            "{} episodes, {steps} logged steps, {rejected} plans with μ ≥ 0.5 proposed, {violations} executed (want 0)",
            shared.episodes.len()
        ),
    )
}

fn read_log(path: &Path) -> (Vec<StepRecord>, Point3) {
    let text = fs::read_to_string(path).unwrap();
    let mut records = Vec::new();
    let mut start = [f64::NAN; 3];
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        if v.get("summary").is_some() {
            start = serde_json::from_value(v["start"].clone()).unwrap();
        } else {
            records.push(serde_json::from_value(v).unwrap());
        }
    }
    (records, start)
}

fn determinism(_: &mut Shared) -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(
        &cfg,
        "[train]\nseed = 21\nsteps = 40\nbatch = 4\nscene_count = 6\n[eval]\nseed = 22\ntrials = 4\nloss_samples = 4\n[eval.nav]\nstep_limit = 60\n",
    )
    .unwrap();
    let cli = |args: &[&str]| {
        let mut argv = vec!["keynav"];
        argv.extend_from_slice(args);
        keynav_cli::run(argv)
    };
    let mut files = Vec::new();
    for run in ["a", "b"] {
        let train_dir = tmp.path().join(format!("train-{run}"));
        let eval_dir = tmp.path().join(format!("eval-{run}"));
        let code = cli(&[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--run-dir",
            train_dir.to_str().unwrap(),
        ]);
        if code != 0 {
            return outcome(false, format!("train exited {code}"));
        }
        let weights = train_dir.join("model.bin");
        let code = cli(&[
            "eval",
            "--config",
            cfg.to_str().unwrap(),
            "--weights",
            weights.to_str().unwrap(),
            "--run-dir",
            eval_dir.to_str().unwrap(),
        ]);
        if code != 0 {
            return outcome(false, format!("eval exited {code}"));
        }
        let read = |p: &Path| fs::read(p).unwrap_or_default();
        files.push([
            read(&train_dir.join("train_log.csv")),
            read(&weights),
            read(&eval_dir.join("eval_report.json")),
            read(&eval_dir.join("episodes/episode_0000.jsonl")),
        ]);
    }
    let names = [
        "train_log.csv",
        "model.bin",
        "eval_report.json",
        "episode log",
    ];
    let differing: Vec<&str> = names
        .iter()
        .zip(files[0].iter().zip(files[1].iter()))
        .filter(|(_, (a, b))| a != b || a.is_empty())
        .map(|(n, _)| *n)
        .collect();
    outcome(
        differing.is_empty(),
        format!("two train+eval runs with seed 21/22: differing or missing files {differing:?}"),
    )
}
