//! Key-point prediction network: a two-branch depth encoder (plain and
//! Sobel-edge convolution stacks fused by a residual block) followed by a
//! goal-conditioned reweighting planner that emits `n` key points and a
//! collision probability.

use std::path::{Path, PathBuf};

use keynav_autodiff::{concat, ParamSet, Tape, Tensor, Var};
use keynav_simenv::{DepthImage, Point3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, CoreError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GkpnConfig {
    pub width: usize,
    pub height: usize,
    /// Perception channels `C`; each branch contributes `C/2`.
    pub channels: usize,
    /// Conv+pool stages per branch; the feature map is `H/2^p × W/2^p`.
    pub stages: usize,
    /// Goal-embedding channels `C1`.
    pub goal_channels: usize,
    /// Key points `n`.
    pub keypoints: usize,
    /// Channels of the planning conv `C2`.
    pub head_channels: usize,
    pub fear_hidden: usize,
    pub spn: bool,
    pub lapn: bool,
    /// Depth is divided by this before entering the network.
    pub max_range: f64,
    /// Goal coordinates are multiplied by this before embedding.
    pub goal_scale: f64,
    /// Init scale of the final key-point layer.
    pub output_scale: f64,
    /// Add the evenly spaced straight line to the goal to the key-point
    /// output, so the head learns deviations from the direct path.
    pub goal_skip: bool,
    /// With `goal_skip`, bound each key point's deviation from the direct
    /// line to `goal_tube · |goal|` per axis (smoothly, via tanh); 0 leaves
    /// deviations unbounded.
    pub goal_tube: f64,
}

impl Default for GkpnConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            channels: 16,
            stages: 3,
            goal_channels: 16,
            keypoints: 5,
            head_channels: 8,
            fear_hidden: 16,
            spn: true,
            lapn: true,
            max_range: 6.0,
            goal_scale: 0.2,
            output_scale: 0.1,
            goal_skip: true,
            goal_tube: 0.5,
        }
    }
}

impl GkpnConfig {
    pub fn feature_hw(&self) -> (usize, usize) {
        (self.height >> self.stages, self.width >> self.stages)
    }

    /// Feature-space size `M`.
    pub fn m(&self) -> usize {
        let (h, w) = self.feature_hw();
        h * w
    }

    pub fn validate(&self) -> Result<()> {
        let div = 1usize << self.stages;
        if self.stages == 0 || !self.width.is_multiple_of(div) || !self.height.is_multiple_of(div) {
            return Err(config(format!(
                "input {}x{} is not divisible by 2^{}",
                self.width, self.height, self.stages
            )));
        }
        if self.channels < 4 || !self.channels.is_multiple_of(4) {
            return Err(config(format!(
                "channels {} must be a positive multiple of 4",
                self.channels
            )));
        }
        if self.goal_channels <= 3 {
            return Err(config(format!(
                "goal channels {} must exceed 3",
                self.goal_channels
            )));
        }
        if self.keypoints < 2 {
            return Err(config(format!(
                "need at least 2 key points, got {}",
                self.keypoints
            )));
        }
        if self.m() < 4 {
            return Err(config(format!("feature space M = {} below 4", self.m())));
        }
        if self.head_channels == 0 || self.fear_hidden == 0 {
            return Err(config("head sizes must be positive"));
        }
        if !(self.goal_tube >= 0.0 && self.goal_tube.is_finite()) {
            return Err(config(format!(
                "goal_tube {} must be finite and non-negative",
                self.goal_tube
            )));
        }
        if !(self.max_range > 0.0 && self.goal_scale > 0.0 && self.output_scale > 0.0) {
            return Err(config("scales must be positive"));
        }
        Ok(())
    }

    fn stage_channels(&self) -> Vec<usize> {
        (0..self.stages)
            .map(|s| {
                if s == 0 && self.stages > 1 {
                    self.channels / 4
                } else {
                    self.channels / 2
                }
            })
            .collect()
    }
}

/// Network outputs for one planning step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GkpnOutput {
    /// Key points in the robot frame, meters.
    pub keypoints: Vec<Point3>,
    /// Predicted collision probability of the plan.
    pub fear: f64,
}

pub struct SpnVars<'t> {
    /// Perception embedding `[C, M]`.
    pub features: Var<'t>,
    /// Edge branch output before fusion, `[C/2, h, w]`.
    pub edge_branch: Var<'t>,
}

pub struct PlannerVars<'t> {
    /// `[n, 3]`
    pub keypoints: Var<'t>,
    /// `[1]`
    pub fear: Var<'t>,
    /// Softmax reweighting `[C1, M]`, absent without the attention.
    pub weight: Option<Var<'t>>,
}

#[derive(Clone, Debug)]
struct Head {
    goal: (usize, usize),
    head: (usize, usize),
    kp: (usize, usize),
    fear1: (usize, usize),
    fear2: (usize, usize),
}

#[derive(Clone, Debug)]
struct Layout {
    branch_a: Vec<usize>,
    branch_b: Option<Vec<usize>>,
    res: [usize; 4],
    weight: Option<(usize, usize)>,
    proj: (usize, usize),
    head: Head,
}

struct Init<'a> {
    params: &'a mut ParamSet,
    rng: ChaCha8Rng,
}

impl Init<'_> {
    /// Uniform fan-in init; `gain` √2 ahead of a ReLU.
    fn weight(&mut self, name: &str, shape: &[usize], fan_in: usize, gain: f64) -> usize {
        let bound = gain * (3.0 / fan_in as f64).sqrt();
        let t = Tensor::uniform(shape.to_vec(), bound, &mut self.rng);
        self.params.add(name, t)
    }

    fn bias(&mut self, name: &str, n: usize) -> usize {
        self.params.add(name, Tensor::zeros([n]))
    }

    fn pair(&mut self, name: &str, shape: &[usize], fan_in: usize, gain: f64) -> (usize, usize) {
        let w = self.weight(&format!("{name}.w"), shape, fan_in, gain);
        let b = self.bias(&format!("{name}.b"), shape[0]);
        (w, b)
    }
}

const RELU_GAIN: f64 = std::f64::consts::SQRT_2;

fn build_head(init: &mut Init<'_>, cfg: &GkpnConfig, prefix: &str) -> Head {
    let (c1, c2, m, n) = (cfg.goal_channels, cfg.head_channels, cfg.m(), cfg.keypoints);
    let goal = init.pair(&format!("{prefix}.goal"), &[c1 * m, 3], 3, 1.0);
    let head = init.pair(
        &format!("{prefix}.head"),
        &[c2, 2 * c1, 3, 3],
        2 * c1 * 9,
        RELU_GAIN,
    );
    let kp = init.pair(
        &format!("{prefix}.keypoints"),
        &[3 * n, c2 * m],
        c2 * m,
        cfg.output_scale,
    );
    let fear1 = init.pair(
        &format!("{prefix}.fear1"),
        &[cfg.fear_hidden, c2],
        c2,
        RELU_GAIN,
    );
    let fear2 = init.pair(
        &format!("{prefix}.fear2"),
        &[1, cfg.fear_hidden],
        cfg.fear_hidden,
        1.0,
    );
    Head {
        goal,
        head,
        kp,
        fear1,
        fear2,
    }
}

fn p<'t>(tape: &'t Tape, params: &ParamSet, idx: usize) -> Var<'t> {
    tape.param(params, idx)
}

fn pair<'t>(tape: &'t Tape, params: &ParamSet, (w, b): (usize, usize)) -> (Var<'t>, Var<'t>) {
    (tape.param(params, w), tape.param(params, b))
}

/// Goal embedding `[C1, h, w]` from a robot-frame goal `[3]`.
fn embed_goal<'t>(
    tape: &'t Tape,
    params: &ParamSet,
    head: &Head,
    cfg: &GkpnConfig,
    goal: Var<'t>,
) -> Result<Var<'t>> {
    let (fh, fw) = cfg.feature_hw();
    let (w, b) = pair(tape, params, head.goal);
    Ok(goal
        .scale(cfg.goal_scale)
        .linear(w, Some(b))?
        .reshape([cfg.goal_channels, fh, fw])?)
}

/// Planning conv, ReLU, key-point linear and fear head on `[2·C1, h, w]`.
fn plan_head<'t>(
    tape: &'t Tape,
    params: &ParamSet,
    head: &Head,
    cfg: &GkpnConfig,
    fused: Var<'t>,
    goal: Var<'t>,
) -> Result<(Var<'t>, Var<'t>)> {
    let (c2, m, n) = (cfg.head_channels, cfg.m(), cfg.keypoints);
    let (hw, hb) = pair(tape, params, head.head);
    let trunk = fused.conv2d(hw, Some(hb), 1, 1)?.relu();
    let (kw, kb) = pair(tape, params, head.kp);
    let mut keypoints = trunk
        .reshape([c2 * m])?
        .linear(kw, Some(kb))?
        .reshape([n, 3])?;
    if cfg.goal_skip {
        if cfg.goal_tube > 0.0 {
            let g = goal.value();
            let radius = cfg.goal_tube * g.data().iter().map(|v| v * v).sum::<f64>().sqrt();
            // tanh(x) = 2σ(2x) − 1, scaled so the slope at 0 stays 1
            keypoints = match radius > 0.0 {
                true => keypoints
                    .scale(2.0 / radius)
                    .sigmoid()
                    .scale(2.0 * radius)
                    .add_scalar(-radius),
                false => keypoints.scale(0.0),
            };
        }
        let frac = Tensor::new([n, 1], (1..=n).map(|j| j as f64 / n as f64).collect())?;
        let line = tape.constant(frac).matmul(goal.reshape([1, 3])?)?;
        keypoints = keypoints.add(line)?;
    }
    let (f1w, f1b) = pair(tape, params, head.fear1);
    let (f2w, f2b) = pair(tape, params, head.fear2);
    let fear = trunk
        .reshape([c2, m])?
        .mean(Some(1))?
        .linear(f1w, Some(f1b))?
        .relu()
        .linear(f2w, Some(f2b))?
        .sigmoid();
    Ok((keypoints, fear))
}

#[derive(Clone, Debug)]
pub struct Gkpn {
    pub config: GkpnConfig,
    pub params: ParamSet,
    layout: Layout,
}

impl Gkpn {
    pub fn new(config: GkpnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mut init = Init {
            params: &mut params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let chans = config.stage_channels();
        let stack = |init: &mut Init<'_>, name: &str, cin: usize| {
            let mut prev = cin;
            chans
                .iter()
                .enumerate()
                .map(|(s, &c)| {
                    let idx = init.weight(
                        &format!("spn.{name}.conv{s}.w"),
                        &[c, prev, 3, 3],
                        prev * 9,
                        RELU_GAIN,
                    );
                    prev = c;
                    idx
                })
                .collect::<Vec<_>>()
        };
        let branch_a = stack(&mut init, "depth", 1);
        let branch_b = config.spn.then(|| stack(&mut init, "sobel", 2));
        let c = config.channels;
        let (r1w, r1b) = init.pair("spn.res1", &[c, c, 3, 3], c * 9, RELU_GAIN);
        let (r2w, r2b) = init.pair("spn.res2", &[c, c, 3, 3], c * 9, 1.0);
        let c1 = config.goal_channels;
        let head = build_head(&mut init, &config, "lapn");
        let weight = config
            .lapn
            .then(|| init.pair("lapn.weight", &[c1, c1, 1, 1], c1, 1.0));
        let proj = init.pair("lapn.proj", &[c1, c, 1, 1], c, 1.0);
        let layout = Layout {
            branch_a,
            branch_b,
            res: [r1w, r1b, r2w, r2b],
            weight,
            proj,
            head,
        };
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    /// Normalized depth tensor `[1, H, W]`.
    pub fn depth_tensor(&self, img: &DepthImage) -> Result<Tensor> {
        if img.width != self.config.width || img.height != self.config.height {
            return Err(CoreError::Length {
                what: "depth image pixels",
                expected: self.config.width * self.config.height,
                got: img.width * img.height,
            });
        }
        let data = img.data.iter().map(|d| d / self.config.max_range).collect();
        Ok(Tensor::new([1, img.height, img.width], data)?)
    }

    fn stack<'t>(&self, tape: &'t Tape, mut x: Var<'t>, kernels: &[usize]) -> Result<Var<'t>> {
        for &k in kernels {
            x = x
                .conv2d(p(tape, &self.params, k), None, 1, 1)?
                .relu()
                .maxpool2d(2)?;
        }
        Ok(x)
    }

    /// Perception embedding from normalized depth `[1, H, W]`.
    pub fn spn_forward<'t>(&self, tape: &'t Tape, depth: Var<'t>) -> Result<SpnVars<'t>> {
        let cfg = &self.config;
        let expect = [1, cfg.height, cfg.width];
        if depth.shape() != expect {
            return Err(keynav_autodiff::AutodiffError::ShapeMismatch {
                op: "spn input",
                lhs: depth.shape(),
                rhs: expect.to_vec(),
            }
            .into());
        }
        let (fh, fw) = cfg.feature_hw();
        let plain = self.stack(tape, depth, &self.layout.branch_a)?;
        let edge_branch = match &self.layout.branch_b {
            Some(ks) => self.stack(tape, depth.sobel_conv2d()?, ks)?,
            None => tape.constant(Tensor::zeros([cfg.channels / 2, fh, fw])),
        };
        let x = concat(&[plain, edge_branch], 0)?;
        let [r1w, r1b, r2w, r2b] = self.layout.res.map(|i| p(tape, &self.params, i));
        let y = x
            .conv2d(r1w, Some(r1b), 1, 1)?
            .relu()
            .conv2d(r2w, Some(r2b), 1, 1)?;
        let features = x.add(y)?.relu().reshape([cfg.channels, cfg.m()])?;
        Ok(SpnVars {
            features,
            edge_branch,
        })
    }

    /// Key points and fear from features `[C, M]` and a robot-frame goal `[3]`.
    pub fn lapn_forward<'t>(
        &self,
        tape: &'t Tape,
        features: Var<'t>,
        goal: Var<'t>,
    ) -> Result<PlannerVars<'t>> {
        let cfg = &self.config;
        let (fh, fw) = cfg.feature_hw();
        let (c, c1, m) = (cfg.channels, cfg.goal_channels, cfg.m());
        if features.shape() != [c, m] || goal.shape() != [3] {
            return Err(keynav_autodiff::AutodiffError::ShapeMismatch {
                op: "lapn input",
                lhs: features.shape(),
                rhs: goal.shape(),
            }
            .into());
        }
        let head = &self.layout.head;
        let emb = embed_goal(tape, &self.params, head, cfg, goal)?;
        let (pw, pb) = pair(tape, &self.params, self.layout.proj);
        let proj = features.reshape([c, fh, fw])?.conv2d(pw, Some(pb), 1, 0)?;
        let (attended, weight) = match self.layout.weight {
            Some(wb) => {
                let (ww, wbias) = pair(tape, &self.params, wb);
                let weight = emb
                    .conv2d(ww, Some(wbias), 1, 0)?
                    .reshape([c1, m])?
                    .softmax(1)?;
                // M·softmax keeps a uniform reweighting the identity
                let gate = weight.scale(m as f64).reshape([c1, fh, fw])?;
                (proj.mul(gate)?, Some(weight))
            }
            None => (proj, None),
        };
        let fused = concat(&[attended, emb], 0)?;
        let (keypoints, fear) = plan_head(tape, &self.params, head, cfg, fused, goal)?;
        Ok(PlannerVars {
            keypoints,
            fear,
            weight,
        })
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        depth: Var<'t>,
        goal: Var<'t>,
    ) -> Result<PlannerVars<'t>> {
        let spn = self.spn_forward(tape, depth)?;
        self.lapn_forward(tape, spn.features, goal)
    }

    /// Inference on a rendered image with a robot-frame goal.
    pub fn infer(&self, depth: &DepthImage, goal: Point3) -> Result<GkpnOutput> {
        if goal.iter().any(|g| !g.is_finite()) {
            return Err(CoreError::NonFinite("goal".into()));
        }
        let tape = Tape::new();
        let d = tape.constant(self.depth_tensor(depth)?);
        let g = tape.constant(Tensor::vector(goal.to_vec()));
        let out = self.forward(&tape, d, g)?;
        Ok(GkpnOutput {
            keypoints: out.keypoints.value().points()?,
            fear: out.fear.item(),
        })
    }

    /// Parameters of the planning network alone (everything after perception).
    pub fn planner_param_count(&self) -> usize {
        self.params
            .iter()
            .filter(|(n, _)| n.starts_with("lapn."))
            .map(|(_, t)| t.numel())
            .sum()
    }

    /// Writes the weights to `path` and the config to `path` with a `.json` extension.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.params.save(path)?;
        std::fs::write(sidecar(path), serde_json::to_string_pretty(&self.config)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let config: GkpnConfig = serde_json::from_str(&std::fs::read_to_string(sidecar(path))?)?;
        let mut model = Gkpn::new(config, 0)?;
        let params = ParamSet::load(path)?;
        model.params.assign(&params)?;
        Ok(model)
    }
}

pub fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Conventional dot-product attention planner of the same dimensions, used
/// as the complexity reference: query from the goal embedding, keys and
/// values from the features, an explicit `M×M` score matrix.
#[derive(Clone, Debug)]
pub struct QuadraticAttention {
    pub config: GkpnConfig,
    pub params: ParamSet,
    head: Head,
    q: (usize, usize),
    k: (usize, usize),
    v: (usize, usize),
}

pub struct AttentionVars<'t> {
    pub keypoints: Var<'t>,
    pub fear: Var<'t>,
    /// FLOPs of the score, softmax and mixing steps alone.
    pub core_flops: u64,
}

impl QuadraticAttention {
    pub fn new(config: GkpnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mut init = Init {
            params: &mut params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let (c, c1) = (config.channels, config.goal_channels);
        let head = build_head(&mut init, &config, "attn");
        let q = init.pair("attn.q", &[c1, c1], c1, 1.0);
        let k = init.pair("attn.k", &[c1, c], c, 1.0);
        let v = init.pair("attn.v", &[c1, c], c, 1.0);
        Ok(Self {
            config,
            params,
            head,
            q,
            k,
            v,
        })
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        features: Var<'t>,
        goal: Var<'t>,
    ) -> Result<AttentionVars<'t>> {
        let cfg = &self.config;
        let (fh, fw) = cfg.feature_hw();
        let (c1, m) = (cfg.goal_channels, cfg.m());
        let emb = embed_goal(tape, &self.params, &self.head, cfg, goal)?;
        let (qw, qb) = pair(tape, &self.params, self.q);
        let (kw, kb) = pair(tape, &self.params, self.k);
        let (vw, vb) = pair(tape, &self.params, self.v);
        let tokens = features.transpose()?;
        let q = emb.reshape([c1, m])?.transpose()?.linear(qw, Some(qb))?;
        let k = tokens.linear(kw, Some(kb))?;
        let v = tokens.linear(vw, Some(vb))?;
        let before = tape.flops();
        let scores = q.matmul(k.transpose()?)?.scale(1.0 / (c1 as f64).sqrt());
        let mixed = scores.softmax(1)?.matmul(v)?;
        let core_flops = tape.flops() - before;
        let attended = mixed.transpose()?.reshape([c1, fh, fw])?;
        let fused = concat(&[attended, emb], 0)?;
        let (keypoints, fear) = plan_head(tape, &self.params, &self.head, cfg, fused, goal)?;
        Ok(AttentionVars {
            keypoints,
            fear,
            core_flops,
        })
    }
}

/// Parameter and FLOP counts of the reweighting planner against the
/// dot-product baseline at identical dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub m: usize,
    pub lapn_params: usize,
    pub baseline_params: usize,
    pub lapn_flops: u64,
    pub baseline_flops: u64,
    pub baseline_core_flops: u64,
    /// Largest single buffer, in elements.
    pub lapn_peak_numel: usize,
    pub baseline_peak_numel: usize,
}

pub fn compare_params(config: &GkpnConfig) -> Result<ComplexityReport> {
    let cfg = GkpnConfig {
        lapn: true,
        ..config.clone()
    };
    let model = Gkpn::new(cfg.clone(), 1)?;
    let base = QuadraticAttention::new(cfg.clone(), 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let feats = Tensor::uniform([cfg.channels, cfg.m()], 1.0, &mut rng);
    let goal = Tensor::vector(vec![3.0, -1.0, 0.3]);

    let tape = Tape::new();
    let f = tape.constant(feats.clone());
    let g = tape.constant(goal.clone());
    model.lapn_forward(&tape, f, g)?;
    let (lapn_flops, lapn_peak) = (tape.flops(), tape.peak_numel());

    let tape = Tape::new();
    let f = tape.constant(feats);
    let g = tape.constant(goal);
    let out = base.forward(&tape, f, g)?;
    Ok(ComplexityReport {
        m: cfg.m(),
        lapn_params: model.planner_param_count(),
        baseline_params: base.params.count(),
        lapn_flops,
        baseline_flops: tape.flops(),
        baseline_core_flops: out.core_flops,
        lapn_peak_numel: lapn_peak,
        baseline_peak_numel: tape.peak_numel(),
    })
}

/// Input size giving feature space `M = m` (a power of two ≥ 4) at the
/// configured stage count.
pub fn config_for_m(base: &GkpnConfig, m: usize) -> Result<GkpnConfig> {
    if !m.is_power_of_two() || m < 4 {
        return Err(config(format!("M = {m} must be a power of two ≥ 4")));
    }
    let bits = m.trailing_zeros() as usize;
    let (fh, fw) = (1usize << (bits / 2), 1usize << (bits - bits / 2));
    Ok(GkpnConfig {
        height: fh << base.stages,
        width: fw << base.stages,
        ..base.clone()
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}
