//! End-to-end gradient audit: the full training loss of one sample
//! differentiated by the tape versus central differences, both with respect
//! to the network weights and to the predicted key points.

use keynav_autodiff::gradcheck::{check_gradient, FdReport};
use keynav_autodiff::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gkpn::{Gkpn, GkpnConfig};
use crate::loss::{total_loss, LossInputs};
use crate::spline::spline_interpolate;
use crate::trainer::{
    camera_for, draw_sample, training_scene_seed, Sample, SampleSpec, SceneEntry, TrainConfig,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckOptions {
    pub h: f64,
    pub tol: f64,
    pub floor: f64,
    /// Weight elements probed per parameter tensor (all of them if larger).
    pub per_tensor: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            tol: 1e-4,
            floor: 1e-8,
            per_tensor: 6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub seed: u64,
    pub collision_label: bool,
    pub params: FdReport,
    pub keypoints: FdReport,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.passed() && self.keypoints.passed()
    }
}

struct Problem {
    entry: SceneEntry,
    sample: Sample,
    m: usize,
    train: TrainConfig,
}

impl Problem {
    /// Loss with the collision label frozen, so a perturbation cannot flip
    /// the (piecewise-constant) fear target.
    fn loss(&self, model: &Gkpn, label: bool) -> Result<f64> {
        let tape = Tape::new();
        let depth = tape.constant(model.depth_tensor(&self.sample.depth)?);
        let goal = tape.constant(Tensor::vector(self.sample.goal.to_vec()));
        let out = model.forward(&tape, depth, goal)?;
        let traj = spline_interpolate(&tape, out.keypoints, self.m, [0.0, 0.0, self.sample.z])?;
        let vars = total_loss(
            &tape,
            out.keypoints,
            traj,
            out.fear,
            &self.inputs(Some(label)),
            &self.train.loss,
        )?;
        Ok(vars.total.item())
    }

    fn loss_of_keypoints(&self, k: &Tensor, fear: f64, label: bool) -> Result<f64> {
        let tape = Tape::new();
        let kv = tape.var(k.clone());
        let mu = tape.constant(Tensor::vector(vec![fear]));
        let traj = spline_interpolate(&tape, kv, self.m, [0.0, 0.0, self.sample.z])?;
        let vars = total_loss(
            &tape,
            kv,
            traj,
            mu,
            &self.inputs(Some(label)),
            &self.train.loss,
        )?;
        Ok(vars.total.item())
    }

    fn inputs(&self, label: Option<bool>) -> LossInputs<'_> {
        LossInputs {
            scene: &self.entry.scene,
            esdf: &self.entry.esdf,
            pose: self.sample.pose,
            goal: self.sample.goal,
            label_override: label,
        }
    }
}

/// Checks one randomly drawn model/scene/sample triple derived from `seed`.
pub fn check_gradients(
    model_cfg: &GkpnConfig,
    train: &TrainConfig,
    seed: u64,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    train.validate()?;
    let model = Gkpn::new(model_cfg.clone(), seed)?;
    let template = train.templates[seed as usize % train.templates.len()];
    let entry = SceneEntry::generate(
        template,
        training_scene_seed(seed, 0),
        &train.scene,
        keynav_simenv::DEFAULT_D_MAX,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6EAD);
    let scenes = [entry];
    let sample = draw_sample(
        &scenes,
        0,
        &mut rng,
        &SampleSpec::from_train(train),
        &camera_for(model_cfg),
    )?;
    let [entry] = scenes;
    let problem = Problem {
        entry,
        sample,
        m: train.m,
        train: train.clone(),
    };

    let tape = Tape::new();
    let depth = tape.constant(model.depth_tensor(&problem.sample.depth)?);
    let goal = tape.constant(Tensor::vector(problem.sample.goal.to_vec()));
    let out = model.forward(&tape, depth, goal)?;
    let traj = spline_interpolate(
        &tape,
        out.keypoints,
        problem.m,
        [0.0, 0.0, problem.sample.z],
    )?;
    let vars = total_loss(
        &tape,
        out.keypoints,
        traj,
        out.fear,
        &problem.inputs(None),
        &problem.train.loss,
    )?;
    let label = vars.collision_label;
    let grads = tape.backward(vars.total)?;
    let param_grads = grads.param_grads(&model.params);
    let k_grad = grads.wrt_or_zero(out.keypoints);
    let k_value = out.keypoints.value();
    let fear = out.fear.item();

    let mut params = FdReport::default();
    let mut probe = model.clone();
    for (t, analytic) in param_grads.iter().enumerate() {
        let base = model.params.tensor(t).data().to_vec();
        let n = base.len();
        let idx: Vec<usize> = if n <= opts.per_tensor {
            (0..n).collect()
        } else {
            (0..opts.per_tensor).map(|_| rng.gen_range(0..n)).collect()
        };
        let mut err = None;
        let report = check_gradient(
            |x| {
                probe.params.tensor_mut(t).data_mut().copy_from_slice(x);
                problem.loss(&probe, label).unwrap_or_else(|e| {
                    err.get_or_insert(e);
                    f64::NAN
                })
            },
            &base,
            analytic,
            &idx,
            opts.h,
            opts.tol,
            opts.floor,
        );
        probe.params.tensor_mut(t).data_mut().copy_from_slice(&base);
        if let Some(e) = err {
            return Err(e);
        }
        params.merge(&report);
    }

    let mut err = None;
    let idx: Vec<usize> = (0..k_value.numel()).collect();
    let shape = k_value.shape().to_vec();
    let keypoints = check_gradient(
        |x| {
            let k = Tensor::new(shape.clone(), x.to_vec()).expect("shape matches data");
            problem
                .loss_of_keypoints(&k, fear, label)
                .unwrap_or_else(|e| {
                    err.get_or_insert(e);
                    f64::NAN
                })
        },
        k_value.data(),
        &k_grad,
        &idx,
        opts.h,
        opts.tol,
        opts.floor,
    );
    if let Some(e) = err {
        return Err(e);
    }
    Ok(GradCheckReport {
        seed,
        collision_label: label,
        params,
        keypoints,
    })
}
