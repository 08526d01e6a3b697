use crate::params::ParamSet;

/// Adam with bias correction and optional global-norm gradient clipping.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            clip_norm: None,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn with_clip(mut self, clip: Option<f64>) -> Self {
        self.clip_norm = clip;
        self
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Vec<f64>]) {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        let scale = match self.clip_norm {
            Some(c) => {
                let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
                if norm > c {
                    c / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, g) in grads.iter().enumerate() {
            let p = params.tensor_mut(i).data_mut();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..g.len() {
                let gj = g[j] * scale;
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                p[j] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    #[test]
    fn minimizes_quadratic() {
        let mut p = ParamSet::new();
        p.add("x", Tensor::vector(vec![3.0, -2.0]));
        let mut opt = Adam::new(0.1, 0.9, 0.999, 1e-8);
        for _ in 0..500 {
            let g: Vec<f64> = p.tensor(0).data().iter().map(|x| 2.0 * x).collect();
            opt.step(&mut p, &[g]);
        }
        assert!(p.tensor(0).data().iter().all(|x| x.abs() < 1e-2));
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = ParamSet::new();
        p.add("x", Tensor::vector(vec![1.0]));
        let mut opt = Adam::new(0.01, 0.9, 0.999, 1e-12);
        opt.step(&mut p, &[vec![123.0]]);
        assert!((p.tensor(0).data()[0] - 0.99).abs() < 1e-9);
    }
}
