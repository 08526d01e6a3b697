//! Second-stage local smoothing: gradient descent on the interior points of
//! a segment against an ESDF clearance penalty and a curvature penalty.

use keynav_simenv::{Esdf, Point3};
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub w_c: f64,
    pub w_s: f64,
    pub iterations: usize,
    pub step: f64,
    pub d_safe: f64,
    /// Stop once the gradient norm falls below this.
    pub tol: f64,
    /// Per-iteration cap on how far any point moves, meters.
    pub max_move: f64,
    /// Consecutive cost increases treated as divergence.
    pub patience: usize,
    /// Never lower a point below this height (the ground).
    pub min_z: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            w_c: 10.0,
            w_s: 1.0,
            iterations: 50,
            step: 0.05,
            d_safe: 0.5,
            tol: 1e-9,
            max_move: 0.1,
            patience: 10,
            min_z: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Refined {
    pub points: Vec<Point3>,
    pub collision_before: f64,
    pub collision_after: f64,
    pub iterations: usize,
    /// The descent diverged and the input was returned.
    pub diverged: bool,
    /// The result was discarded because it raised the collision cost.
    pub rejected: bool,
}

fn collision_term(
    points: &[Point3],
    esdf: &Esdf,
    cfg: &RefineConfig,
    grad: Option<&mut [Point3]>,
) -> Result<f64> {
    let mut total = 0.0;
    let mut grad = grad;
    for (i, &p) in points.iter().enumerate() {
        let s = esdf.sample(p)?;
        let h = cfg.d_safe - s.distance;
        if h > 0.0 {
            total += cfg.w_c * h * h;
            if let Some(g) = grad.as_deref_mut() {
                for (ga, sa) in g[i].iter_mut().zip(s.gradient) {
                    *ga -= 2.0 * cfg.w_c * h * sa;
                }
            }
        }
    }
    Ok(total)
}

fn smooth_term(points: &[Point3], cfg: &RefineConfig, grad: Option<&mut [Point3]>) -> f64 {
    let mut total = 0.0;
    let mut grad = grad;
    for i in 1..points.len().saturating_sub(1) {
        for a in 0..3 {
            let d = points[i + 1][a] - 2.0 * points[i][a] + points[i - 1][a];
            total += cfg.w_s * d * d;
            if let Some(g) = grad.as_deref_mut() {
                let c = 2.0 * cfg.w_s * d;
                g[i - 1][a] += c;
                g[i][a] -= 2.0 * c;
                g[i + 1][a] += c;
            }
        }
    }
    total
}

fn cost(points: &[Point3], esdf: &Esdf, cfg: &RefineConfig) -> Result<f64> {
    Ok(collision_term(points, esdf, cfg, None)? + smooth_term(points, cfg, None))
}

/// Refines `segment` with both endpoints pinned. The collision term of the
/// result never exceeds that of the input.
pub fn refine_segment(segment: &[Point3], esdf: &Esdf, cfg: &RefineConfig) -> Result<Refined> {
    let collision_before = collision_term(segment, esdf, cfg, None)?;
    let unchanged = |diverged: bool, rejected: bool, iterations: usize| Refined {
        points: segment.to_vec(),
        collision_before,
        collision_after: collision_before,
        iterations,
        diverged,
        rejected,
    };
    if segment.len() < 3 {
        return Ok(unchanged(false, false, 0));
    }
    let mut pts = segment.to_vec();
    let mut prev = cost(&pts, esdf, cfg)?;
    let mut rising = 0;
    let mut iterations = 0;
    let last = pts.len() - 1;
    for _ in 0..cfg.iterations {
        let mut grad = vec![[0.0; 3]; pts.len()];
        collision_term(&pts, esdf, cfg, Some(&mut grad))?;
        smooth_term(&pts, cfg, Some(&mut grad));
        let norm = grad[1..last]
            .iter()
            .flatten()
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        if norm < cfg.tol {
            break;
        }
        iterations += 1;
        for (p, g) in pts[1..last].iter_mut().zip(&grad[1..last]) {
            let mut d = g.map(|v| -cfg.step * v);
            let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            if len > cfg.max_move {
                d = d.map(|v| v * cfg.max_move / len);
            }
            for a in 0..3 {
                p[a] += d[a];
            }
            p[2] = p[2].max(cfg.min_z);
        }
        let c = cost(&pts, esdf, cfg)?;
        rising = if c > prev { rising + 1 } else { 0 };
        prev = c;
        if rising >= cfg.patience {
            return Ok(unchanged(true, false, iterations));
        }
    }
    let collision_after = collision_term(&pts, esdf, cfg, None)?;
    if collision_after > collision_before {
        return Ok(unchanged(false, true, iterations));
    }
    Ok(Refined {
        points: pts,
        collision_before,
        collision_after,
        iterations,
        diverged: false,
        rejected: false,
    })
}
