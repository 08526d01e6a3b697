//! Natural cubic spline densification of key-point paths.
//!
//! With uniform knots the spline is linear in the knot values, so the
//! `(mn+1)×(n+1)` sampling matrix is precomputed and applied with one
//! matmul on the tape; `∂τ/∂K` is then exact.

use std::io::Write;

use keynav_autodiff::{concat, Tape, Tensor, Var};
use keynav_simenv::Point3;

use crate::error::{CoreError, Result};
use crate::modes::Mode;

/// Sampling matrix mapping `n + 1` knot values to `mn + 1` trajectory values.
pub fn spline_basis(n: usize, m: usize) -> Tensor {
    let knots = n + 1;
    let rows = m * n + 1;
    let mut basis = vec![0.0; rows * knots];
    for k in 0..knots {
        let mut y = vec![0.0; knots];
        y[k] = 1.0;
        let second = natural_second_derivatives(&y);
        basis[k] = y[0];
        for seg in 0..n {
            for i in 1..=m {
                let s = i as f64 / m as f64;
                let r = 1.0 - s;
                let v = r * y[seg]
                    + s * y[seg + 1]
                    + ((r * r * r - r) * second[seg] + (s * s * s - s) * second[seg + 1]) / 6.0;
                basis[(seg * m + i) * knots + k] = v;
            }
        }
    }
    Tensor::new([rows, knots], basis).expect("basis shape")
}

/// Second derivatives at unit-spaced knots with zero end curvature
/// (tridiagonal solve).
fn natural_second_derivatives(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut out = vec![0.0; n];
    if n < 3 {
        return out;
    }
    let inner = n - 2;
    // rows: M[i-1] + 4 M[i] + M[i+1] = 6 (y[i-1] - 2 y[i] + y[i+1])
    let mut diag = vec![4.0; inner];
    let mut rhs: Vec<f64> = (1..n - 1)
        .map(|i| 6.0 * (y[i - 1] - 2.0 * y[i] + y[i + 1]))
        .collect();
    for i in 1..inner {
        let w = 1.0 / diag[i - 1];
        diag[i] -= w;
        rhs[i] -= w * rhs[i - 1];
    }
    let mut x = vec![0.0; inner];
    x[inner - 1] = rhs[inner - 1] / diag[inner - 1];
    for i in (0..inner - 1).rev() {
        x[i] = (rhs[i] - x[i + 1]) / diag[i];
    }
    out[1..n - 1].copy_from_slice(&x);
    out
}

fn check_finite(k: &[f64], start: Point3) -> Result<()> {
    if k.iter().chain(&start).any(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite("spline knots".into()));
    }
    Ok(())
}

/// Trajectory `[mn+1, 3]` through `start` and the key points `[n, 3]`, recorded on the tape.
pub fn spline_interpolate<'t>(
    tape: &'t Tape,
    keypoints: Var<'t>,
    m: usize,
    start: Point3,
) -> Result<Var<'t>> {
    let shape = keypoints.shape();
    if shape.len() != 2 || shape[1] != 3 || shape[0] == 0 {
        return Err(CoreError::Length {
            what: "key point columns",
            expected: 3,
            got: shape.get(1).copied().unwrap_or(0),
        });
    }
    if m == 0 {
        return Err(crate::error::config("m must be at least 1"));
    }
    check_finite(keypoints.value().data(), start)?;
    let n = shape[0];
    let s = tape.constant(Tensor::from_points(&[start]));
    let knots = concat(&[s, keypoints], 0)?;
    Ok(tape.constant(spline_basis(n, m)).matmul(knots)?)
}

/// Plain-value version of [`spline_interpolate`].
pub fn spline_points(keypoints: &[Point3], m: usize, start: Point3) -> Result<Vec<Point3>> {
    let tape = Tape::new();
    let k = tape.constant(Tensor::from_points(keypoints));
    Ok(spline_interpolate(&tape, k, m, start)?.value().points()?)
}

/// Splits `τ` into one segment per key-point gap; consecutive segments share
/// their endpoints.
pub fn segment_trajectory(points: &[Point3], keypoints: &[Point3]) -> Result<Vec<Vec<Point3>>> {
    let n = keypoints.len();
    if n == 0 || points.len() < 2 || !(points.len() - 1).is_multiple_of(n) {
        return Err(crate::error::config(format!(
            "{} trajectory points do not split into {n} segments",
            points.len()
        )));
    }
    let m = (points.len() - 1) / n;
    Ok((0..n)
        .map(|j| points[j * m..=(j + 1) * m].to_vec())
        .collect())
}

/// Writes `index,x,y,z,segment,mode` rows; the shared start point belongs to
/// segment 0 and every later point to the segment it closes or lies in.
pub fn write_trajectory_csv(
    mut w: impl Write,
    points: &[Point3],
    m: usize,
    modes: Option<&[Mode]>,
) -> Result<()> {
    writeln!(w, "index,x,y,z,segment,mode")?;
    for (i, p) in points.iter().enumerate() {
        let seg = if i == 0 { 0 } else { (i - 1) / m.max(1) };
        let mode = modes.and_then(|ms| ms.get(seg)).map_or("", |m| m.as_str());
        writeln!(w, "{i},{:.6},{:.6},{:.6},{seg},{mode}", p[0], p[1], p[2])?;
    }
    Ok(())
}
