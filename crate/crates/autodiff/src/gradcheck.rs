//! Central finite-difference oracle for gradient checks.
//!
//! Only forward evaluations of the function under test are used, so the
//! check is independent of any backward rule.

/// Relative error with a floor on the denominator.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Clone, Debug, Default)]
pub struct FdReport {
    pub checked: usize,
    /// Elements where the one-sided differences disagree, i.e. a kink of a
    /// piecewise-linear op (ReLU, max, hinge) lies within `±h`.
    pub kinks: usize,
    /// Elements whose analytic and numeric values differ by less than the
    /// rounding error of the difference quotient itself (`~ε|f|/h`); these
    /// are gradients too small for the stencil to resolve.
    pub unresolved: usize,
    pub failures: usize,
    pub max_rel_err: f64,
    /// (index, analytic, numeric) of the worst smooth element.
    pub worst: Option<(usize, f64, f64)>,
}

impl FdReport {
    pub fn merge(&mut self, other: &FdReport) {
        self.checked += other.checked;
        self.kinks += other.kinks;
        self.unresolved += other.unresolved;
        self.failures += other.failures;
        if other.max_rel_err > self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Compares `analytic[i]` with the central difference of `f` at `x` for every
/// `i` in `indices`.
pub fn check_gradient<F>(
    mut f: F,
    x: &[f64],
    analytic: &[f64],
    indices: &[usize],
    h: f64,
    tol: f64,
    floor: f64,
) -> FdReport
where
    F: FnMut(&[f64]) -> f64,
{
    let mut report = FdReport::default();
    let mut probe = x.to_vec();
    let f0 = f(x);
    for &i in indices {
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        let numeric = (fp - fm) / (2.0 * h);
        let right = (fp - f0) / h;
        let left = (f0 - fm) / h;
        let a = analytic[i];
        let err = rel_err(a, numeric, floor);
        report.checked += 1;
        if err <= tol {
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((i, a, numeric));
            }
            continue;
        }
        let noise = 4.0 * f64::EPSILON * f0.abs().max(fp.abs()).max(fm.abs()) / h;
        if (a - numeric).abs() <= noise {
            report.unresolved += 1;
            continue;
        }
        // A kink inside the stencil shows up as a jump between the one-sided
        // slopes that is large relative to the slope itself; the analytic
        // value must then match one of the two sides.
        let jump = (right - left).abs();
        let scale = right.abs().max(left.abs()).max(floor);
        let matches_side = rel_err(a, right, floor) <= 1e-3 || rel_err(a, left, floor) <= 1e-3;
        if jump > 1e-2 * scale && matches_side {
            report.kinks += 1;
        } else {
            report.failures += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((i, a, numeric));
            }
        }
    }
    report
}
