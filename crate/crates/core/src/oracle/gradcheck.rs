use std::fmt;

use super::OracleError;

/// Relative step: `h = step · max(1, |θ|)`.
pub const DEFAULT_STEP: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Central differences `(f(θ+h) − f(θ−h)) / 2h`, one coordinate at a time.
pub fn finite_difference_grad(
    mut f: impl FnMut(&[f64]) -> f64,
    theta: &[f64],
    step: f64,
) -> Result<Vec<f64>, OracleError> {
    let mut x = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let h = step * theta[i].abs().max(1.0);
        x[i] = theta[i] + h;
        let up = f(&x);
        x[i] = theta[i] - h;
        let down = f(&x);
        x[i] = theta[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(OracleError::NonFinite(i));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Central differences refined by Richardson extrapolation over `levels`
/// successive halvings of `h = step · max(1, |θ|)`. Each level removes the
/// next even power of `h` from the truncation error, so a larger base step can
/// be used and rounding noise stays small relative to tiny derivatives.
pub fn richardson_difference_grad(
    mut f: impl FnMut(&[f64]) -> f64,
    theta: &[f64],
    step: f64,
    levels: usize,
) -> Result<Vec<f64>, OracleError> {
    let levels = levels.max(1);
    let mut x = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    let mut table = vec![0.0; levels];
    for i in 0..theta.len() {
        let base = step * theta[i].abs().max(1.0);
        for (k, slot) in table.iter_mut().enumerate() {
            let h = base / f64::from(1u32 << k);
            x[i] = theta[i] + h;
            let up = f(&x);
            x[i] = theta[i] - h;
            let down = f(&x);
            if !up.is_finite() || !down.is_finite() {
                return Err(OracleError::NonFinite(i));
            }
            *slot = (up - down) / (2.0 * h);
        }
        x[i] = theta[i];
        let mut width = levels;
        let mut factor = 4.0;
        while width > 1 {
            for k in 0..width - 1 {
                table[k] = (factor * table[k + 1] - table[k]) / (factor - 1.0);
            }
            width -= 1;
            factor *= 4.0;
        }
        grad.push(table[0]);
    }
    Ok(grad)
}

/// Ridders' adaptive extrapolation of central differences. Starting from
/// `h = step · max(1, |θ|)`, the step shrinks by 1.4 per level and a Neville
/// tableau extrapolates towards `h → 0`; the estimate with the smallest
/// internal error estimate wins, and the scan stops once rounding noise
/// starts to dominate. Returns the derivatives and their error estimates.
pub fn ridders_difference_grad(
    mut f: impl FnMut(&[f64]) -> f64,
    theta: &[f64],
    step: f64,
) -> Result<(Vec<f64>, Vec<f64>), OracleError> {
    const SHRINK: f64 = 1.4;
    const LEVELS: usize = 10;
    const SAFE: f64 = 2.0;
    let shrink2 = SHRINK * SHRINK;
    let mut x = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    let mut errors = Vec::with_capacity(theta.len());
    let mut a = [[0.0f64; LEVELS]; LEVELS];
    for i in 0..theta.len() {
        let mut central = |h: f64| -> Result<f64, OracleError> {
            x[i] = theta[i] + h;
            let up = f(&x);
            x[i] = theta[i] - h;
            let down = f(&x);
            x[i] = theta[i];
            if !up.is_finite() || !down.is_finite() {
                return Err(OracleError::NonFinite(i));
            }
            Ok((up - down) / (2.0 * h))
        };
        let mut h = step * theta[i].abs().max(1.0);
        a[0][0] = central(h)?;
        let mut best = a[0][0];
        let mut err = f64::INFINITY;
        for col in 1..LEVELS {
            h /= SHRINK;
            a[0][col] = central(h)?;
            let mut fac = shrink2;
            for row in 1..=col {
                a[row][col] = (a[row - 1][col] * fac - a[row - 1][col - 1]) / (fac - 1.0);
                fac *= shrink2;
                let e = (a[row][col] - a[row - 1][col]).abs().max((a[row][col] - a[row - 1][col - 1]).abs());
                if e <= err {
                    err = e;
                    best = a[row][col];
                }
            }
            if (a[col][col] - a[col - 1][col - 1]).abs() >= SAFE * err {
                break;
            }
        }
        grad.push(best);
        errors.push(err);
    }
    Ok((grad, errors))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub coordinates: usize,
    pub max_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailingCoordinate {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub entries: Vec<GradCheckEntry>,
    pub failures: Vec<FailingCoordinate>,
}

impl GradCheckReport {
    /// Compares flat analytic and numeric gradients split into named blocks.
    pub fn compare(
        blocks: &[(String, usize)],
        analytic: &[f64],
        numeric: &[f64],
        step: f64,
        tolerance: f64,
    ) -> Self {
        assert_eq!(analytic.len(), numeric.len());
        assert_eq!(blocks.iter().map(|b| b.1).sum::<usize>(), analytic.len());
        let mut entries = Vec::with_capacity(blocks.len());
        let mut failures = Vec::new();
        let mut offset = 0;
        for (name, n) in blocks {
            let mut worst: f64 = 0.0;
            for k in 0..*n {
                let (a, num) = (analytic[offset + k], numeric[offset + k]);
                let err = relative_error(a, num);
                worst = worst.max(err);
                if !(err < tolerance) {
                    failures.push(FailingCoordinate {
                        name: name.clone(),
                        index: k,
                        analytic: a,
                        numeric: num,
                        relative_error: err,
                    });
                }
            }
            entries.push(GradCheckEntry { name: name.clone(), coordinates: *n, max_relative_error: worst });
            offset += n;
        }
        Self { step, tolerance, entries, failures }
    }

    /// Runs the finite differences and the comparison in one go.
    pub fn run(
        blocks: &[(String, usize)],
        analytic: &[f64],
        loss: impl FnMut(&[f64]) -> f64,
        theta: &[f64],
        step: f64,
        tolerance: f64,
    ) -> Result<Self, OracleError> {
        let numeric = finite_difference_grad(loss, theta, step)?;
        Ok(Self::compare(blocks, analytic, &numeric, step, tolerance))
    }

    pub fn max_relative_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_relative_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "step {:.1e}  tolerance {:.1e}  max rel err {:.3e}  {}",
            self.step,
            self.tolerance,
            self.max_relative_error(),
            if self.passed() { "PASS" } else { "FAIL" }
        )?;
        for e in &self.entries {
            writeln!(f, "  {:<32} {:>6} coords  max rel err {:.3e}", e.name, e.coordinates, e.max_relative_error)?;
        }
        for c in self.failures.iter().take(20) {
            writeln!(
                f,
                "  failing {}[{}]: analytic {:.6e} numeric {:.6e} rel err {:.3e}",
                c.name, c.index, c.analytic, c.numeric, c.relative_error
            )?;
        }
        if self.failures.len() > 20 {
            writeln!(f, "  ... {} more failing coordinates", self.failures.len() - 20)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let g = finite_difference_grad(|x| x[0] * x[0], &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let g = finite_difference_grad(|_| 4.2, &[1.0, -2.0, 0.0], DEFAULT_STEP).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_finite_is_reported() {
        let r = finite_difference_grad(|x| if x[1] > 0.5 { f64::NAN } else { 0.0 }, &[0.0, 0.5], 1e-5);
        assert_eq!(r, Err(OracleError::NonFinite(1)));
    }

    #[test]
    fn report_flags_sign_error() {
        let theta = [0.3, -0.7];
        let wrong = [2.0 * theta[0], -2.0 * theta[1]];
        let r = GradCheckReport::run(
            &[("x".into(), 2)],
            &wrong,
            |x| x[0] * x[0] + x[1] * x[1],
            &theta,
            DEFAULT_STEP,
            1e-6,
        )
        .unwrap();
        assert!(!r.passed());
        assert_eq!(r.failures.len(), 1);
        assert_eq!(r.failures[0].index, 1);
        assert!(r.to_string().contains("FAIL"));
    }

    #[test]
    fn richardson_beats_plain_differences() {
        let f = |x: &[f64]| x[0].sin() * x[0].exp();
        let exact = 1f64.cos() * 1f64.exp() + 1f64.sin() * 1f64.exp();
        let plain = finite_difference_grad(f, &[1.0], 1e-2).unwrap()[0];
        let refined = richardson_difference_grad(f, &[1.0], 1e-2, 3).unwrap()[0];
        assert!((plain - exact).abs() > 1e-5);
        assert!((refined - exact).abs() < 1e-11);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(1.0, 2.0) - 0.5).abs() < 1e-15);
    }
}
