//! Central finite differences for checking analytic gradients.

/// Relative error with a floor on the denominator so that two tiny
/// gradients which agree to round-off are not reported as mismatches.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// `(f(+h) − f(−h)) / 2h`, where `f(δ)` evaluates the loss with one
/// parameter shifted by `δ`.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, step: f64) -> f64 {
    (f(step) - f(-step)) / (2.0 * step)
}

#[derive(Clone, Debug, Default)]
pub struct CheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    /// (label, analytic, numeric) for entries above tolerance.
    pub failures: Vec<(String, f64, f64)>,
}

impl CheckReport {
    pub fn record(
        &mut self,
        label: impl Into<String>,
        analytic: f64,
        numeric: f64,
        tolerance: f64,
    ) {
        let err = relative_error(analytic, numeric);
        self.checked += 1;
        if err > self.max_relative_error {
            self.max_relative_error = err;
        }
        if err > tolerance {
            self.failures.push((label.into(), analytic, numeric));
        }
    }

    pub fn merge(&mut self, other: CheckReport) {
        self.checked += other.checked;
        self.max_relative_error = self.max_relative_error.max(other.max_relative_error);
        self.failures.extend(other.failures);
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}
