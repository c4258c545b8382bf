//! Central finite-difference verification of analytic gradients.

pub mod suite;

/// Settings for [`check_gradient`].
#[derive(Clone, Copy, Debug)]
pub struct FiniteDiff {
    /// Perturbation applied to each coordinate.
    pub step: f64,
    /// Magnitudes below this are compared absolutely instead of relatively.
    pub floor: f64,
    /// Largest relative gap between the one-sided slopes still treated as
    /// smooth. Wider gaps mark a kink and the coordinate is skipped.
    pub kink_tol: f64,
}

impl Default for FiniteDiff {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-5,
            kink_tol: 1e-4,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    /// Coordinates where the left and right one-sided slopes disagree, i.e. a
    /// ReLU kink lies within one step. These cannot be checked by differences.
    pub kinks: usize,
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    /// Analytic and numeric derivative at `worst_index`.
    pub worst_values: (f64, f64),
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error <= tol
    }
}

pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares `analytic[i]` with `(f(x + h e_i) - f(x - h e_i)) / 2h` for every
/// `i` in `indices`. `x` is restored before returning.
pub fn check_gradient(
    x: &mut [f64],
    analytic: &[f64],
    indices: impl IntoIterator<Item = usize>,
    settings: FiniteDiff,
    mut f: impl FnMut(&[f64]) -> f64,
) -> GradReport {
    let h = settings.step;
    let mut report = GradReport::default();
    let centre = f(x);
    for i in indices {
        let orig = x[i];
        x[i] = orig + h;
        let plus = f(x);
        x[i] = orig - h;
        let minus = f(x);
        x[i] = orig;

        let right = (plus - centre) / h;
        let left = (centre - minus) / h;
        // One-sided slopes differ by O(h * f'') on smooth functions.
        if relative_error(right, left, settings.floor) > settings.kink_tol {
            report.kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * h);
        let err = relative_error(analytic[i], numeric, settings.floor);
        report.checked += 1;
        if report.worst_index.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = Some(i);
            report.worst_values = (analytic[i], numeric);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_passes() {
        let mut x = vec![1.0, -2.0, 0.5];
        let analytic: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let r = check_gradient(&mut x, &analytic, 0..3, FiniteDiff::default(), |v| {
            v.iter().map(|a| a * a).sum()
        });
        assert_eq!(r.checked, 3);
        assert!(r.passes(1e-8), "{r:?}");
        assert_eq!(x, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn wrong_gradient_fails() {
        let mut x = vec![1.0];
        let r = check_gradient(&mut x, &[3.0], 0..1, FiniteDiff::default(), |v| v[0] * v[0]);
        assert!(!r.passes(1e-4));
        assert_eq!(r.worst_index, Some(0));
    }

    #[test]
    fn kink_is_reported_not_checked() {
        let mut x = vec![0.0];
        let r = check_gradient(&mut x, &[0.0], 0..1, FiniteDiff::default(), |v| v[0].max(0.0));
        assert_eq!((r.checked, r.kinks), (0, 1));
    }
}
