//! Central finite-difference checks for analytic gradients.

use super::Tensor;

/// Magnitude below which gradients are compared absolutely rather than relatively.
pub const MAGNITUDE_FLOOR: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, MAGNITUDE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR)
}

#[derive(Clone, Debug, Default)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(label, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheck {
    pub fn merge(&mut self, other: GradCheck) {
        self.checked += other.checked;
        if other.max_rel_error >= self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            if other.worst.is_some() {
                self.worst = other.worst;
            }
        }
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tol
    }
}

/// Compares `analytic` with central differences of `f` around `point` at the
/// given flat `indices`.
pub fn check_coordinates(
    label: &str,
    point: &Tensor<f64>,
    analytic: &Tensor<f64>,
    indices: impl IntoIterator<Item = usize>,
    eps: f64,
    mut f: impl FnMut(&Tensor<f64>) -> f64,
) -> GradCheck {
    let mut report = GradCheck::default();
    let mut probe = point.clone();
    for i in indices {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic.data()[i];
        let err = relative_error(a, numeric);
        report.checked += 1;
        if err >= report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((label.to_string(), i, a, numeric));
        }
    }
    report
}

/// Evenly spread sample of at most `max` flat indices out of `len`.
pub fn spread_indices(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        return (0..len).collect();
    }
    (0..max).map(|i| i * len / max + (i * 7919) % (len / max).max(1)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let x = Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let grad = x.map(|v| 2.0 * v);
        let r = check_coordinates("x", &x, &grad, 0..3, 1e-6, |t| t.data().iter().map(|v| v * v).sum());
        assert!(r.passes(1e-8), "{r:?}");
    }

    #[test]
    fn detects_wrong_gradient() {
        let x = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let wrong = Tensor::from_vec(&[2], vec![1.0, 1.0]).unwrap();
        let r = check_coordinates("x", &x, &wrong, 0..2, 1e-6, |t| t.data().iter().map(|v| v * v).sum());
        assert!(!r.passes(1e-4));
    }

    #[test]
    fn spread_stays_in_range() {
        let idx = spread_indices(1000, 37);
        assert_eq!(idx.len(), 37);
        assert!(idx.iter().all(|&i| i < 1000));
        assert_eq!(spread_indices(5, 10), vec![0, 1, 2, 3, 4]);
    }
}
