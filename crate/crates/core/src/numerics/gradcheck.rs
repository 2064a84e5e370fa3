//! Central finite-difference verification of analytic gradients.

use serde::Serialize;

use super::ParamSet;

/// Relative error between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Step used for entry `theta`.
pub fn step_size(theta: f64) -> f64 {
    1e-5 * (1.0 + theta.abs())
}

#[derive(Debug, Clone, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub entries_checked: usize,
    pub max_rel_error: f64,
    pub worst_entry: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// Which entries of each tensor are perturbed.
#[derive(Debug, Clone, Copy)]
pub enum EntrySelection {
    All,
    /// At most this many entries, evenly strided across the tensor.
    AtMost(usize),
}

impl EntrySelection {
    fn indices(self, len: usize) -> Vec<usize> {
        match self {
            EntrySelection::AtMost(k) if k < len => {
                // Offset by half a stride so the first and last entries of
                // wide tensors are not the only ones sampled.
                (0..k).map(|i| (2 * i + 1) * len / (2 * k)).collect()
            }
            _ => (0..len).collect(),
        }
    }
}

/// Compares the gradients currently stored in `model`'s tensors against
/// central differences of `loss`.
///
/// `loss` must be a deterministic function of the parameter values. Every
/// perturbed entry is restored before returning.
pub fn finite_diff_check<M, F>(model: &mut M, mut loss: F, selection: EntrySelection) -> GradCheckReport
where
    M: ParamSet,
    F: FnMut(&M) -> f64,
{
    let n_tensors = model.params().len();
    let mut tensors = Vec::with_capacity(n_tensors);
    for t in 0..n_tensors {
        let (name, len) = {
            let p = &model.params()[t];
            (p.name.clone(), p.len())
        };
        let mut check = TensorCheck {
            name,
            entries_checked: 0,
            max_rel_error: 0.0,
            worst_entry: 0,
        };
        for i in selection.indices(len) {
            let (theta, analytic) = {
                let p = &model.params()[t];
                (p.value.as_slice()[i], p.grad.as_slice()[i])
            };
            let h = step_size(theta);
            model.params_mut()[t].value.as_mut_slice()[i] = theta + h;
            let up = loss(model);
            model.params_mut()[t].value.as_mut_slice()[i] = theta - h;
            let down = loss(model);
            model.params_mut()[t].value.as_mut_slice()[i] = theta;
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(analytic, numeric);
            if err > check.max_rel_error || err.is_nan() {
                check.max_rel_error = err;
                check.worst_entry = i;
            }
            check.entries_checked += 1;
        }
        tensors.push(check);
    }
    let max_rel_error = tensors
        .iter()
        .map(|t| t.max_rel_error)
        .fold(0.0, f64::max);
    GradCheckReport {
        tensors,
        max_rel_error,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Matrix, ParamTensor};

    #[test]
    fn square_at_three() {
        let mut p = vec![ParamTensor::new("theta", Matrix::filled(1, 1, 3.0))];
        p[0].grad[(0, 0)] = 6.0;
        let report = finite_diff_check(&mut p, |m| m[0].value[(0, 0)].powi(2), EntrySelection::All);
        assert!(report.max_rel_error < 1e-8, "{report:?}");
        assert_eq!(p[0].value[(0, 0)], 3.0);
    }

    #[test]
    fn constant_function() {
        let mut p = vec![ParamTensor::new("theta", Matrix::filled(2, 2, -1.5))];
        let report = finite_diff_check(&mut p, |_| 7.0, EntrySelection::All);
        assert_eq!(report.max_rel_error, 0.0);
        assert_eq!(report.tensors[0].entries_checked, 4);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let mut p = vec![ParamTensor::new("theta", Matrix::filled(1, 1, 2.0))];
        p[0].grad[(0, 0)] = 3.0;
        let report = finite_diff_check(&mut p, |m| m[0].value[(0, 0)].powi(2), EntrySelection::All);
        assert!(report.max_rel_error > 0.1);
        assert_eq!(report.worst().unwrap().name, "theta");
    }

    #[test]
    fn strided_selection() {
        assert_eq!(EntrySelection::AtMost(4).indices(8), vec![1, 3, 5, 7]);
        assert_eq!(EntrySelection::AtMost(10).indices(3), vec![0, 1, 2]);
    }
}
