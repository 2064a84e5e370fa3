use super::Matrix;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// A learnable tensor with its accumulated gradient and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
    pub adam_m: Matrix,
    pub adam_v: Matrix,
    pub step: u64,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        let (r, c) = value.shape();
        ParamTensor {
            name: name.into(),
            value,
            grad: Matrix::zeros(r, c),
            adam_m: Matrix::zeros(r, c),
            adam_v: Matrix::zeros(r, c),
            step: 0,
        }
    }

    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        ParamTensor::new(name, Matrix::zeros(rows, cols))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// One bias-corrected Adam update. The gradient is cleared afterwards.
    pub fn adam_step(&mut self, lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {lr} must be positive")));
        }
        if let Some(i) = self.grad.as_slice().iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of {} at entry {i}",
                self.name
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        let value = self.value.as_mut_slice();
        let grad = self.grad.as_mut_slice();
        let m = self.adam_m.as_mut_slice();
        let v = self.adam_v.as_mut_slice();
        for i in 0..value.len() {
            let g = grad[i];
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            value[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            grad[i] = 0.0;
        }
        Ok(())
    }
}

/// Anything exposing an ordered list of learnable tensors.
pub trait ParamSet {
    fn params(&self) -> Vec<&ParamTensor>;
    fn params_mut(&mut self) -> Vec<&mut ParamTensor>;

    fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_scalars(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

impl ParamSet for Vec<ParamTensor> {
    fn params(&self) -> Vec<&ParamTensor> {
        self.iter().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.iter_mut().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(value: f64, grad: f64) -> ParamTensor {
        let mut p = ParamTensor::new("w", Matrix::filled(1, 1, value));
        p.grad[(0, 0)] = grad;
        p
    }

    #[test]
    fn zero_gradient_leaves_value() {
        let mut p = scalar(1.25, 0.0);
        p.adam_step(1e-3).unwrap();
        assert_eq!(p.value[(0, 0)], 1.25);
        assert_eq!(p.step, 1);
    }

    #[test]
    fn first_step_closed_form() {
        for g in [-3.0, -1e-3, 0.5, 42.0] {
            let mut p = scalar(0.0, g);
            p.adam_step(1e-2).unwrap();
            let expect = -1e-2 * g / (g.abs() + ADAM_EPS);
            assert!((p.value[(0, 0)] - expect).abs() < 1e-15, "g={g}");
            assert_eq!(p.grad[(0, 0)], 0.0);
        }
    }

    #[test]
    fn constant_gradient_steps_never_grow() {
        // With a constant gradient the bias-corrected moments are exactly
        // g and g^2 at every step, so the step size stays at lr*|g|/(|g|+eps).
        let mut p = scalar(0.0, 0.7);
        p.adam_step(1e-3).unwrap();
        let d1 = p.value[(0, 0)].abs();
        p.grad[(0, 0)] = 0.7;
        let before = p.value[(0, 0)];
        p.adam_step(1e-3).unwrap();
        let d2 = (p.value[(0, 0)] - before).abs();
        assert!(d2 <= d1 * (1.0 + 1e-12), "{d2} > {d1}");
        assert!((d2 - 1e-3 * 0.7 / (0.7 + ADAM_EPS)).abs() < 1e-15);
        assert!(p.adam_v.as_slice().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn non_finite_gradient_names_tensor() {
        let mut p = scalar(0.0, f64::NAN);
        p.name = "head.w3".into();
        let err = p.adam_step(1e-3).unwrap_err();
        assert!(err.to_string().contains("head.w3"));
    }

    proptest::proptest! {
        #[test]
        fn finite_inputs_stay_finite(
            value in -1e100f64..1e100,
            grads in proptest::collection::vec(-1e100f64..1e100, 1..6),
            lr in 1e-6f64..1.0,
        ) {
            let mut p = scalar(value, 0.0);
            for g in grads {
                p.grad[(0, 0)] = g;
                p.adam_step(lr).unwrap();
                proptest::prop_assert!(p.value.is_finite() && p.adam_v.is_finite());
                proptest::prop_assert!(p.adam_v[(0, 0)] >= 0.0);
            }
        }
    }
}
