use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

/// Adam optimizer state for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Zero-initialized state with the usual β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self::with_betas(len, learning_rate, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(len: usize, learning_rate: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            step_count: 0,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            learning_rate,
            beta1,
            beta2,
            eps,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && self.beta1 > 0.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.eps > 0.0
            && self.eps < 1e-2;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "adam hyperparameters out of range: lr {}, betas ({}, {}), eps {}",
                self.learning_rate, self.beta1, self.beta2, self.eps
            )))
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut Tensor, grads: &[f64], state: &mut AdamState) -> Result<()> {
    adam_step_slice(params.data_mut(), grads, state)
}

pub fn adam_step_slice(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    state.validate()?;
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(shape_err(
            "adam_step",
            format!(
                "params {}, grads {}, state {}",
                params.len(),
                grads.len(),
                state.first_moment.len()
            ),
        ));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite { op: "adam_step" });
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - libm::pow(state.beta1, t as f64);
    let bc2 = 1.0 - libm::pow(state.beta2, t as f64);
    for ((p, &g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut().zip(state.second_moment.iter_mut()))
    {
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= state.learning_rate * m_hat / (libm::sqrt(v_hat) + state.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::new([3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(3, 0.005);
        adam_step(&mut p, &[0.0; 3], &mut st).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // t = 1: m̂ = g, v̂ = g², Δ = −lr·g/(|g| + ε).
        let mut p = Tensor::new([1], vec![0.0]).unwrap();
        let mut st = AdamState::new(1, 0.005);
        adam_step(&mut p, &[1.0], &mut st).unwrap();
        let expected = -0.005 / (1.0 + 1e-8);
        assert!((p.item() - expected).abs() < 1e-15);
    }

    #[test]
    fn minimizes_a_parabola() {
        let run = |lr: f64| {
            let mut x = Tensor::new([1], vec![3.0]).unwrap();
            let mut st = AdamState::new(1, lr);
            for _ in 0..1000 {
                let g = 2.0 * x.item();
                adam_step(&mut x, &[g], &mut st).unwrap();
            }
            assert_eq!(st.step_count, 1000);
            x.item()
        };
        // Reference trajectory end point from an independent scalar
        // simulation of the same update rule.
        assert!((run(0.005) - 0.191_443_341_672_794).abs() < 1e-12);
        assert!(run(0.01).abs() < 0.1);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let mut p = Tensor::zeros([2]);
        let mut st = AdamState::new(2, 0.1);
        assert!(matches!(adam_step(&mut p, &[1.0], &mut st), Err(Error::Shape { .. })));
        let mut st3 = AdamState::new(3, 0.1);
        assert!(adam_step(&mut p, &[1.0, 1.0], &mut st3).is_err());
    }
}
