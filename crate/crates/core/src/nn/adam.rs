use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::{Grads, ParamStore};
use crate::nn::scalar::Scalar;
use crate::nn::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Rescale gradients whose global L2 norm exceeds this value.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// The gradient contained NaN or infinity; parameters were left untouched.
    SkippedNonFinite,
}

/// Bias-corrected Adam with per-parameter moment estimates.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = |_: ()| -> Vec<Tensor<T>> {
            params
                .iter()
                .map(|(_, t)| Tensor::zeros(t.shape()))
                .collect()
        };
        Self {
            config,
            first: zeros(()),
            second: zeros(()),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut ParamStore<T>, grads: &Grads<T>) -> Result<StepOutcome> {
        if grads.len() != params.len() || self.first.len() != params.len() {
            return Err(Error::shape(
                "adam",
                format!("{} gradients for {} parameters", grads.len(), params.len()),
            ));
        }
        if !grads.is_finite() {
            log::warn!(
                "non-finite gradient at step {}; update skipped",
                self.step + 1
            );
            return Ok(StepOutcome::SkippedNonFinite);
        }
        let clip = match self.config.clip_norm {
            Some(max) => {
                let norm = grads.global_norm();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };

        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.config.beta1, self.config.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let lr = self.config.lr;
        let eps = self.config.epsilon;

        for idx in 0..params.len() {
            let g = grads.get(idx);
            let p = params.tensor_mut(idx);
            if g.shape() != p.shape() {
                return Err(Error::shape(
                    "adam",
                    format!("gradient {:?} for parameter {:?}", g.shape(), p.shape()),
                ));
            }
            let m = self.first[idx].data_mut();
            let v = self.second[idx].data_mut();
            for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                let gi = gi.as_f64() * clip;
                let m_new = b1 * mi.as_f64() + (1.0 - b1) * gi;
                let v_new = b2 * vi.as_f64() + (1.0 - b2) * gi * gi;
                *mi = T::from_f64_lossy(m_new);
                *vi = T::from_f64_lossy(v_new);
                let m_hat = m_new / c1;
                let v_hat = v_new / c2;
                let delta = lr * m_hat / (v_hat.sqrt() + eps);
                *pi = T::from_f64_lossy(pi.as_f64() - delta);
            }
        }
        Ok(StepOutcome::Applied)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(values: Vec<f64>) -> ParamStore<f64> {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::vector(values)).unwrap();
        p
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = one_param(vec![1.0, -2.0, 3.0]);
        let before = p.clone();
        let mut adam = AdamState::new(&p, AdamConfig::default());
        let g = Grads::zeros_like(&p);
        for _ in 0..5 {
            adam.update(&mut p, &g).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(adam.step_count(), 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_gradient_sign() {
        let mut p = one_param(vec![0.0, 0.0]);
        let mut adam = AdamState::new(&p, AdamConfig::default());
        let mut g = Grads::zeros_like(&p);
        g.get_mut(0).data_mut().copy_from_slice(&[3.5, -0.02]);
        adam.update(&mut p, &g).unwrap();
        // m̂ = g and v̂ = g² at t = 1, so the step is lr·g/(|g| + ε).
        let w = p.get("w").unwrap().data();
        assert!((w[0] + 0.001).abs() < 1e-9);
        assert!((w[1] - 0.001).abs() < 1e-9);
    }

    #[test]
    fn non_finite_gradient_is_skipped() {
        let mut p = one_param(vec![1.0]);
        let before = p.clone();
        let mut adam = AdamState::new(&p, AdamConfig::default());
        let mut g = Grads::zeros_like(&p);
        g.get_mut(0).data_mut()[0] = f64::NAN;
        assert_eq!(
            adam.update(&mut p, &g).unwrap(),
            StepOutcome::SkippedNonFinite
        );
        assert_eq!(p, before);
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn identical_runs_are_identical() {
        let run = || {
            let mut p = one_param(vec![0.3, -0.7]);
            let mut adam = AdamState::new(&p, AdamConfig::default());
            for step in 0..20 {
                let mut g = Grads::zeros_like(&p);
                let w = p.get("w").unwrap().data().to_vec();
                g.get_mut(0).data_mut()[0] = 2.0 * w[0] + step as f64 * 0.01;
                g.get_mut(0).data_mut()[1] = 2.0 * w[1];
                adam.update(&mut p, &g).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn clipping_bounds_the_effective_gradient() {
        let mut p = one_param(vec![0.0]);
        let config = AdamConfig {
            clip_norm: Some(1.0),
            ..AdamConfig::default()
        };
        let mut adam = AdamState::new(&p, config);
        let mut g = Grads::zeros_like(&p);
        g.get_mut(0).data_mut()[0] = 1e6;
        adam.update(&mut p, &g).unwrap();
        assert!((p.get("w").unwrap().data()[0] + 0.001).abs() < 1e-9);
    }
}
