use serde::{Deserialize, Serialize};

use super::{NnError, ParamVector};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    config: AdamConfig,
    m: Vec<T>,
    v: Vec<T>,
    t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Applies one update to `params` in place.
    pub fn step(&mut self, params: &mut ParamVector<T>, grad: &ParamVector<T>) -> Result<(), NnError> {
        if params.len() != self.m.len() {
            return Err(NnError::LengthMismatch {
                expected: self.m.len(),
                actual: params.len(),
            });
        }
        if grad.len() != params.len() {
            return Err(NnError::LengthMismatch {
                expected: params.len(),
                actual: grad.len(),
            });
        }
        self.t += 1;
        let c = &self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let one = T::one();
        let t = self.t as i32;
        let corr1 = one - T::of(c.beta1.powi(t));
        let corr2 = one - T::of(c.beta2.powi(t));
        let lr = T::of(c.learning_rate);
        let eps = T::of(c.epsilon);
        for (((p, &g), m), v) in params
            .values_mut()
            .iter_mut()
            .zip(grad.values())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / corr1;
            let v_hat = *v / corr2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut params = ParamVector::flat(vec![0.5, -2.0, 3.0]);
        let before = params.clone();
        let mut adam = AdamState::new(3, AdamConfig::default());
        adam.step(&mut params, &ParamVector::flat(vec![0.0; 3])).unwrap();
        assert_eq!(params, before);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut params = ParamVector::flat(vec![0.0f64, 0.0, 0.0]);
        let mut adam = AdamState::new(3, AdamConfig::default());
        adam.step(&mut params, &ParamVector::flat(vec![3.0, -0.02, 7.5]))
            .unwrap();
        let expected = [-0.001f64, 0.001, -0.001];
        for (p, e) in params.values().iter().zip(expected) {
            assert!((p - e).abs() < 1e-8, "{p} vs {e}");
        }
    }

    #[test]
    fn length_mismatch_rejected() {
        let mut params = ParamVector::flat(vec![0.0; 2]);
        let mut adam = AdamState::<f64>::new(3, AdamConfig::default());
        assert!(adam.step(&mut params, &ParamVector::flat(vec![0.0; 2])).is_err());
    }

    #[test]
    fn quadratic_converges() {
        // Scalar simulation of f(w) = w², w0 = 1, lr = 0.1.
        let config = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut adam = AdamState::new(1, config);
        let mut w = ParamVector::flat(vec![1.0f64]);
        let mut trace = vec![1.0];
        for _ in 0..100 {
            let g = ParamVector::flat(vec![2.0 * w.values()[0]]);
            adam.step(&mut w, &g).unwrap();
            trace.push(w.values()[0].abs());
        }
        // Monotone while approaching the minimum (first 10 steps), then small.
        assert!(trace[..10].windows(2).all(|p| p[1] < p[0]));
        assert!(trace[100] < 0.1, "final |w| = {}", trace[100]);
    }
}
