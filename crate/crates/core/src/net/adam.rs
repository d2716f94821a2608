use crate::error::{ensure, Result};
use crate::Scalar;

use super::{Gradient, Mlp};

/// Adam moment accumulators with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    first: Vec<T>,
    second: Vec<T>,
    step: u64,
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: usize, learning_rate: T) -> Self {
        Self {
            first: vec![T::zero(); params],
            second: vec![T::zero(); params],
            step: 0,
            learning_rate,
            beta1: T::from_f64_lossy(0.9),
            beta2: T::from_f64_lossy(0.999),
            epsilon: T::from_f64_lossy(1e-8),
        }
    }

    pub fn for_network(net: &Mlp<T>, learning_rate: T) -> Self {
        Self::new(net.param_count(), learning_rate)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update, followed by the optional clamp.
    pub fn step(&mut self, net: &mut Mlp<T>, grad: &Gradient<T>, clamp: Option<T>) -> Result<()> {
        ensure!(
            grad.0.len() == net.param_count() && self.first.len() == net.param_count(),
            "Adam state, gradient and parameters disagree in shape"
        );
        self.step += 1;
        let t = i32::try_from(self.step).unwrap_or(i32::MAX);
        let c1 = T::one() - self.beta1.powi(t);
        let c2 = T::one() - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for (((p, &g), m), v) in net
            .params_mut()
            .iter_mut()
            .zip(&grad.0)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        if let Some(bound) = clamp {
            net.clamp(bound);
        }
        Ok(())
    }
}
