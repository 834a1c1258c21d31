use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adaptive-moment optimizer state for one parameter list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &[Tensor], lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One descent step `params ← params − lr · m̂ / (√v̂ + eps)`.
    ///
    /// Rejects non-finite gradients before touching any state.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::Shape {
                context: "Adam::step parameter count",
                expected: vec![self.first.len()],
                actual: vec![params.len(), grads.len()],
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.first[i].len() || g.len() != p.len() {
                return Err(Error::Shape {
                    context: "Adam::step",
                    expected: p.shape().to_vec(),
                    actual: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter {i}")));
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - libm::pow(self.beta1, t);
        let c2 = 1.0 - libm::pow(self.beta2, t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *x -= self.lr * mhat / (libm::sqrt(vhat) + self.eps);
            }
        }
        Ok(())
    }
}
