//! Adam optimizer with bias correction.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Defaults: lr 3e-4, beta1 0.9, beta2 0.999, epsilon 1e-8.
    pub fn new(param_shapes: &[Vec<usize>], learning_rate: f64) -> Self {
        AdamState {
            step_count: 0,
            first_moment: param_shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
            second_moment: param_shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn for_params(params: &[&Tensor], learning_rate: f64) -> Self {
        let shapes: Vec<Vec<usize>> = params.iter().map(|p| p.shape.clone()).collect();
        AdamState::new(&shapes, learning_rate)
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(Error::Invalid(format!(
                "adam: {} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            if p.shape != grads[i].shape {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape.clone(),
                    rhs: grads[i].shape.clone(),
                });
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            for j in 0..g.data.len() {
                let gj = g.data[j];
                m.data[j] = self.beta1 * m.data[j] + (1.0 - self.beta1) * gj;
                v.data[j] = self.beta2 * v.data[j] + (1.0 - self.beta2) * gj * gj;
                let m_hat = m.data[j] / bc1;
                let v_hat = v.data[j] / bc2;
                p.data[j] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
