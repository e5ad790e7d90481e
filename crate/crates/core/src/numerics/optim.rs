//! Adaptive-moment (Adam) updates.

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    /// One bias-corrected Adam step. Increments the step counter by one.
    pub fn step(&self, params: &mut ParamSet, grads: &[Tensor], lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::Contract(format!("learning rate must be positive, got {lr}")));
        }
        if grads.len() != params.len() {
            return Err(Error::Shape {
                op: "optimizer_step",
                expected: vec![params.len()],
                got: vec![grads.len()],
            });
        }
        for (p, g) in params.values().iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "optimizer_step",
                    expected: p.shape().to_vec(),
                    got: g.shape().to_vec(),
                });
            }
        }
        let (values, m, v, step) = params.step_mut();
        *step += 1;
        let t = *step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in values.iter_mut().zip(grads).zip(m.iter_mut().zip(v.iter_mut())) {
            for (((pv, gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// [`Adam::step`] with default moment decays.
pub fn optimizer_step(params: &mut ParamSet, grads: &[Tensor], lr: f64) -> Result<()> {
    Adam::default().step(params, grads, lr)
}
