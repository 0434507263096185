use serde::{Deserialize, Serialize};

use super::Parameters;
use crate::diffmath::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are laid out in the visiting order of
/// the parameter groups passed to [`Adam::step`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            first: Vec::new(),
            second: Vec::new(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads` lists one tensor per parameter tensor, in
    /// the order the groups visit them.
    pub fn step(&mut self, groups: &mut [&mut dyn Parameters], grads: &[Tensor]) -> Result<()> {
        if let Some(bad) = grads.iter().position(|g| !g.all_finite()) {
            return Err(Error::Diverged(format!("non-finite gradient for parameter {bad}")));
        }
        let mut shapes = Vec::new();
        for g in groups.iter() {
            g.visit(&mut |_, t| shapes.push(t.shape().to_vec()));
        }
        if shapes.len() != grads.len() {
            return Err(Error::invalid(format!(
                "adam: {} parameters but {} gradients",
                shapes.len(),
                grads.len()
            )));
        }
        for (s, g) in shapes.iter().zip(grads) {
            if s.as_slice() != g.shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    lhs: s.clone(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.second = self.first.clone();
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let mut k = 0;
        let (first, second) = (&mut self.first, &mut self.second);
        for group in groups.iter_mut() {
            group.visit_mut(&mut |_, p| {
                let g = grads[k].data();
                let (m, v) = (&mut first[k], &mut second[k]);
                for (j, w) in p.data_mut().iter_mut().enumerate() {
                    m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                    v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                    let mhat = m[j] / bc1;
                    let vhat = v[j] / bc2;
                    *w -= lr * mhat / (vhat.sqrt() + eps);
                }
                k += 1;
            });
        }
        Ok(())
    }
}
