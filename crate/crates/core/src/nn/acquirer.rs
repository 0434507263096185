use rand::Rng;

use super::{bind_tensor, BoundLinear, Linear, Parameters};
use crate::diffmath::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// One-hidden-layer ReLU network mapping `[prev_obs, prev_mask, t]` to one
/// logit per feature, plus learnable logits for the very first request.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpAcquirer {
    pub layer1: Linear,
    pub layer2: Linear,
    pub init_logits: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundAcquirer {
    pub layer1: BoundLinear,
    pub layer2: BoundLinear,
    pub init_logits: Var,
    features: usize,
}

impl MlpAcquirer {
    pub fn init(rng: &mut impl Rng, features: usize, hidden: usize) -> Self {
        MlpAcquirer {
            layer1: Linear::init(rng, 2 * features + 1, hidden),
            layer2: Linear::init(rng, hidden, features),
            init_logits: Tensor::zeros(&[features]),
        }
    }

    pub fn zeros(features: usize, hidden: usize) -> Self {
        MlpAcquirer {
            layer1: Linear::zeros(2 * features + 1, hidden),
            layer2: Linear::zeros(hidden, features),
            init_logits: Tensor::zeros(&[features]),
        }
    }

    pub fn features(&self) -> usize {
        self.layer2.output_dim()
    }

    pub fn hidden(&self) -> usize {
        self.layer1.output_dim()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundAcquirer> {
        let f = self.features();
        self.layer1.check()?;
        self.layer2.check()?;
        if self.layer1.input_dim() != 2 * f + 1
            || self.layer2.input_dim() != self.hidden()
            || self.init_logits.shape() != [f]
        {
            return Err(Error::Shape {
                op: "mlp_acquirer",
                lhs: self.layer1.weight.shape().to_vec(),
                rhs: self.layer2.weight.shape().to_vec(),
            });
        }
        Ok(BoundAcquirer {
            layer1: self.layer1.bind(tape, trainable)?,
            layer2: self.layer2.bind(tape, trainable)?,
            init_logits: bind_tensor(tape, &self.init_logits, trainable)?,
            features: f,
        })
    }
}

impl BoundAcquirer {
    /// `prev_obs`, `prev_mask`: `[B, F]`; `t_norm`: `[B, 1]`. Returns `[B, F]` logits.
    pub fn forward(&self, tape: &mut Tape, prev_obs: Var, prev_mask: Var, t_norm: Var) -> Result<Var> {
        let f = self.features;
        let (so, sm, st) = (tape.shape(prev_obs), tape.shape(prev_mask), tape.shape(t_norm));
        if so.len() != 2 || so[1] != f || sm != so || st != [so[0], 1] {
            return Err(Error::Shape {
                op: "mlp_acquirer_forward",
                lhs: so.to_vec(),
                rhs: if sm != so { sm.to_vec() } else { st.to_vec() },
            });
        }
        let x = tape.concat(&[prev_obs, prev_mask, t_norm])?;
        let h = self.layer1.forward(tape, x)?;
        let h = tape.relu(h)?;
        self.layer2.forward(tape, h)
    }

    /// The initial-request logits broadcast to `[batch, F]`.
    pub fn initial_logits(&self, tape: &mut Tape, batch: usize) -> Result<Var> {
        let zeros = tape.constant(Tensor::zeros(&[batch, self.features]))?;
        tape.add(zeros, self.init_logits)
    }

    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.layer1.vars().to_vec();
        v.extend(self.layer2.vars());
        v.push(self.init_logits);
        v
    }
}

impl Parameters for MlpAcquirer {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.layer1.visit(&mut |n, t| f(&format!("layer1.{n}"), t));
        self.layer2.visit(&mut |n, t| f(&format!("layer2.{n}"), t));
        f("init_logits", &self.init_logits);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.layer1.visit_mut(&mut |n, t| f(&format!("layer1.{n}"), t));
        self.layer2.visit_mut(&mut |n, t| f(&format!("layer2.{n}"), t));
        f("init_logits", &mut self.init_logits);
    }
}
