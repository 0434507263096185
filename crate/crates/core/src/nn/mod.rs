//! Network building blocks: the MLP acquirer, the stacked LSTM classifier,
//! cross-entropy loss, Adam and a text checkpoint format.
//!
//! Parameters live in plain [`Tensor`]s owned by the model structs. For each
//! forward pass a model is *bound* onto a fresh tape, which records every
//! parameter as a leaf (trainable) or a constant (frozen).

mod acquirer;
mod adam;
mod checkpoint;
mod loss;
mod lstm;

pub use acquirer::{BoundAcquirer, MlpAcquirer};
pub use adam::{Adam, AdamConfig};
pub use checkpoint::Checkpoint;
pub use loss::cross_entropy;
pub use lstm::{BoundClassifier, BoundLstmLayer, ClassifierState, LstmClassifier, LstmLayer};

use rand::Rng;

use crate::diffmath::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Width of every LSTM layer.
pub const LSTM_HIDDEN: usize = 16;
/// Width of the projection between the top LSTM layer and the class head.
pub const PROJECTION_DIM: usize = 8;

/// Uniform walk over a model's parameter tensors, in a fixed order.
pub trait Parameters {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.len());
        n
    }
}

/// Samples `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn uniform_fan_in(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches sample count")
}

fn bind_tensor(tape: &mut Tape, t: &Tensor, trainable: bool) -> Result<Var> {
    if trainable {
        tape.leaf(t.clone())
    } else {
        tape.constant(t.clone())
    }
}

/// Affine map `x W + b` with `W: [in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLinear {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    pub fn init(rng: &mut impl Rng, input: usize, output: usize) -> Self {
        Linear {
            weight: uniform_fan_in(rng, &[input, output], input),
            bias: uniform_fan_in(rng, &[output], input),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Tensor::zeros(&[input, output]),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundLinear> {
        Ok(BoundLinear {
            weight: bind_tensor(tape, &self.weight, trainable)?,
            bias: bind_tensor(tape, &self.bias, trainable)?,
        })
    }

    fn check(&self) -> Result<()> {
        let ws = self.weight.shape();
        if ws.len() != 2 || self.bias.shape() != [ws[1]] {
            return Err(Error::Shape {
                op: "linear",
                lhs: ws.to_vec(),
                rhs: self.bias.shape().to_vec(),
            });
        }
        Ok(())
    }
}

impl BoundLinear {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let y = tape.matmul(x, self.weight)?;
        tape.add(y, self.bias)
    }

    pub fn vars(&self) -> [Var; 2] {
        [self.weight, self.bias]
    }
}

impl Parameters for Linear {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f("weight", &self.weight);
        f("bias", &self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f("weight", &mut self.weight);
        f("bias", &mut self.bias);
    }
}
