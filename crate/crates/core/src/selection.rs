//! Budgeted feature selection with the straight-through Gumbel-Softmax.
//!
//! Each step runs `b` rounds. In every round the logits of already chosen
//! features are pushed down by `scale * |logit|`, fresh Gumbel noise is drawn,
//! and the relaxed one-hot of the winner is merged into the running mask
//! (hard part by OR, soft part by elementwise max).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffmath::{Tape, Tensor, Var};
use crate::error::{Error, Result};

const U_MIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GumbelConfig {
    pub temperature: f64,
    pub penalty_scale: f64,
    /// Forward pass sees the hard mask, gradients use the soft one.
    pub hard_forward: bool,
}

impl Default for GumbelConfig {
    fn default() -> Self {
        GumbelConfig {
            temperature: 1.0,
            penalty_scale: 100.0,
            hard_forward: true,
        }
    }
}

impl GumbelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid(format!(
                "gumbel temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Something that yields a `[rows, cols]` block of Gumbel(0, 1) noise.
pub trait NoiseSource {
    fn gumbel(&mut self, rows: usize, cols: usize) -> Tensor;
}

pub fn gumbel_value(rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.random::<f64>().clamp(U_MIN, 1.0 - U_MIN);
    -(-u.ln()).ln()
}

/// i.i.d. Gumbel(0, 1) samples drawn in row-major order from one stream.
pub fn sample_gumbel(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| gumbel_value(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("sample count matches shape")
}

impl NoiseSource for ChaCha8Rng {
    fn gumbel(&mut self, rows: usize, cols: usize) -> Tensor {
        sample_gumbel(self, &[rows, cols])
    }
}

/// One independent stream per batch row, so a series draws the same noise
/// whether it runs alone or inside a batch.
#[derive(Debug, Clone)]
pub struct RowStreams {
    pub rows: Vec<ChaCha8Rng>,
}

impl RowStreams {
    pub fn new(rows: Vec<ChaCha8Rng>) -> Self {
        RowStreams { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

impl NoiseSource for RowStreams {
    fn gumbel(&mut self, rows: usize, cols: usize) -> Tensor {
        assert_eq!(rows, self.rows.len(), "one noise stream per row");
        let mut data = Vec::with_capacity(rows * cols);
        for rng in &mut self.rows {
            data.extend((0..cols).map(|_| gumbel_value(rng)));
        }
        Tensor::new(vec![rows, cols], data).expect("sample count matches shape")
    }
}

/// One relaxed categorical draw.
#[derive(Debug, Clone)]
pub struct RelaxedDraw {
    /// Straight-through one-hot when `hard_forward`, otherwise equal to `soft`.
    pub sample: Var,
    /// `softmax((logits + g) / τ)`
    pub soft: Var,
    /// One-hot of the row-wise argmax of `soft`.
    pub hard: Tensor,
}

fn one_hot_argmax(t: &Tensor) -> Tensor {
    let cols = t.last_dim();
    let mut out = Tensor::zeros(t.shape());
    for (r, c) in t.argmax_rows().into_iter().enumerate() {
        out.data_mut()[r * cols + c] = 1.0;
    }
    out
}

/// Relaxed one-hot for a given noise block.
pub fn relaxed_one_hot(
    tape: &mut Tape,
    logits: Var,
    noise: Tensor,
    temperature: f64,
    hard_forward: bool,
) -> Result<RelaxedDraw> {
    if temperature <= 0.0 {
        return Err(Error::invalid("gumbel_softmax: temperature must be positive"));
    }
    if !tape.value(logits).all_finite() {
        return Err(Error::NonFinite { op: "gumbel_softmax" });
    }
    let g = tape.constant(noise)?;
    let z = tape.add(logits, g)?;
    let z = tape.scale(z, 1.0 / temperature)?;
    let soft = tape.softmax(z)?;
    let hard = one_hot_argmax(tape.value(soft));
    let sample = if hard_forward {
        tape.straight_through(hard.clone(), soft)?
    } else {
        soft
    };
    Ok(RelaxedDraw { sample, soft, hard })
}

/// Gumbel-Softmax draw for `[B, F]` logits.
pub fn gumbel_softmax(
    tape: &mut Tape,
    logits: Var,
    temperature: f64,
    noise: &mut dyn NoiseSource,
    hard_forward: bool,
) -> Result<RelaxedDraw> {
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 2 {
        return Err(Error::Shape {
            op: "gumbel_softmax",
            lhs: shape,
            rhs: vec![],
        });
    }
    let g = noise.gumbel(shape[0], shape[1]);
    relaxed_one_hot(tape, logits, g, temperature, hard_forward)
}

/// `logits - scale * selected ⊙ |logits|`
pub fn penalize(tape: &mut Tape, logits: Var, selected: &Tensor, scale: f64) -> Result<Var> {
    if selected.shape() != tape.shape(logits) {
        return Err(Error::Shape {
            op: "penalize",
            lhs: tape.shape(logits).to_vec(),
            rhs: selected.shape().to_vec(),
        });
    }
    if selected.data().iter().all(|&v| v == 0.0) {
        return Ok(logits);
    }
    let weights = tape.constant(selected.map(|m| m * scale))?;
    let magnitude = tape.abs(logits)?;
    let penalty = tape.mul(magnitude, weights)?;
    tape.sub(logits, penalty)
}

/// The acquisition vector for one step of a batch.
#[derive(Debug, Clone)]
pub struct AcquisitionMask {
    /// `{0,1}^[B, F]`, the union of the sampled one-hots.
    pub hard: Tensor,
    /// Elementwise max over the rounds' relaxed samples (zeros when `b = 0`).
    pub soft: Var,
    /// What downstream computation consumes: hard values with soft gradients
    /// under `hard_forward`, the soft mask otherwise.
    pub value: Var,
}

impl AcquisitionMask {
    pub fn popcounts(&self) -> Vec<usize> {
        (0..self.hard.rows())
            .map(|r| self.hard.row(r).iter().filter(|&&v| v > 0.5).count())
            .collect()
    }
}

/// Selects up to `budget` features per row.
pub fn budgeted_select(
    tape: &mut Tape,
    logits: Var,
    budget: usize,
    cfg: &GumbelConfig,
    noise: &mut dyn NoiseSource,
) -> Result<AcquisitionMask> {
    cfg.validate()?;
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 2 {
        return Err(Error::Shape {
            op: "budgeted_select",
            lhs: shape,
            rhs: vec![],
        });
    }
    let features = shape[1];
    if budget > features {
        return Err(Error::invalid(format!(
            "budget {budget} exceeds feature count {features}"
        )));
    }
    let mut hard = Tensor::zeros(&shape);
    let mut soft: Option<Var> = None;
    for _ in 0..budget {
        let penalized = penalize(tape, logits, &hard, cfg.penalty_scale)?;
        let draw = gumbel_softmax(tape, penalized, cfg.temperature, noise, false)?;
        for (acc, h) in hard.data_mut().iter_mut().zip(draw.hard.data()) {
            *acc = acc.max(*h);
        }
        soft = Some(match soft {
            None => draw.soft,
            Some(prev) => tape.maximum(prev, draw.soft)?,
        });
    }
    let soft = match soft {
        Some(s) => s,
        None => tape.constant(Tensor::zeros(&shape))?,
    };
    let value = if cfg.hard_forward {
        tape.straight_through(hard.clone(), soft)?
    } else {
        soft
    };
    Ok(AcquisitionMask { hard, soft, value })
}
