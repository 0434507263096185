use rand::Rng;

use super::{uniform_fan_in, BoundLinear, Linear, Parameters, LSTM_HIDDEN, PROJECTION_DIM};
use crate::diffmath::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// One LSTM layer. Gate blocks along the last axis are ordered `i, f, g, o`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    /// `[input, 4H]`
    pub w_input: Tensor,
    /// `[H, 4H]`
    pub w_hidden: Tensor,
    /// `[4H]`
    pub bias: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLstmLayer {
    pub w_input: Var,
    pub w_hidden: Var,
    pub bias: Var,
    hidden: usize,
}

impl LstmLayer {
    /// Every entry `U(±1/√H)` independent of the input width. The bias is
    /// the sum of an input-side and a hidden-side draw.
    pub fn init(rng: &mut impl Rng, input: usize, hidden: usize) -> Self {
        let w_input = uniform_fan_in(rng, &[input, 4 * hidden], hidden);
        let w_hidden = uniform_fan_in(rng, &[hidden, 4 * hidden], hidden);
        let b_in = uniform_fan_in(rng, &[4 * hidden], hidden);
        let b_hid = uniform_fan_in(rng, &[4 * hidden], hidden);
        let bias = Tensor::new(
            vec![4 * hidden],
            b_in.data().iter().zip(b_hid.data()).map(|(a, b)| a + b).collect(),
        )
        .expect("bias shape");
        LstmLayer { w_input, w_hidden, bias }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmLayer {
            w_input: Tensor::zeros(&[input, 4 * hidden]),
            w_hidden: Tensor::zeros(&[hidden, 4 * hidden]),
            bias: Tensor::zeros(&[4 * hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hidden.shape()[0]
    }

    pub fn input_dim(&self) -> usize {
        self.w_input.shape()[0]
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundLstmLayer> {
        let h = self.hidden();
        if self.w_input.shape().len() != 2
            || self.w_input.shape()[1] != 4 * h
            || self.w_hidden.shape() != [h, 4 * h]
            || self.bias.shape() != [4 * h]
        {
            return Err(Error::Shape {
                op: "lstm_layer",
                lhs: self.w_input.shape().to_vec(),
                rhs: self.w_hidden.shape().to_vec(),
            });
        }
        Ok(BoundLstmLayer {
            w_input: super::bind_tensor(tape, &self.w_input, trainable)?,
            w_hidden: super::bind_tensor(tape, &self.w_hidden, trainable)?,
            bias: super::bind_tensor(tape, &self.bias, trainable)?,
            hidden: h,
        })
    }
}

impl Parameters for LstmLayer {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f("w_input", &self.w_input);
        f("w_hidden", &self.w_hidden);
        f("bias", &self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f("w_input", &mut self.w_input);
        f("w_hidden", &mut self.w_hidden);
        f("bias", &mut self.bias);
    }
}

impl BoundLstmLayer {
    /// One cell update: `c' = σ(f)⊙c + σ(i)⊙tanh(g)`, `h' = σ(o)⊙tanh(c')`.
    pub fn step(&self, tape: &mut Tape, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hd = self.hidden;
        let (sh, sc) = (tape.shape(h), tape.shape(c));
        if sh.len() != 2 || sh[1] != hd || sc != sh || tape.shape(x).first() != Some(&sh[0]) {
            return Err(Error::Shape {
                op: "lstm_step",
                lhs: tape.shape(x).to_vec(),
                rhs: sh.to_vec(),
            });
        }
        let zx = tape.matmul(x, self.w_input)?;
        let zh = tape.matmul(h, self.w_hidden)?;
        let z = tape.add(zx, zh)?;
        let z = tape.add(z, self.bias)?;
        let i = tape.slice(z, 0, hd)?;
        let f = tape.slice(z, hd, 2 * hd)?;
        let g = tape.slice(z, 2 * hd, 3 * hd)?;
        let o = tape.slice(z, 3 * hd, 4 * hd)?;
        let i = tape.sigmoid(i)?;
        let f = tape.sigmoid(f)?;
        let g = tape.tanh(g)?;
        let o = tape.sigmoid(o)?;
        let keep = tape.mul(f, c)?;
        let write = tape.mul(i, g)?;
        let c_next = tape.add(keep, write)?;
        let tc = tape.tanh(c_next)?;
        let h_next = tape.mul(o, tc)?;
        Ok((h_next, c_next))
    }

    pub fn vars(&self) -> [Var; 3] {
        [self.w_input, self.w_hidden, self.bias]
    }
}

/// Stacked LSTM over `[x_meas, mask, t]`, then `head(relu(projection(h_top)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmClassifier {
    pub layers: Vec<LstmLayer>,
    pub projection: Linear,
    pub head: Linear,
}

#[derive(Debug, Clone)]
pub struct BoundClassifier {
    pub layers: Vec<BoundLstmLayer>,
    pub projection: BoundLinear,
    pub head: BoundLinear,
    features: usize,
}

/// `(h, c)` per layer.
#[derive(Debug, Clone)]
pub struct ClassifierState {
    pub layers: Vec<(Var, Var)>,
}

impl ClassifierState {
    pub fn top_hidden(&self) -> Var {
        self.layers.last().expect("at least one layer").0
    }
}

impl LstmClassifier {
    pub fn init(rng: &mut impl Rng, features: usize, layers: usize, classes: usize) -> Self {
        let mut ls = Vec::with_capacity(layers);
        for l in 0..layers {
            let input = if l == 0 { 2 * features + 1 } else { LSTM_HIDDEN };
            ls.push(LstmLayer::init(rng, input, LSTM_HIDDEN));
        }
        LstmClassifier {
            layers: ls,
            projection: Linear::init(rng, LSTM_HIDDEN, PROJECTION_DIM),
            head: Linear::init(rng, PROJECTION_DIM, classes),
        }
    }

    pub fn zeros(features: usize, layers: usize, classes: usize) -> Self {
        LstmClassifier {
            layers: (0..layers)
                .map(|l| {
                    let input = if l == 0 { 2 * features + 1 } else { LSTM_HIDDEN };
                    LstmLayer::zeros(input, LSTM_HIDDEN)
                })
                .collect(),
            projection: Linear::zeros(LSTM_HIDDEN, PROJECTION_DIM),
            head: Linear::zeros(PROJECTION_DIM, classes),
        }
    }

    pub fn classes(&self) -> usize {
        self.head.output_dim()
    }

    pub fn features(&self) -> usize {
        (self.layers[0].input_dim() - 1) / 2
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundClassifier> {
        if self.layers.is_empty() {
            return Err(Error::invalid("classifier needs at least one LSTM layer"));
        }
        for pair in self.layers.windows(2) {
            if pair[1].input_dim() != pair[0].hidden() {
                return Err(Error::Shape {
                    op: "lstm_stack",
                    lhs: pair[0].w_hidden.shape().to_vec(),
                    rhs: pair[1].w_input.shape().to_vec(),
                });
            }
        }
        self.projection.check()?;
        self.head.check()?;
        let layers = self
            .layers
            .iter()
            .map(|l| l.bind(tape, trainable))
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundClassifier {
            layers,
            projection: self.projection.bind(tape, trainable)?,
            head: self.head.bind(tape, trainable)?,
            features: self.features(),
        })
    }
}

impl Parameters for LstmClassifier {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&mut |n, t| f(&format!("lstm{i}.{n}"), t));
        }
        self.projection.visit(&mut |n, t| f(&format!("projection.{n}"), t));
        self.head.visit(&mut |n, t| f(&format!("head.{n}"), t));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&mut |n, t| f(&format!("lstm{i}.{n}"), t));
        }
        self.projection
            .visit_mut(&mut |n, t| f(&format!("projection.{n}"), t));
        self.head.visit_mut(&mut |n, t| f(&format!("head.{n}"), t));
    }
}

impl BoundClassifier {
    pub fn initial_state(&self, tape: &mut Tape, batch: usize) -> Result<ClassifierState> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let h = tape.constant(Tensor::zeros(&[batch, l.hidden]))?;
                let c = tape.constant(Tensor::zeros(&[batch, l.hidden]))?;
                Ok((h, c))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ClassifierState { layers })
    }

    /// Feeds one measured step through the stack.
    pub fn step(
        &self,
        tape: &mut Tape,
        state: &ClassifierState,
        x_meas: Var,
        mask: Var,
        t_norm: Var,
    ) -> Result<ClassifierState> {
        let f = self.features;
        let (sx, sm) = (tape.shape(x_meas), tape.shape(mask));
        if sx.len() != 2 || sx[1] != f || sm != sx || tape.shape(t_norm) != [sx[0], 1] {
            return Err(Error::Shape {
                op: "classifier_step",
                lhs: sx.to_vec(),
                rhs: sm.to_vec(),
            });
        }
        let mut input = tape.concat(&[x_meas, mask, t_norm])?;
        let mut layers = Vec::with_capacity(self.layers.len());
        for (layer, &(h, c)) in self.layers.iter().zip(&state.layers) {
            let (h2, c2) = layer.step(tape, input, h, c)?;
            layers.push((h2, c2));
            input = h2;
        }
        Ok(ClassifierState { layers })
    }

    pub fn predict(&self, tape: &mut Tape, state: &ClassifierState) -> Result<Var> {
        let p = self.projection.forward(tape, state.top_hidden())?;
        let p = tape.relu(p)?;
        self.head.forward(tape, p)
    }

    pub fn vars(&self) -> Vec<Var> {
        let mut v: Vec<Var> = self.layers.iter().flat_map(|l| l.vars()).collect();
        v.extend(self.projection.vars());
        v.extend(self.head.vars());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::{central_difference, max_relative_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_everything_gives_zero_state() {
        let layer = LstmLayer::zeros(3, 16);
        let mut tape = Tape::new();
        let b = layer.bind(&mut tape, false).unwrap();
        let x = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
        let h = tape.constant(Tensor::zeros(&[2, 16])).unwrap();
        let c = tape.constant(Tensor::zeros(&[2, 16])).unwrap();
        let (h2, c2) = b.step(&mut tape, x, h, c).unwrap();
        assert!(tape.value(h2).data().iter().all(|&v| v == 0.0));
        assert!(tape.value(c2).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let mut layer = LstmLayer::zeros(3, 16);
        for j in 16..32 {
            layer.bias.data_mut()[j] = 20.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c0 = uniform_fan_in(&mut rng, &[2, 16], 1);
        let mut tape = Tape::new();
        let b = layer.bind(&mut tape, false).unwrap();
        let x = tape.constant(uniform_fan_in(&mut rng, &[2, 3], 1)).unwrap();
        let h = tape.constant(Tensor::zeros(&[2, 16])).unwrap();
        let c = tape.constant(c0.clone()).unwrap();
        let (_, c2) = b.step(&mut tape, x, h, c).unwrap();
        // zero g-gate weights make the write term tanh(0)=0; sigma(20) ~ 1 - 2e-9
        for (a, e) in tape.value(c2).data().iter().zip(c0.data()) {
            assert!((a - e).abs() < 1e-8);
        }
    }

    #[test]
    fn five_chained_steps_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let layer = LstmLayer::init(&mut rng, 3, 16);
        let xs: Vec<Tensor> = (0..5).map(|_| uniform_fan_in(&mut rng, &[2, 3], 1)).collect();
        let run = |layer: &LstmLayer, trainable: bool| -> Result<(f64, Vec<f64>)> {
            let mut tape = Tape::new();
            let b = layer.bind(&mut tape, trainable)?;
            let mut h = tape.constant(Tensor::zeros(&[2, 16]))?;
            let mut c = tape.constant(Tensor::zeros(&[2, 16]))?;
            for x in &xs {
                let xv = tape.constant(x.clone())?;
                (h, c) = b.step(&mut tape, xv, h, c)?;
            }
            let s = tape.sum(h)?;
            let value = tape.value(s).item();
            let mut grad = Vec::new();
            if trainable {
                let g = tape.backward(s)?;
                for v in b.vars() {
                    grad.extend_from_slice(g.get(v).unwrap().data());
                }
            }
            Ok((value, grad))
        };
        let (_, analytic) = run(&layer, true).unwrap();
        let mut flat = Vec::new();
        layer.visit(&mut |_, t| flat.extend_from_slice(t.data()));
        let numeric = central_difference(
            |p| {
                let mut l = layer.clone();
                let mut off = 0;
                l.visit_mut(&mut |_, t| {
                    let n = t.len();
                    t.data_mut().copy_from_slice(&p[off..off + n]);
                    off += n;
                });
                Ok(run(&l, false)?.0)
            },
            &flat,
            1e-5,
        )
        .unwrap();
        assert!(max_relative_error(&analytic, &numeric) < 1e-4);
    }

    #[test]
    fn default_forda_classifier_parameter_count() {
        let clf = LstmClassifier::zeros(40, 2, 2);
        // layer0 81*64+16*64+64, layer1 16*64*2+64, projection 16*8+8, head 8*2+2
        assert_eq!(clf.param_count(), 6272 + 2112 + 136 + 18);
        assert_eq!(clf.param_count(), 8538);
    }

    #[test]
    fn zero_head_gives_uniform_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut clf = LstmClassifier::init(&mut rng, 4, 2, 10);
        clf.head = Linear::zeros(PROJECTION_DIM, 10);
        let mut tape = Tape::new();
        let b = clf.bind(&mut tape, false).unwrap();
        let s = b.initial_state(&mut tape, 3).unwrap();
        let x = tape.constant(uniform_fan_in(&mut rng, &[3, 4], 1)).unwrap();
        let m = tape.constant(Tensor::ones(&[3, 4])).unwrap();
        let t = tape.constant(Tensor::zeros(&[3, 1])).unwrap();
        let s = b.step(&mut tape, &s, x, m, t).unwrap();
        let logits = b.predict(&mut tape, &s).unwrap();
        let p = tape.softmax(logits).unwrap();
        assert!(tape.value(p).data().iter().all(|&v| (v - 0.1).abs() < 1e-15));
    }

    #[test]
    fn stacking_equals_manual_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let clf = LstmClassifier::init(&mut rng, 3, 2, 2);
        let x = uniform_fan_in(&mut rng, &[2, 3], 1);
        let m = Tensor::ones(&[2, 3]);
        let t = Tensor::full(&[2, 1], 0.5);

        let mut tape = Tape::new();
        let b = clf.bind(&mut tape, false).unwrap();
        let s0 = b.initial_state(&mut tape, 2).unwrap();
        let xv = tape.constant(x.clone()).unwrap();
        let mv = tape.constant(m.clone()).unwrap();
        let tv = tape.constant(t.clone()).unwrap();
        let s1 = b.step(&mut tape, &s0, xv, mv, tv).unwrap();
        let s2 = b.step(&mut tape, &s1, xv, mv, tv).unwrap();
        let stacked = tape.value(s2.top_hidden()).clone();

        let mut tape = Tape::new();
        let l0 = clf.layers[0].bind(&mut tape, false).unwrap();
        let l1 = clf.layers[1].bind(&mut tape, false).unwrap();
        let xv = tape.constant(x).unwrap();
        let mv = tape.constant(m).unwrap();
        let tv = tape.constant(t).unwrap();
        let inp = tape.concat(&[xv, mv, tv]).unwrap();
        let z = tape.constant(Tensor::zeros(&[2, 16])).unwrap();
        let (h0, c0) = l0.step(&mut tape, inp, z, z).unwrap();
        let (h1, c1) = l1.step(&mut tape, h0, z, z).unwrap();
        let (h0b, _) = l0.step(&mut tape, inp, h0, c0).unwrap();
        let (h1b, _) = l1.step(&mut tape, h0b, h1, c1).unwrap();
        assert_eq!(tape.value(h1b), &stacked);
    }

    #[test]
    fn state_norm_bounded_over_long_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let clf = LstmClassifier::init(&mut rng, 2, 2, 2);
        let mut tape = Tape::new();
        let b = clf.bind(&mut tape, false).unwrap();
        let mut s = b.initial_state(&mut tape, 1).unwrap();
        let m = tape.constant(Tensor::ones(&[1, 2])).unwrap();
        for t in 0..500 {
            let x = tape
                .constant(Tensor::new(vec![1, 2], vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]).unwrap())
                .unwrap();
            let tv = tape.constant(Tensor::full(&[1, 1], t as f64 / 500.0)).unwrap();
            s = b.step(&mut tape, &s, x, m, tv).unwrap();
            for &(h, _) in &s.layers {
                assert!(tape.value(h).data().iter().all(|v| v.abs() <= 1.0));
            }
        }
    }
}
