use crate::diffmath::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Mean over the batch of `-log_softmax(logits)[label]`.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 2 || shape[0] != labels.len() || shape[0] == 0 {
        return Err(Error::Shape {
            op: "cross_entropy",
            lhs: shape,
            rhs: vec![labels.len()],
        });
    }
    let (b, c) = (shape[0], shape[1]);
    let mut onehot = Tensor::zeros(&[b, c]);
    for (r, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::invalid(format!(
                "cross_entropy: label {y} out of range for {c} classes"
            )));
        }
        onehot.data_mut()[r * c + y] = 1.0;
    }
    let onehot = tape.constant(onehot)?;
    let ls = tape.log_softmax(logits)?;
    let picked = tape.mul(ls, onehot)?;
    let total = tape.sum(picked)?;
    tape.scale(total, -1.0 / b as f64)
}
