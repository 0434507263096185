use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Central-difference gradient of a scalar function of a flat vector.
pub fn central_difference(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe)?;
        probe[i] = orig - h;
        let down = f(&probe)?;
        probe[i] = orig;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// max_i |a_i - n_i| / max(1, |n_i|)
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / n.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Compares the tape gradient of `f` at `x` against central differences with
/// step `h`, returning the largest relative error over components.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(h > 0.0 && h <= 1e-2) {
        return Err(Error::invalid(format!("grad_check: step {h} outside (0, 1e-2]")));
    }
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone())?;
    let y = f(&mut tape, xv)?;
    let grads = tape.backward(y)?;
    let analytic = grads.get(xv).expect("leaf gradient").data().to_vec();

    let numeric = central_difference(
        |probe| {
            let mut tape = Tape::new();
            let xv = tape.leaf(Tensor::new(x.shape().to_vec(), probe.to_vec())?)?;
            let y = f(&mut tape, xv)?;
            Ok(tape.value(y).item())
        },
        x.data(),
        h,
    )?;
    Ok(max_relative_error(&analytic, &numeric))
}
