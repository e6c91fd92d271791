use alloc::vec::Vec;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compares the tape gradient of a scalar program against central finite
/// differences, one coordinate at a time.
///
/// Returns `max_i |g_ad − g_fd| / max(1, |g_fd|)`.
pub fn check_gradients<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&Tape, Var) -> Result<Var>,
{
    check_gradients_many(|tape, vars| f(tape, vars[0]), core::slice::from_ref(x), h)
}

/// [`check_gradients`] over several inputs at once; the error is the maximum
/// across every coordinate of every input.
pub fn check_gradients_many<F>(f: F, xs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.param(x)).collect();
        let out = f(&tape, &vars)?;
        tape.backward(out)?;
        vars.iter()
            .zip(xs)
            .map(|(&v, x)| tape.grad(v).unwrap_or_else(|| Tensor::zeros(x.shape())))
            .collect()
    };

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&tape, &vars)?;
        let value = tape.value(out);
        if value.len() != 1 {
            return Err(Error::NonScalarOutput(value.shape().to_vec()));
        }
        Ok(value.data()[0])
    };

    let mut inputs = xs.to_vec();
    let mut worst = 0.0f64;
    for (t, grad) in analytic.iter().enumerate() {
        for i in 0..inputs[t].len() {
            let orig = inputs[t].data()[i];
            inputs[t].data_mut()[i] = orig + h;
            let plus = eval(&inputs)?;
            inputs[t].data_mut()[i] = orig - h;
            let minus = eval(&inputs)?;
            inputs[t].data_mut()[i] = orig;
            let fd = (plus - minus) / (2.0 * h);
            let err = (grad.data()[i] - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
