//! Central finite-difference comparison against the tape.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Largest step the harness accepts.
pub const MAX_STEP: f64 = 1e-3;
/// Smallest step the harness accepts.
pub const MIN_STEP: f64 = 1e-7;

/// Compares the tape gradient of a scalar function at `x` against central
/// differences. Returns `max_i |analytic_i - numeric_i| / max(1, |analytic_i|)`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    grad_check_all(|g, vars| f(g, vars[0]), std::slice::from_ref(x), step)
}

/// Multi-input variant: every tensor in `inputs` is perturbed coordinate by
/// coordinate and the worst relative error across all of them is returned.
pub fn grad_check_all<F>(f: F, inputs: &[Tensor<f64>], step: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if !(MIN_STEP..=MAX_STEP).contains(&step) {
        return Err(Error::Contract(format!(
            "finite-difference step {step} outside [{MIN_STEP}, {MAX_STEP}]"
        )));
    }
    let eval = |xs: &[Tensor<f64>], track: bool| -> Result<(Graph<f64>, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars = xs
            .iter()
            .map(|t| g.leaf(t.clone().with_grad(track)))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut g, &vars)?;
        if g.value(out).len() != 1 {
            return Err(Error::Contract(format!(
                "grad_check needs a scalar-valued function, got shape {:?}",
                g.shape(out)
            )));
        }
        Ok((g, vars, out))
    };

    let (g, vars, out) = eval(inputs, true)?;
    let grads = g.backward(out)?;

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let zeros = vec![0.0; inputs[k].len()];
        let analytic = grads.get(*var).unwrap_or(&zeros).to_vec();
        for (i, &a) in analytic.iter().enumerate() {
            let orig = inputs[k].data()[i];
            probe[k].data_mut()[i] = orig + step;
            let (gp, _, op) = eval(&probe, false)?;
            probe[k].data_mut()[i] = orig - step;
            let (gm, _, om) = eval(&probe, false)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (gp.value(op).data()[0] - gm.value(om).data()[0]) / (2.0 * step);
            let err = (a - numeric).abs() / a.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
