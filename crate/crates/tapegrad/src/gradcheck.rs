//! Central finite-difference verification of tape gradients.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Compares the tape gradient of a scalar-valued graph against central
/// finite differences, perturbing every coordinate of every input that
/// requires gradients. Returns the maximum relative error
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
///
/// `build` must construct the same graph for the same inputs; it is run once
/// with gradients and twice per perturbed coordinate without.
pub fn grad_check_inputs<F>(build: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var> + Sync,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::InvalidArg {
            detail: format!("grad_check eps {eps} outside [1e-7, 1e-3]"),
        });
    }
    // analytic pass
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let loss = build(&mut tape, &vars)?;
    if tape.numel(loss) != 1 {
        return Err(Error::NonScalarLoss {
            shape: tape.shape(loss).to_vec(),
        });
    }
    if !tape.data(loss)[0].is_finite() {
        return Err(Error::Nan {
            context: "grad_check forward pass".into(),
        });
    }
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| {
            if t.requires_grad() {
                tape.grad(*v)
                    .map(|g| g.to_vec())
                    .unwrap_or_else(|| vec![0.0; t.numel()])
            } else {
                Vec::new()
            }
        })
        .collect();

    let eval = |target: usize, coord: usize, delta: f64| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(j, t)| {
                if j == target {
                    let mut d = t.data().to_vec();
                    d[coord] += delta;
                    tape.leaf_from(t.shape().to_vec(), d, false)
                        .expect("input shape is valid")
                } else {
                    let c = t.clone().with_requires_grad(false);
                    tape.leaf(&c)
                }
            })
            .collect();
        let loss = build(&mut tape, &vars)?;
        let v = tape.data(loss)[0];
        if !v.is_finite() {
            return Err(Error::Nan {
                context: format!("grad_check perturbation of input {target} coord {coord}"),
            });
        }
        Ok(v)
    };

    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .filter(|(_, t)| t.requires_grad())
        .flat_map(|(j, t)| (0..t.numel()).map(move |i| (j, i)))
        .collect();

    let rel_err = |&(j, i): &(usize, usize)| -> Result<f64> {
        let fp = eval(j, i, eps)?;
        let fm = eval(j, i, -eps)?;
        let numeric = (fp - fm) / (2.0 * eps);
        let a = analytic[j][i];
        Ok((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12))
    };

    #[cfg(feature = "parallel")]
    let errs: Result<Vec<f64>> = coords.par_iter().map(rel_err).collect();
    #[cfg(not(feature = "parallel"))]
    let errs: Result<Vec<f64>> = coords.iter().map(rel_err).collect();

    Ok(errs?.into_iter().fold(0.0, f64::max))
}

/// Single-input convenience wrapper around [`grad_check_inputs`].
pub fn grad_check<F>(build: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var> + Sync,
{
    let x = x.clone().with_requires_grad(true);
    grad_check_inputs(|tape, vars| build(tape, vars[0]), &[x], eps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_matches() {
        let x = Tensor::from_vec(vec![3], vec![0.5, -1.5, 2.0]).unwrap();
        let err = grad_check(
            |tape, x| {
                let y = tape.mul(x, x)?;
                tape.sum_all(y)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "relative error {err}");
    }

    #[test]
    fn eps_out_of_range_rejected() {
        let x = Tensor::zeros([2]);
        let err = grad_check(|tape, x| tape.sum_all(x), &x, 1e-2).unwrap_err();
        assert!(matches!(err, Error::InvalidArg { .. }));
    }
}
