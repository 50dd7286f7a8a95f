//! Central finite-difference gradient checking.
//!
//! Relative error is `|analytic - numeric| / max(|analytic|, |numeric|, GRAD_FLOOR)`.
//! The floor keeps components that are zero up to rounding noise from dominating.

use crate::error::TensorError;
use crate::graph::{Graph, Var};
use crate::tensor::{Parameters, Tensor};

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max)
}

/// Compare the tape gradient of a scalar function of one input tensor against
/// central differences over every coordinate. Returns the worst relative error.
pub fn check_gradient<F>(input: &Tensor, f: F) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph, Var) -> Result<Var, TensorError>,
{
    let mut g = Graph::new();
    let x = g.variable(input)?;
    let y = f(&mut g, x)?;
    g.backward(y)?;
    let analytic = g
        .grad(x)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; input.len()]);

    let eval = |t: &Tensor| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let x = g.variable(t)?;
        let y = f(&mut g, x)?;
        Ok(g.scalar(y))
    };
    let mut numeric = Vec::with_capacity(input.len());
    for i in 0..input.len() {
        let mut plus = input.clone();
        plus.values_mut()[i] += FD_STEP;
        let mut minus = input.clone();
        minus.values_mut()[i] -= FD_STEP;
        numeric.push((eval(&plus)? - eval(&minus)?) / (2.0 * FD_STEP));
    }
    Ok(max_relative_error(&analytic, &numeric))
}

/// Same check against named parameter coordinates `(path, flat index)`.
pub fn check_param_gradient<F>(
    params: &Parameters,
    coords: &[(String, usize)],
    f: F,
) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph, &Parameters) -> Result<Var, TensorError>,
{
    let mut g = Graph::new();
    let y = f(&mut g, params)?;
    g.backward(y)?;
    let grads = g.param_grads();

    let eval = |p: &Parameters| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let y = f(&mut g, p)?;
        Ok(g.scalar(y))
    };
    let mut worst: f64 = 0.0;
    for (name, idx) in coords {
        let analytic = grads.get(name).map_or(0.0, |v| v[*idx]);
        let mut plus = params.clone();
        plus.get_mut(name)
            .ok_or_else(|| TensorError::UnknownParameter(name.clone()))?
            .values_mut()[*idx] += FD_STEP;
        let mut minus = params.clone();
        minus.get_mut(name).expect("checked above").values_mut()[*idx] -= FD_STEP;
        let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(analytic, numeric));
    }
    Ok(worst)
}
