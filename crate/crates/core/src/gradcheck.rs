//! Central-difference gradient checking against the tape.

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::Result;
use crate::ops;
use crate::tensor::Tensor;

/// `|a - b| / max(|a|, |b|, 1e-8)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn eval_scalar<F>(f: &F, x: Tensor) -> f64
where
    F: for<'t> Fn(Var<'t>) -> Var<'t>,
{
    let tape = Tape::new();
    let v = tape.constant(x);
    f(v).value().item()
}

/// `sum(y * weights)`: a scalar whose gradient with respect to `y` is
/// `weights`, handy for checking ops with non-scalar outputs.
pub fn project<'t>(y: Var<'t>, weights: &Tensor) -> Var<'t> {
    let w = y.tape().constant(weights.clone());
    ops::sum(ops::mul(y, w).expect("project: weights must match the output shape"))
}

/// Max relative error between the tape gradient of the scalar function `f`
/// at `x` and central differences `(f(x + eps e_i) - f(x - eps e_i)) / 2eps`,
/// over every coordinate of `x`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> f64
where
    F: for<'t> Fn(Var<'t>) -> Var<'t>,
{
    let all: Vec<usize> = (0..x.len()).collect();
    grad_check_at(f, x, eps, &all)
}

/// [`grad_check`] restricted to the listed coordinates.
pub fn grad_check_at<F>(f: F, x: &Tensor, eps: f64, coords: &[usize]) -> f64
where
    F: for<'t> Fn(Var<'t>) -> Var<'t>,
{
    let analytic = {
        let tape = Tape::new();
        let v = tape.leaf(x.clone());
        let out = f(v);
        tape.backward(out)
            .expect("grad_check needs a scalar function")
            .wrt(v)
    };
    let mut worst = 0.0f64;
    for &i in coords {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval_scalar(&f, plus) - eval_scalar(&f, minus)) / (2.0 * eps);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    worst
}

/// Gradient check over selected `(parameter, flat index)` coordinates of a
/// parameter store embedded in some larger `state` (e.g. a model).
pub fn grad_check_params<S, G, L>(
    state: &mut S,
    store: G,
    coords: &[(ParamId, usize)],
    eps: f64,
    mut loss: L,
) -> Result<f64>
where
    G: Fn(&mut S) -> &mut ParamStore,
    L: for<'t> FnMut(&'t Tape, &mut S) -> Result<Var<'t>>,
{
    store(state).zero_grad();
    {
        let tape = Tape::new();
        let out = loss(&tape, state)?;
        tape.backward_into(out, store(state))?;
    }
    let analytic: Vec<f64> = coords
        .iter()
        .map(|&(id, i)| store(state).grad(id).data()[i])
        .collect();

    let mut eval = |state: &mut S| -> Result<f64> {
        let tape = Tape::new();
        Ok(loss(&tape, state)?.value().item())
    };
    let mut worst = 0.0f64;
    for (&(id, i), &a) in coords.iter().zip(&analytic) {
        let orig = store(state).value(id).data()[i];
        store(state).value_mut(id).data_mut()[i] = orig + eps;
        let up = eval(state)?;
        store(state).value_mut(id).data_mut()[i] = orig - eps;
        let down = eval(state)?;
        store(state).value_mut(id).data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let e = relative_error(a, numeric);
        if e > 1e-4 {
            log::debug!(
                "gradcheck {} [{i}]: analytic {a:e} numeric {numeric:e}",
                store(state).get(id).name
            );
        }
        worst = worst.max(e);
    }
    store(state).zero_grad();
    Ok(worst)
}
