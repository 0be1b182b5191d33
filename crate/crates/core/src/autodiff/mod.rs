//! Differentiation engine.
//!
//! Two number types implement [`Real`]:
//!
//! - [`Dual`] carries a single forward tangent.
//! - [`Var`] records onto a [`Tape`] for reverse-mode gradients.
//!
//! Because both are generic over their component type they nest. A
//! `Dual<Var<f64>>` computes an input derivative in forward mode while the
//! tape records everything, so a loss that contains forces `-dV/dq` can
//! itself be differentiated with respect to network parameters
//! ([`nested_grad`]). A `Var<Dual<f64>>` sweeps a tape whose partials are
//! dual numbers and yields Hessian-vector products ([`hessian_vector`]).

mod dual;
mod real;
mod tape;

pub use dual::Dual;
pub use real::{dot, sum, Real};
pub use tape::{Tape, Var};

use crate::error::{Error, Result};

/// A scalar function that can be evaluated at any [`Real`] type.
///
/// Closures cannot be generic over their argument type, so differentiable
/// functions are written as small structs implementing this trait.
pub trait ScalarFn {
    fn eval<S: Real>(&self, x: &[S]) -> S;
}

impl<F: ScalarFn + ?Sized> ScalarFn for &F {
    fn eval<S: Real>(&self, x: &[S]) -> S {
        (**self).eval(x)
    }
}

/// Value and gradient of `f` at `x` by one reverse sweep. `T` may itself be
/// a differentiable type.
pub fn value_and_grad<T: Real, F: ScalarFn + ?Sized>(f: &F, x: &[T]) -> Result<(T, Vec<T>)> {
    let tape = Tape::<T>::new();
    let inputs: Vec<Var<'_, T>> = x.iter().map(|&xi| tape.var(xi)).collect();
    let y = f.eval(&inputs);
    if let Some(op) = tape.failure() {
        return Err(Error::numerical(op));
    }
    if !y.primal().is_finite() {
        return Err(Error::numerical("output"));
    }
    let g = tape.gradient(y, &inputs);
    if g.iter().any(|gi| !gi.primal().is_finite()) {
        return Err(Error::numerical("backward"));
    }
    Ok((y.value(), g))
}

/// Gradient of `f` at `x`.
pub fn grad<F: ScalarFn + ?Sized>(f: &F, x: &[f64]) -> Result<Vec<f64>> {
    value_and_grad(f, x).map(|(_, g)| g)
}

/// Gradient with respect to `params` of a function that internally takes
/// input derivatives (through [`derivative`] or [`forward_gradient`]).
///
/// Forward mode runs inside, reverse mode outside, so every path through
/// the inner derivatives reaches the parameters.
pub fn nested_grad<F: ScalarFn + ?Sized>(g: &F, params: &[f64]) -> Result<Vec<f64>> {
    grad(g, params)
}

/// `f'(x)` in forward mode. Works at any `S`, including tape variables.
pub fn derivative<S: Real>(f: impl Fn(Dual<S>) -> Dual<S>, x: S) -> S {
    f(Dual::variable(x)).eps
}

/// Full gradient in forward mode, one pass per input.
pub fn forward_gradient<S: Real>(f: impl Fn(&[Dual<S>]) -> Dual<S>, x: &[S]) -> Vec<S> {
    let mut seeded: Vec<Dual<S>> = x.iter().map(|&xi| Dual::lift(xi)).collect();
    (0..x.len())
        .map(|k| {
            seeded[k].eps = S::one();
            let d = f(&seeded).eps;
            seeded[k].eps = S::zero();
            d
        })
        .collect()
}

/// Gradient of `f` at `x` together with the Hessian-vector product `H·v`.
pub fn hessian_vector<F: ScalarFn + ?Sized>(
    f: &F,
    x: &[f64],
    v: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.len() != v.len() {
        return Err(Error::contract(format!(
            "hessian_vector: point has {} entries, direction {}",
            x.len(),
            v.len()
        )));
    }
    let seeded: Vec<Dual<f64>> = x.iter().zip(v).map(|(&xi, &vi)| Dual::new(xi, vi)).collect();
    let (_, g) = value_and_grad(f, &seeded)?;
    Ok((g.iter().map(|d| d.re).collect(), g.iter().map(|d| d.eps).collect()))
}

/// Dense Hessian, one forward-over-reverse pass per column.
pub fn hessian<F: ScalarFn + ?Sized>(f: &F, x: &[f64]) -> Result<Vec<Vec<f64>>> {
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    let mut dir = vec![0.0; n];
    for k in 0..n {
        dir[k] = 1.0;
        cols.push(hessian_vector(f, x, &dir)?.1);
        dir[k] = 0.0;
    }
    // cols[k][i] = H[i][k]
    Ok((0..n).map(|i| (0..n).map(|k| cols[k][i]).collect()).collect())
}

/// Central-difference approximation of the gradient. Test oracle only.
pub fn finite_difference_gradient(
    f: impl Fn(&[f64]) -> f64,
    x: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::contract(format!("finite difference step must be positive, got {h}")));
    }
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        probe[k] = x[k] + h;
        let up = f(&probe);
        probe[k] = x[k] - h;
        let down = f(&probe);
        probe[k] = x[k];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::numerical("finite difference evaluation"));
        }
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Smooth softplus-like activation `(x + sqrt(x² + 4)) / 2`.
pub fn squareplus<S: Real>(x: S) -> S {
    (x + (x * x).offset(4.0).sqrt()).scale(0.5)
}
