use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar arithmetic shared by plain floats and the differentiable number
/// types. Model code written against `Real` can be evaluated as `f64`,
/// differentiated forward with [`Dual`](super::Dual), backward with
/// [`Var`](super::Var), or any nesting of the two.
pub trait Real:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn constant(c: f64) -> Self;

    /// The underlying `f64` value with all derivative information dropped.
    fn primal(self) -> f64;

    fn sqrt(self) -> Self;

    fn powi(self, n: i32) -> Self;

    fn zero() -> Self {
        Self::constant(0.0)
    }

    fn one() -> Self {
        Self::constant(1.0)
    }

    fn scale(self, c: f64) -> Self {
        self * Self::constant(c)
    }

    fn offset(self, c: f64) -> Self {
        self + Self::constant(c)
    }

    fn recip(self) -> Self {
        Self::one() / self
    }
}

impl Real for f64 {
    #[inline]
    fn constant(c: f64) -> Self {
        c
    }

    #[inline]
    fn primal(self) -> f64 {
        self
    }

    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }

    #[inline]
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }

    #[inline]
    fn scale(self, c: f64) -> Self {
        self * c
    }

    #[inline]
    fn offset(self, c: f64) -> Self {
        self + c
    }
}

/// Sum of a slice, left to right.
pub fn sum<S: Real>(xs: &[S]) -> S {
    xs.iter().fold(S::zero(), |acc, &x| acc + x)
}

pub fn dot<S: Real>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}
