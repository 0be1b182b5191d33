use std::ops::{Add, Div, Mul, Neg, Sub};

use super::Real;

/// Forward-mode dual number `re + eps·ε` with `ε² = 0`.
///
/// The components are themselves [`Real`], so `Dual<Var<_>>` differentiates
/// forward through a computation that is being recorded for reverse mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<S> {
    pub re: S,
    pub eps: S,
}

impl<S: Real> Dual<S> {
    pub fn new(re: S, eps: S) -> Self {
        Dual { re, eps }
    }

    /// A seeded input: value `x`, unit tangent.
    pub fn variable(x: S) -> Self {
        Dual {
            re: x,
            eps: S::one(),
        }
    }

    /// Lifts a value with zero tangent.
    pub fn lift(x: S) -> Self {
        Dual {
            re: x,
            eps: S::zero(),
        }
    }
}

impl<S: Real> Add for Dual<S> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        Dual::new(self.re + rhs.re, self.eps + rhs.eps)
    }
}

impl<S: Real> Sub for Dual<S> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        Dual::new(self.re - rhs.re, self.eps - rhs.eps)
    }
}

impl<S: Real> Mul for Dual<S> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        Dual::new(self.re * rhs.re, self.eps * rhs.re + self.re * rhs.eps)
    }
}

impl<S: Real> Div for Dual<S> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let q = self.re / rhs.re;
        Dual::new(q, (self.eps - q * rhs.eps) / rhs.re)
    }
}

impl<S: Real> Neg for Dual<S> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Dual::new(-self.re, -self.eps)
    }
}

impl<S: Real> Real for Dual<S> {
    fn constant(c: f64) -> Self {
        Dual::lift(S::constant(c))
    }

    fn primal(self) -> f64 {
        self.re.primal()
    }

    fn sqrt(self) -> Self {
        let root = self.re.sqrt();
        Dual::new(root, self.eps / root.scale(2.0))
    }

    fn powi(self, n: i32) -> Self {
        match n {
            0 => Self::one(),
            1 => self,
            _ => Dual::new(
                self.re.powi(n),
                self.eps * self.re.powi(n - 1).scale(n as f64),
            ),
        }
    }

    fn scale(self, c: f64) -> Self {
        Dual::new(self.re.scale(c), self.eps.scale(c))
    }

    fn offset(self, c: f64) -> Self {
        Dual::new(self.re.offset(c), self.eps)
    }
}
