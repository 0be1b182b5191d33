use std::cell::{Cell, RefCell};
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::Real;

const NO_PARENT: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node<T> {
    parents: [u32; 2],
    partials: [T; 2],
}

/// Records every operation on [`Var`]s so the gradient of one output can be
/// pulled back to all recorded inputs.
///
/// A tape is single-threaded; independent tapes may live on different
/// threads. Partial derivatives are stored as `T`, so a `Tape<Dual<f64>>`
/// yields Hessian-vector products from a single backward sweep.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    failure: Cell<Option<&'static str>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            failure: Cell::new(None),
        }
    }

    pub fn with_capacity(n: usize) -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(n)),
            failure: Cell::new(None),
        }
    }

    /// Registers an input.
    pub fn var(&self, value: T) -> Var<'_, T> {
        let index = self.push("input", value, [NO_PARENT; 2], [T::zero(); 2]);
        Var {
            tape: Some(self),
            index,
            value,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Name of the first operation that produced a non-finite value or
    /// partial derivative, if any.
    pub fn failure(&self) -> Option<&'static str> {
        self.failure.get()
    }

    fn push(&self, op: &'static str, value: T, parents: [u32; 2], partials: [T; 2]) -> u32 {
        if self.failure.get().is_none()
            && !(value.primal().is_finite()
                && partials[0].primal().is_finite()
                && partials[1].primal().is_finite())
        {
            self.failure.set(Some(op));
        }
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len() as u32;
        nodes.push(Node { parents, partials });
        index
    }

    /// d(output)/d(input) for each of `inputs`. Constants and variables from
    /// other tapes get a zero gradient.
    pub fn gradient(&self, output: Var<'_, T>, inputs: &[Var<'_, T>]) -> Vec<T> {
        let adjoints = self.adjoints(output);
        inputs
            .iter()
            .map(|v| match v.tape {
                Some(t) if std::ptr::eq(t, self) => adjoints[v.index as usize],
                _ => T::zero(),
            })
            .collect()
    }

    fn adjoints(&self, output: Var<'_, T>) -> Vec<T> {
        let nodes = self.nodes.borrow();
        let mut adj = vec![T::zero(); nodes.len()];
        let root = match output.tape {
            Some(t) if std::ptr::eq(t, self) => output.index as usize,
            _ => return adj,
        };
        adj[root] = T::one();
        for i in (0..=root).rev() {
            let node = &nodes[i];
            let a = adj[i];
            for k in 0..2 {
                let p = node.parents[k];
                if p != NO_PARENT {
                    adj[p as usize] = adj[p as usize] + node.partials[k] * a;
                }
            }
        }
        adj
    }
}

/// A scalar recorded on a [`Tape`]. Constants carry no tape.
#[derive(Clone, Copy)]
pub struct Var<'t, T> {
    tape: Option<&'t Tape<T>>,
    index: u32,
    value: T,
}

impl<T: fmt::Debug> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("index", &self.index)
            .field("value", &self.value)
            .finish()
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn value(&self) -> T {
        self.value
    }

    pub fn is_constant(&self) -> bool {
        self.tape.is_none()
    }

    fn unary(self, op: &'static str, value: T, partial: T) -> Self {
        match self.tape {
            None => Var {
                tape: None,
                index: NO_PARENT,
                value,
            },
            Some(tape) => Var {
                tape: Some(tape),
                index: tape.push(op, value, [self.index, NO_PARENT], [partial, T::zero()]),
                value,
            },
        }
    }

    fn binary(self, rhs: Self, op: &'static str, value: T, da: T, db: T) -> Self {
        match (self.tape, rhs.tape) {
            (None, None) => Var {
                tape: None,
                index: NO_PARENT,
                value,
            },
            (Some(tape), None) => Var {
                tape: Some(tape),
                index: tape.push(op, value, [self.index, NO_PARENT], [da, T::zero()]),
                value,
            },
            (None, Some(tape)) => Var {
                tape: Some(tape),
                index: tape.push(op, value, [rhs.index, NO_PARENT], [db, T::zero()]),
                value,
            },
            (Some(tape), Some(other)) => {
                assert!(
                    std::ptr::eq(tape, other),
                    "operands recorded on different tapes"
                );
                Var {
                    tape: Some(tape),
                    index: tape.push(op, value, [self.index, rhs.index], [da, db]),
                    value,
                }
            }
        }
    }
}

impl<T: Real> Add for Var<'_, T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, "add", self.value + rhs.value, T::one(), T::one())
    }
}

impl<T: Real> Sub for Var<'_, T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, "sub", self.value - rhs.value, T::one(), -T::one())
    }
}

impl<T: Real> Mul for Var<'_, T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, "mul", self.value * rhs.value, rhs.value, self.value)
    }
}

impl<T: Real> Div for Var<'_, T> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let inv = rhs.value.recip();
        let q = self.value * inv;
        self.binary(rhs, "div", q, inv, -q * inv)
    }
}

impl<T: Real> Neg for Var<'_, T> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary("neg", -self.value, -T::one())
    }
}

impl<T: Real> Real for Var<'_, T> {
    fn constant(c: f64) -> Self {
        Var {
            tape: None,
            index: NO_PARENT,
            value: T::constant(c),
        }
    }

    fn primal(self) -> f64 {
        self.value.primal()
    }

    fn sqrt(self) -> Self {
        let root = self.value.sqrt();
        self.unary("sqrt", root, root.scale(2.0).recip())
    }

    fn powi(self, n: i32) -> Self {
        match n {
            0 => Self::one(),
            1 => self,
            _ => self.unary(
                "powi",
                self.value.powi(n),
                self.value.powi(n - 1).scale(n as f64),
            ),
        }
    }

    fn scale(self, c: f64) -> Self {
        self.unary("scale", self.value.scale(c), T::constant(c))
    }

    fn offset(self, c: f64) -> Self {
        self.unary("offset", self.value.offset(c), T::one())
    }

    fn recip(self) -> Self {
        let inv = self.value.recip();
        self.unary("recip", inv, -(inv * inv))
    }
}
