use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::{pow_derivatives, Scalar};

const NONE: usize = usize::MAX;

#[derive(Clone, Copy)]
struct Node {
    parents: [usize; 2],
    partials: [f64; 2],
}

/// Operation tape for reverse-mode accumulation.
///
/// Variables borrow the tape; constants created with [`Scalar::from_f64`]
/// are inactive and never recorded.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(n)),
        }
    }

    /// Registers an independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        let index = self.push(Node {
            parents: [NONE, NONE],
            partials: [0.0, 0.0],
        });
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

    fn push(&self, node: Node) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    /// Adjoints of every recorded node for the seed `Σ weight·output`.
    ///
    /// With several outputs this is a vector-Jacobian product in one sweep.
    pub fn adjoints(&self, seeds: &[(Var<'_>, f64)]) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0; nodes.len()];
        for (v, w) in seeds {
            if v.is_active() {
                adj[v.index] += w;
            }
        }
        for i in (0..nodes.len()).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let node = nodes[i];
            for k in 0..2 {
                let p = node.parents[k];
                if p != NONE {
                    adj[p] += a * node.partials[k];
                }
            }
        }
        adj
    }

    pub fn gradient(&self, output: Var<'_>) -> Vec<f64> {
        self.adjoints(&[(output, 1.0)])
    }
}

/// A value on a [`Tape`], or an inactive constant.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    index: usize,
    value: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var({}, #{})", self.value, self.index)
    }
}

impl<'t> Var<'t> {
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn is_active(&self) -> bool {
        self.tape.is_some()
    }

    fn unary(self, value: f64, d: f64) -> Self {
        match self.tape {
            None => Var {
                tape: None,
                index: NONE,
                value,
            },
            Some(tape) => Var {
                tape: Some(tape),
                index: tape.push(Node {
                    parents: [self.index, NONE],
                    partials: [d, 0.0],
                }),
                value,
            },
        }
    }

    fn binary(self, other: Self, value: f64, da: f64, db: f64) -> Self {
        let tape = self.tape.or(other.tape);
        match tape {
            None => Var {
                tape: None,
                index: NONE,
                value,
            },
            Some(tape) => {
                let pa = if self.is_active() { self.index } else { NONE };
                let pb = if other.is_active() { other.index } else { NONE };
                Var {
                    tape: Some(tape),
                    index: tape.push(Node {
                        parents: [pa, pb],
                        partials: [da, db],
                    }),
                    value,
                }
            }
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, self.value + rhs.value, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, self.value - rhs.value, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, self.value * rhs.value, rhs.value, self.value)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let q = self.value / rhs.value;
        self.binary(rhs, q, 1.0 / rhs.value, -q / rhs.value)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(-self.value, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Self;
    fn add(self, rhs: f64) -> Self {
        self.unary(self.value + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Self;
    fn sub(self, rhs: f64) -> Self {
        self.unary(self.value - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        self.unary(self.value * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Self;
    fn div(self, rhs: f64) -> Self {
        self.unary(self.value / rhs, 1.0 / rhs)
    }
}

impl<'t> Scalar for Var<'t> {
    fn from_f64(v: f64) -> Self {
        Var {
            tape: None,
            index: NONE,
            value: v,
        }
    }

    fn value(&self) -> f64 {
        self.value
    }

    fn exp(self) -> Self {
        let e = self.value.exp();
        self.unary(e, e)
    }

    fn ln(self) -> Self {
        self.unary(self.value.ln(), 1.0 / self.value)
    }

    fn powf(self, p: f64) -> Self {
        let (v, d1, _) = pow_derivatives(self.value, p);
        self.unary(v, d1)
    }
}
