use std::ops::{Add, Div, Mul, Neg, Sub};

use super::{pow_derivatives, Scalar};

/// Second-order forward number over `N` seed directions.
///
/// `H` must equal `N(N+1)/2`; the Hessian is stored as the packed upper
/// triangle, row-major.
#[derive(Clone, Copy, Debug)]
pub struct Taylor2<const N: usize, const H: usize> {
    pub val: f64,
    pub grad: [f64; N],
    pub hess: [f64; H],
}

#[inline]
fn packed<const N: usize>(i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    // Σ_{r<i} (N - r) + (j - i)
    i * N - i * i.saturating_sub(1) / 2 + (j - i)
}

impl<const N: usize, const H: usize> Taylor2<N, H> {
    const CHECK: () = assert!(H == N * (N + 1) / 2, "H must be N(N+1)/2");

    pub fn constant(val: f64) -> Self {
        #[allow(clippy::let_unit_value)]
        let _ = Self::CHECK;
        Taylor2 {
            val,
            grad: [0.0; N],
            hess: [0.0; H],
        }
    }

    /// Independent variable seeded along direction `k`.
    pub fn variable(val: f64, k: usize) -> Self {
        let mut t = Self::constant(val);
        t.grad[k] = 1.0;
        t
    }

    #[inline]
    pub fn index(i: usize, j: usize) -> usize {
        packed::<N>(i, j)
    }

    pub fn hess_at(&self, i: usize, j: usize) -> f64 {
        self.hess[Self::index(i, j)]
    }

    /// `φ(self)` given φ, φ' and φ'' at the current value.
    #[inline]
    fn chain(&self, v: f64, d1: f64, d2: f64) -> Self {
        let mut out = Self::constant(v);
        for i in 0..N {
            out.grad[i] = d1 * self.grad[i];
        }
        let mut k = 0;
        for i in 0..N {
            let gi = self.grad[i];
            for j in i..N {
                out.hess[k] = d1 * self.hess[k] + d2 * gi * self.grad[j];
                k += 1;
            }
        }
        out
    }
}

impl<const N: usize, const H: usize> Add for Taylor2<N, H> {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        self.val += rhs.val;
        for i in 0..N {
            self.grad[i] += rhs.grad[i];
        }
        for k in 0..H {
            self.hess[k] += rhs.hess[k];
        }
        self
    }
}

impl<const N: usize, const H: usize> Sub for Taylor2<N, H> {
    type Output = Self;
    fn sub(mut self, rhs: Self) -> Self {
        self.val -= rhs.val;
        for i in 0..N {
            self.grad[i] -= rhs.grad[i];
        }
        for k in 0..H {
            self.hess[k] -= rhs.hess[k];
        }
        self
    }
}

impl<const N: usize, const H: usize> Mul for Taylor2<N, H> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let mut out = Self::constant(self.val * rhs.val);
        for i in 0..N {
            out.grad[i] = self.val * rhs.grad[i] + rhs.val * self.grad[i];
        }
        let mut k = 0;
        for i in 0..N {
            let (ai, bi) = (self.grad[i], rhs.grad[i]);
            for j in i..N {
                out.hess[k] = self.val * rhs.hess[k]
                    + rhs.val * self.hess[k]
                    + ai * rhs.grad[j]
                    + bi * self.grad[j];
                k += 1;
            }
        }
        out
    }
}

impl<const N: usize, const H: usize> Div for Taylor2<N, H> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        self * rhs.recip()
    }
}

impl<const N: usize, const H: usize> Neg for Taylor2<N, H> {
    type Output = Self;
    fn neg(self) -> Self {
        self * -1.0
    }
}

impl<const N: usize, const H: usize> Add<f64> for Taylor2<N, H> {
    type Output = Self;
    fn add(mut self, rhs: f64) -> Self {
        self.val += rhs;
        self
    }
}

impl<const N: usize, const H: usize> Sub<f64> for Taylor2<N, H> {
    type Output = Self;
    fn sub(mut self, rhs: f64) -> Self {
        self.val -= rhs;
        self
    }
}

impl<const N: usize, const H: usize> Mul<f64> for Taylor2<N, H> {
    type Output = Self;
    fn mul(mut self, rhs: f64) -> Self {
        self.val *= rhs;
        for g in self.grad.iter_mut() {
            *g *= rhs;
        }
        for h in self.hess.iter_mut() {
            *h *= rhs;
        }
        self
    }
}

impl<const N: usize, const H: usize> Div<f64> for Taylor2<N, H> {
    type Output = Self;
    fn div(self, rhs: f64) -> Self {
        self * (1.0 / rhs)
    }
}

impl<const N: usize, const H: usize> Scalar for Taylor2<N, H> {
    fn from_f64(v: f64) -> Self {
        Self::constant(v)
    }

    fn value(&self) -> f64 {
        self.val
    }

    fn exp(self) -> Self {
        let e = self.val.exp();
        self.chain(e, e, e)
    }

    fn ln(self) -> Self {
        let x = self.val;
        self.chain(x.ln(), 1.0 / x, -1.0 / (x * x))
    }

    fn powf(self, p: f64) -> Self {
        let (v, d1, d2) = pow_derivatives(self.val, p);
        self.chain(v, d1, d2)
    }

    fn recip(self) -> Self {
        let x = self.val;
        self.chain(1.0 / x, -1.0 / (x * x), 2.0 / (x * x * x))
    }
}
