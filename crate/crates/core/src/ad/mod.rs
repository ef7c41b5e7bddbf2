//! Scalar abstraction used to evaluate the model dynamics with plain floats,
//! reverse-mode tape variables, or second-order forward numbers.
//!
//! All model equations are written once, generically over [`Scalar`]. The
//! solver obtains constraint Jacobians by reverse accumulation on a [`Tape`]
//! and Lagrangian Hessians from [`Taylor2`] forward propagation, so the two
//! derivative orders come from independent code paths.

mod reverse;
mod taylor;

pub use reverse::{Tape, Var};
pub use taylor::Taylor2;

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    /// A constant (derivative-free) value.
    fn from_f64(v: f64) -> Self;
    fn value(&self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    /// `self^p` for a constant exponent. Negative bases are allowed when `p`
    /// is integral.
    fn powf(self, p: f64) -> Self;

    fn log2(self) -> Self {
        self.ln() / std::f64::consts::LN_2
    }

    fn recip(self) -> Self {
        Self::from_f64(1.0) / self
    }

    /// `base^self` for a constant positive base.
    fn exp_base(self, base: f64) -> Self {
        (self * base.ln()).exp()
    }

    /// Branch selection by value; the derivative follows the selected branch.
    fn min(self, other: Self) -> Self {
        if self.value() <= other.value() {
            self
        } else {
            other
        }
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn powf(self, p: f64) -> Self {
        f64::powf(self, p)
    }
    fn log2(self) -> Self {
        f64::log2(self)
    }
}

/// Derivatives of `x^p` up to second order, computed with `powf` so that
/// integral exponents of negative bases stay finite.
pub(crate) fn pow_derivatives(x: f64, p: f64) -> (f64, f64, f64) {
    let v = x.powf(p);
    let d1 = if p == 0.0 { 0.0 } else { p * x.powf(p - 1.0) };
    let d2 = if p == 0.0 || p == 1.0 {
        0.0
    } else {
        p * (p - 1.0) * x.powf(p - 2.0)
    };
    (v, d1, d2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample<S: Scalar>(x: S, y: S) -> S {
        let a = (x * y + 2.0).ln() * x.powf(2.6);
        let b = (S::from_f64(1.0) - y).exp() / (x + 1.0);
        (a - b).min(S::from_f64(100.0)) + x.log2() * y.powf(2.0)
    }

    fn sample_f64(x: f64, y: f64) -> f64 {
        sample(x, y)
    }

    #[test]
    fn reverse_and_forward_agree_with_finite_differences() {
        let (x0, y0) = (0.7, 0.3);
        let h = 1e-6;
        let fd_x = (sample_f64(x0 + h, y0) - sample_f64(x0 - h, y0)) / (2.0 * h);
        let fd_y = (sample_f64(x0, y0 + h) - sample_f64(x0, y0 - h)) / (2.0 * h);

        let tape = Tape::new();
        let x = tape.var(x0);
        let y = tape.var(y0);
        let out = sample(x, y);
        let adj = tape.gradient(out);
        assert!((adj[x.index()] - fd_x).abs() < 1e-7);
        assert!((adj[y.index()] - fd_y).abs() < 1e-7);

        let tx = Taylor2::<2, 3>::variable(x0, 0);
        let ty = Taylor2::<2, 3>::variable(y0, 1);
        let t = sample(tx, ty);
        assert!((t.grad[0] - fd_x).abs() < 1e-7);
        assert!((t.grad[1] - fd_y).abs() < 1e-7);
        assert!((t.value() - sample_f64(x0, y0)).abs() < 1e-15);
    }

    #[test]
    fn second_derivatives_match_differenced_gradients() {
        let (x0, y0) = (0.7, 0.3);
        let h = 1e-5;
        let grad = |x: f64, y: f64| {
            let tape = Tape::new();
            let vx = tape.var(x);
            let vy = tape.var(y);
            let adj = tape.gradient(sample(vx, vy));
            [adj[vx.index()], adj[vy.index()]]
        };
        let gxp = grad(x0 + h, y0);
        let gxm = grad(x0 - h, y0);
        let gyp = grad(x0, y0 + h);
        let gym = grad(x0, y0 - h);
        let hxx = (gxp[0] - gxm[0]) / (2.0 * h);
        let hxy = (gyp[0] - gym[0]) / (2.0 * h);
        let hyy = (gyp[1] - gym[1]) / (2.0 * h);

        let t = sample(
            Taylor2::<2, 3>::variable(x0, 0),
            Taylor2::<2, 3>::variable(y0, 1),
        );
        assert!((t.hess_at(0, 0) - hxx).abs() < 1e-6, "{} {}", t.hess_at(0, 0), hxx);
        assert!((t.hess_at(0, 1) - hxy).abs() < 1e-6);
        assert!((t.hess_at(1, 0) - hxy).abs() < 1e-6);
        assert!((t.hess_at(1, 1) - hyy).abs() < 1e-6);
    }

    #[test]
    fn integral_power_of_negative_base_is_finite() {
        let t = Taylor2::<1, 1>::variable(-0.5, 0).powf(2.0);
        assert_eq!(t.value(), 0.25);
        assert_eq!(t.grad[0], -1.0);
        assert_eq!(t.hess_at(0, 0), 2.0);
    }
}
