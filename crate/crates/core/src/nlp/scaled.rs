use super::{OrderKey, Problem, Triplets};
use crate::error::Result;

/// Diagonal scaling: the solver works with `x̃ = x/var`, rows `row·c(x)`
/// and objective `objective·f(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Scaling {
    pub var: Vec<f64>,
    /// Equality rows followed by inequality rows.
    pub row: Vec<f64>,
    pub objective: f64,
}

impl Scaling {
    pub fn identity(n: usize, m_eq: usize, m_ineq: usize) -> Self {
        Scaling {
            var: vec![1.0; n],
            row: vec![1.0; m_eq + m_ineq],
            objective: 1.0,
        }
    }
}

/// A problem seen through a [`Scaling`].
pub(crate) struct ScaledProblem<'a> {
    inner: &'a dyn Problem,
    pub(crate) s: Scaling,
}

impl<'a> ScaledProblem<'a> {
    pub(crate) fn new(inner: &'a dyn Problem) -> Self {
        let s = inner.scaling();
        assert_eq!(s.var.len(), inner.num_vars(), "variable scaling length");
        assert_eq!(
            s.row.len(),
            inner.num_eq() + inner.num_ineq(),
            "row scaling length"
        );
        ScaledProblem { inner, s }
    }

    pub(crate) fn to_inner(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().zip(&self.s.var).map(|(x, d)| x * d).collect()
    }

    pub(crate) fn from_inner(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.s.var).map(|(x, d)| x / d).collect()
    }

    fn inner_y(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.s.row).map(|(y, r)| y * r).collect()
    }
}

impl Problem for ScaledProblem<'_> {
    fn num_vars(&self) -> usize {
        self.inner.num_vars()
    }

    fn num_eq(&self) -> usize {
        self.inner.num_eq()
    }

    fn num_ineq(&self) -> usize {
        self.inner.num_ineq()
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let (l, u) = self.inner.bounds();
        (self.from_inner(&l), self.from_inner(&u))
    }

    fn initial_point(&self) -> Vec<f64> {
        self.from_inner(&self.inner.initial_point())
    }

    fn objective(&self, x: &[f64]) -> Result<f64> {
        Ok(self.s.objective * self.inner.objective(&self.to_inner(x))?)
    }

    fn objective_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let g = self.inner.objective_gradient(&self.to_inner(x))?;
        Ok(g.iter()
            .zip(&self.s.var)
            .map(|(g, d)| g * d * self.s.objective)
            .collect())
    }

    fn constraints(&self, x: &[f64]) -> Result<Vec<f64>> {
        let c = self.inner.constraints(&self.to_inner(x))?;
        Ok(c.iter().zip(&self.s.row).map(|(c, r)| c * r).collect())
    }

    fn jacobian(&self, x: &[f64]) -> Result<Triplets> {
        let mut j = self.inner.jacobian(&self.to_inner(x))?;
        for (r, c, v) in j.iter_mut() {
            *v *= self.s.row[*r] * self.s.var[*c];
        }
        Ok(j)
    }

    fn lagrangian_hessian(&self, x: &[f64], sigma: f64, y: &[f64]) -> Result<Triplets> {
        let mut h = self.inner.lagrangian_hessian(
            &self.to_inner(x),
            sigma * self.s.objective,
            &self.inner_y(y),
        )?;
        for (i, j, v) in h.iter_mut() {
            *v *= self.s.var[*i] * self.s.var[*j];
        }
        Ok(h)
    }

    fn lagrangian_gradient(&self, x: &[f64], sigma: f64, y: &[f64]) -> Result<Vec<f64>> {
        let g = self.inner.lagrangian_gradient(
            &self.to_inner(x),
            sigma * self.s.objective,
            &self.inner_y(y),
        )?;
        Ok(g.iter().zip(&self.s.var).map(|(g, d)| g * d).collect())
    }

    fn var_keys(&self) -> Vec<OrderKey> {
        self.inner.var_keys()
    }

    fn row_keys(&self) -> Vec<OrderKey> {
        self.inner.row_keys()
    }
}
