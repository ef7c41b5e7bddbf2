//! Smooth constrained maximization.
//!
//! Problems have the form
//!
//! ```text
//! maximize f(x)  s.t.  g(x) = 0,  d(x) ≤ 0,  x_L ≤ x ≤ x_U
//! ```
//!
//! and are solved by a primal-dual interior-point method whose Newton
//! systems are factorized by a banded LU. Inequalities are turned into
//! equalities with nonnegative slacks inside the solver.
//!
//! Multiplier convention: with the Lagrangian `f + λᵀg − νᵀd + z_Lᵀ(x−x_L)
//! + z_Uᵀ(x_U−x)`, a KKT point satisfies `∇f + Jᵀλ − J_dᵀν + z_L − z_U = 0`
//! with `ν, z_L, z_U ≥ 0`.

mod band;
mod check;
mod ipm;
mod kkt;
mod scaled;

pub use band::BandLu;
pub use check::{check_gradient, check_gradient_with, evaluate, Evaluation};
pub use ipm::solve;
pub use kkt::{kkt_residuals, KktResiduals};
pub use scaled::Scaling;

use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Sparse matrix entries `(row, col, value)`; duplicates are summed.
pub type Triplets = Vec<(usize, usize, f64)>;

/// Position of an unknown in the banded Newton system. Unknowns are sorted
/// by key; variables use `kind = 0`, constraint rows `kind = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OrderKey {
    pub stage: usize,
    pub kind: u8,
    pub index: usize,
}

impl OrderKey {
    pub fn var(stage: usize, index: usize) -> Self {
        OrderKey {
            stage,
            kind: 0,
            index,
        }
    }

    pub fn row(stage: usize, index: usize) -> Self {
        OrderKey {
            stage,
            kind: 1,
            index,
        }
    }
}

pub trait Problem {
    fn num_vars(&self) -> usize;
    fn num_eq(&self) -> usize;
    fn num_ineq(&self) -> usize;

    /// Lower and upper bounds; use infinities for free components.
    fn bounds(&self) -> (Vec<f64>, Vec<f64>);

    fn initial_point(&self) -> Vec<f64>;

    fn objective(&self, x: &[f64]) -> Result<f64>;

    fn objective_gradient(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// Equality residuals followed by inequality values.
    fn constraints(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// Jacobian of [`Problem::constraints`].
    fn jacobian(&self, x: &[f64]) -> Result<Triplets>;

    /// Lower triangle (`row ≥ col`) of `∇²(σ f + Σ y_i c_i)`.
    fn lagrangian_hessian(&self, x: &[f64], sigma: f64, y: &[f64]) -> Result<Triplets>;

    /// `σ∇f + Jᵀy`. The default goes through [`Problem::jacobian`];
    /// implementations may provide an independent path.
    fn lagrangian_gradient(&self, x: &[f64], sigma: f64, y: &[f64]) -> Result<Vec<f64>> {
        let mut g = self.objective_gradient(x)?;
        for v in g.iter_mut() {
            *v *= sigma;
        }
        for (r, c, v) in self.jacobian(x)? {
            g[c] += v * y[r];
        }
        Ok(g)
    }

    fn var_keys(&self) -> Vec<OrderKey> {
        (0..self.num_vars()).map(|i| OrderKey::var(0, i)).collect()
    }

    /// Keys of the constraint rows (equalities then inequalities).
    fn row_keys(&self) -> Vec<OrderKey> {
        (0..self.num_eq() + self.num_ineq())
            .map(|r| OrderKey::row(0, r))
            .collect()
    }

    fn scaling(&self) -> Scaling {
        Scaling::identity(self.num_vars(), self.num_eq(), self.num_ineq())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Status {
    Optimal,
    Infeasible,
    IterationLimit,
    NumericFailure,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Status::Optimal => "optimal",
            Status::Infeasible => "infeasible",
            Status::IterationLimit => "iteration_limit",
            Status::NumericFailure => "numeric_failure",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Scaled stationarity tolerance.
    pub opt_tol: f64,
    /// Scaled constraint violation tolerance.
    pub feas_tol: f64,
    pub max_iter: usize,
    pub mu_init: f64,
    /// Barrier parameter for warm starts.
    pub warm_mu_init: f64,
    pub mu_linear_decrease: f64,
    pub mu_superlinear_power: f64,
    pub barrier_tol_factor: f64,
    /// Relative push of the starting point into the bounds (cold starts).
    pub bound_push: f64,
    /// Iterations without progress in the restoration phase before the
    /// problem is declared infeasible.
    pub stall_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            opt_tol: 1e-6,
            feas_tol: 1e-8,
            max_iter: 500,
            mu_init: 0.1,
            warm_mu_init: 1e-6,
            mu_linear_decrease: 0.2,
            mu_superlinear_power: 1.5,
            barrier_tol_factor: 10.0,
            bound_push: 1e-2,
            stall_iterations: 20,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.opt_tol > 0.0 && self.feas_tol > 0.0) {
            return Err(crate::Error::Options("tolerances must be positive".into()));
        }
        if !(self.mu_init > 0.0 && self.warm_mu_init > 0.0) {
            return Err(crate::Error::Options("initial barrier must be positive".into()));
        }
        Ok(())
    }
}

/// Primal-dual starting point in the caller's (unscaled, max-form) units.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WarmStart {
    pub x: Vec<f64>,
    pub eq_multipliers: Vec<f64>,
    pub ineq_multipliers: Vec<f64>,
    pub z_lower: Vec<f64>,
    pub z_upper: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Phase {
    Main,
    Restoration,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub merit: f64,
    pub feas: f64,
    pub opt: f64,
    pub step_size: f64,
    pub mu: f64,
    /// Number of filter entries.
    pub filter: usize,
    pub phase: Phase,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub restorations: usize,
    /// Scaled stationarity, normalized as in the termination test.
    pub stationarity: f64,
    /// Scaled max-norm constraint violation.
    pub feasibility: f64,
    pub complementarity: f64,
    pub final_mu: f64,
    pub message: String,
    pub log: Vec<IterationRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    pub status: Status,
    pub x: Vec<f64>,
    pub objective: f64,
    /// λ for equality rows.
    pub eq_multipliers: Vec<f64>,
    /// ν ≥ 0 for inequality rows.
    pub ineq_multipliers: Vec<f64>,
    pub z_lower: Vec<f64>,
    pub z_upper: Vec<f64>,
    pub diagnostics: Diagnostics,
}

impl SolveResult {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }

    pub fn warm_start(&self) -> WarmStart {
        WarmStart {
            x: self.x.clone(),
            eq_multipliers: self.eq_multipliers.clone(),
            ineq_multipliers: self.ineq_multipliers.clone(),
            z_lower: self.z_lower.clone(),
            z_upper: self.z_upper.clone(),
        }
    }

    /// Iteration log as CSV.
    pub fn iterations_csv(&self) -> String {
        let mut s = String::from("iter,merit,feas,opt,step_size,mu,filter,phase\n");
        for r in &self.diagnostics.log {
            let phase = match r.phase {
                Phase::Main => "main",
                Phase::Restoration => "restoration",
            };
            let _ = writeln!(
                s,
                "{},{:e},{:e},{:e},{:e},{:e},{},{}",
                r.iter, r.merit, r.feas, r.opt, r.step_size, r.mu, r.filter, phase
            );
        }
        s
    }
}

pub(crate) fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub(crate) fn norm_1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
