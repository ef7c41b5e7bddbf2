//! KKT audit that only uses [`Problem::constraints`] and
//! [`Problem::lagrangian_gradient`], independent of the solver internals.

use super::{Problem, SolveResult};
use crate::error::Result;

const S_MAX: f64 = 100.0;

/// Scaled KKT residuals of a candidate solution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KktResiduals {
    /// Max-norm of the scaled Lagrangian gradient, normalized by multiplier size.
    pub stationarity: f64,
    /// Max scaled equality residual or inequality excess.
    pub feasibility: f64,
    /// Max scaled product of a multiplier with its constraint slack.
    pub complementarity: f64,
    /// Most negative inequality or bound multiplier (0 when none).
    pub sign_violation: f64,
}

impl KktResiduals {
    pub fn passes(&self, opt_tol: f64, feas_tol: f64) -> bool {
        self.stationarity <= opt_tol
            && self.feasibility <= feas_tol
            && self.complementarity <= opt_tol
            && self.sign_violation <= 0.0
    }
}

pub fn kkt_residuals(problem: &dyn Problem, r: &SolveResult) -> Result<KktResiduals> {
    let s = problem.scaling();
    let (n, me, mi) = (problem.num_vars(), problem.num_eq(), problem.num_ineq());
    let x = &r.x;
    let (lo, hi) = problem.bounds();

    let mut y = r.eq_multipliers.clone();
    y.extend(r.ineq_multipliers.iter().map(|v| -v));
    let g = problem.lagrangian_gradient(x, 1.0, &y)?;
    let c = problem.constraints(x)?;

    let mut scaled_mult = 0.0;
    let mut count = me + mi;
    for (k, yk) in y.iter().enumerate() {
        scaled_mult += (yk * s.objective / s.row[k]).abs();
    }
    let mut stat = 0.0f64;
    let mut compl = 0.0f64;
    let mut sign = 0.0f64;
    for i in 0..n {
        let zl = if lo[i].is_finite() { r.z_lower[i] } else { 0.0 };
        let zu = if hi[i].is_finite() { r.z_upper[i] } else { 0.0 };
        let zs = s.objective * s.var[i];
        if lo[i].is_finite() {
            count += 1;
            scaled_mult += (zl * zs).abs();
            compl = compl.max((zl * zs * (x[i] - lo[i]) / s.var[i]).abs());
            sign = sign.max(-zl);
        }
        if hi[i].is_finite() {
            count += 1;
            scaled_mult += (zu * zs).abs();
            compl = compl.max((zu * zs * (hi[i] - x[i]) / s.var[i]).abs());
            sign = sign.max(-zu);
        }
        stat = stat.max(((g[i] + zl - zu) * zs).abs());
    }
    let mut feas = 0.0f64;
    for k in 0..me {
        feas = feas.max((c[k] * s.row[k]).abs());
    }
    for k in me..me + mi {
        let nu = r.ineq_multipliers[k - me];
        feas = feas.max(c[k] * s.row[k]);
        compl = compl.max((nu * s.objective * c[k]).abs());
        sign = sign.max(-nu);
    }
    let s_d = S_MAX.max(scaled_mult / count.max(1) as f64) / S_MAX;
    Ok(KktResiduals {
        stationarity: stat / s_d,
        feasibility: feas,
        complementarity: compl,
        sign_violation: sign,
    })
}
