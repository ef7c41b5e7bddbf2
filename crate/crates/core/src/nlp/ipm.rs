//! Primal-dual interior-point method with a filter line search.
//!
//! Internally the problem is `min φ(v) = −f(x)` over `v = (x, t)` subject to
//! `g(x) = 0`, `d(x) + t = 0`, bounds on `x` and `t ≥ 0`.

use super::band::BandLu;
use super::scaled::ScaledProblem;
use super::{
    dot, norm_1, norm_inf, Diagnostics, IterationRecord, OrderKey, Phase, Problem, SolveResult,
    SolverOptions, Status, Triplets, WarmStart,
};
use crate::error::{Error, Result};

const S_MAX: f64 = 100.0;
const KAPPA_SIGMA: f64 = 1e10;
const ARMIJO: f64 = 1e-4;
const TAU_MIN: f64 = 0.99;
const CURVATURE_MIN: f64 = 1e-10;
const ALPHA_MIN: f64 = 1e-12;
const GAMMA_THETA: f64 = 1e-5;
const GAMMA_PHI: f64 = 1e-8;
const GAMMA_ALPHA: f64 = 0.05;
const S_THETA: f64 = 1.1;
const S_PHI: f64 = 2.3;
const ETA_PHI: f64 = 1e-4;
const SOC_MAX: usize = 4;
const KAPPA_SOC: f64 = 0.99;
const KAPPA_RESTO: f64 = 0.9;
const MULTIPLIER_LS_MAX: f64 = 1e3;
const WARM_BOUND_PUSH: f64 = 1e-9;

/// Solves `problem` (maximization) from its initial point or a warm start.
pub fn solve(
    problem: &dyn Problem,
    opts: &SolverOptions,
    warm: Option<&WarmStart>,
) -> Result<SolveResult> {
    opts.validate()?;
    let sp = ScaledProblem::new(problem);
    let mut ipm = Ipm::new(&sp, opts);
    let start = match warm {
        Some(w) => ipm.warm_iterate(w)?,
        None => ipm.cold_iterate(),
    };
    let outcome = ipm.run(start);
    Ok(ipm.finish(outcome))
}

#[derive(Clone)]
struct Iterate {
    v: Vec<f64>,
    y: Vec<f64>,
    zl: Vec<f64>,
    zu: Vec<f64>,
    f: f64,
    c: Vec<f64>,
}

struct Outcome {
    status: Status,
    it: Option<Iterate>,
    message: String,
}

struct Derivs {
    grad_phi: Vec<f64>,
    jac: Triplets,
}

struct Direction {
    dv: Vec<f64>,
    dy: Vec<f64>,
    lu: BandLu,
    rhs_x: Vec<f64>,
}

struct Errors {
    total: f64,
    stationarity: f64,
    feasibility: f64,
    complementarity: f64,
}

struct Ipm<'a> {
    p: &'a ScaledProblem<'a>,
    opts: &'a SolverOptions,
    nx: usize,
    me: usize,
    n: usize,
    m: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    /// Band position of unknown `u` (variables `0..n`, rows `n..n+m`).
    pos: Vec<usize>,
    mu: f64,
    tau: f64,
    filter: Vec<(f64, f64)>,
    theta_max: f64,
    theta_min: f64,
    delta_w_last: f64,
    iter: usize,
    restorations: usize,
    log: Vec<IterationRecord>,
    last_errors: (f64, f64, f64),
}

fn ftb(s: &[f64], ds: &[f64], tau: f64) -> f64 {
    let mut a = 1.0f64;
    for (si, di) in s.iter().zip(ds) {
        if *di < 0.0 {
            a = a.min(-tau * si / di);
        }
    }
    a
}

impl<'a> Ipm<'a> {
    fn new(p: &'a ScaledProblem<'a>, opts: &'a SolverOptions) -> Self {
        let nx = p.num_vars();
        let me = p.num_eq();
        let mi = p.num_ineq();
        let (n, m) = (nx + mi, me + mi);
        let (mut lo, mut hi) = p.bounds();
        lo.extend(std::iter::repeat(0.0).take(mi));
        hi.extend(std::iter::repeat(f64::INFINITY).take(mi));

        let var_keys = p.var_keys();
        let row_keys = p.row_keys();
        assert_eq!(var_keys.len(), nx, "variable key count");
        assert_eq!(row_keys.len(), m, "row key count");
        let mut keys: Vec<(OrderKey, usize)> = Vec::with_capacity(n + m);
        for (i, k) in var_keys.iter().enumerate() {
            keys.push((*k, i));
        }
        for r in 0..mi {
            let rk = row_keys[me + r];
            keys.push((OrderKey::var(rk.stage, usize::MAX - mi + r), nx + r));
        }
        for (r, k) in row_keys.iter().enumerate() {
            keys.push((*k, n + r));
        }
        keys.sort();
        let mut pos = vec![0; n + m];
        for (p, (_, u)) in keys.iter().enumerate() {
            pos[*u] = p;
        }

        Ipm {
            p,
            opts,
            nx,
            me,
            n,
            m,
            lo,
            hi,
            pos,
            mu: opts.mu_init,
            tau: TAU_MIN.max(1.0 - opts.mu_init),
            filter: Vec::new(),
            theta_max: f64::INFINITY,
            theta_min: 0.0,
            delta_w_last: 0.0,
            iter: 0,
            restorations: 0,
            log: Vec::new(),
            last_errors: (f64::NAN, f64::NAN, f64::NAN),
        }
    }

    fn mu_min(&self) -> f64 {
        self.opts.opt_tol.min(self.opts.feas_tol * 100.0) / 10.0
    }

    // ---- evaluation -------------------------------------------------------

    fn eval(&self, v: &[f64]) -> Result<(f64, Vec<f64>)> {
        let x = &v[..self.nx];
        let f = self.p.objective(x)?;
        let mut c = self.p.constraints(x)?;
        for r in 0..self.n - self.nx {
            c[self.me + r] += v[self.nx + r];
        }
        if !f.is_finite() {
            return Err(Error::domain("objective", "non-finite value"));
        }
        if let Some(k) = c.iter().position(|c| !c.is_finite()) {
            return Err(Error::domain("constraints", format!("row {k} is not finite")));
        }
        Ok((f, c))
    }

    fn derivs(&self, v: &[f64]) -> Result<Derivs> {
        let x = &v[..self.nx];
        let mut grad_phi: Vec<f64> = self.p.objective_gradient(x)?.iter().map(|g| -g).collect();
        grad_phi.extend(std::iter::repeat(0.0).take(self.n - self.nx));
        let mut jac = self.p.jacobian(x)?;
        for r in 0..self.n - self.nx {
            jac.push((self.me + r, self.nx + r, 1.0));
        }
        if grad_phi.iter().any(|g| !g.is_finite()) || jac.iter().any(|e| !e.2.is_finite()) {
            return Err(Error::domain("derivatives", "non-finite value"));
        }
        Ok(Derivs { grad_phi, jac })
    }

    fn hessian(&self, v: &[f64], y: &[f64]) -> Result<Triplets> {
        let h = self.p.lagrangian_hessian(&v[..self.nx], -1.0, y)?;
        if h.iter().any(|e| !e.2.is_finite()) {
            return Err(Error::domain("hessian", "non-finite value"));
        }
        Ok(h)
    }

    fn jt(&self, jac: &Triplets, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for &(r, c, v) in jac {
            out[c] += v * y[r];
        }
        out
    }

    fn hv(&self, h: &Triplets, dv: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for &(i, j, v) in h {
            out[i] += v * dv[j];
            if i != j {
                out[j] += v * dv[i];
            }
        }
        out
    }

    fn slacks(&self, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let sl = (0..self.n)
            .map(|i| if self.lo[i].is_finite() { v[i] - self.lo[i] } else { f64::INFINITY })
            .collect();
        let su = (0..self.n)
            .map(|i| if self.hi[i].is_finite() { self.hi[i] - v[i] } else { f64::INFINITY })
            .collect();
        (sl, su)
    }

    fn barrier(&self, v: &[f64], mu: f64) -> f64 {
        let mut b = 0.0;
        for i in 0..self.n {
            if self.lo[i].is_finite() {
                b -= mu * (v[i] - self.lo[i]).ln();
            }
            if self.hi[i].is_finite() {
                b -= mu * (self.hi[i] - v[i]).ln();
            }
        }
        b
    }

    /// Barrier objective φ_μ.
    fn merit(&self, v: &[f64], f: f64) -> f64 {
        -f + self.barrier(v, self.mu)
    }

    // ---- linear algebra ---------------------------------------------------

    /// Assembles `[H + diag(dx), Jᵀ; J, −dc·I]` in band order.
    fn assemble(&self, h: Option<&Triplets>, diag_x: &[f64], jac: &Triplets, dc: f64) -> BandLu {
        let mut bw = 0usize;
        for &(r, c, _) in jac {
            bw = bw.max(self.pos[self.n + r].abs_diff(self.pos[c]));
        }
        if let Some(h) = h {
            for &(i, j, _) in h {
                bw = bw.max(self.pos[i].abs_diff(self.pos[j]));
            }
        }
        let mut lu = BandLu::new(self.n + self.m, bw, bw);
        if let Some(h) = h {
            for &(i, j, v) in h {
                let (pi, pj) = (self.pos[i], self.pos[j]);
                lu.add(pi, pj, v);
                if i != j {
                    lu.add(pj, pi, v);
                }
            }
        }
        for (i, d) in diag_x.iter().enumerate() {
            lu.add(self.pos[i], self.pos[i], *d);
        }
        for &(r, c, v) in jac {
            let (pr, pc) = (self.pos[self.n + r], self.pos[c]);
            lu.add(pr, pc, v);
            lu.add(pc, pr, v);
        }
        for r in 0..self.m {
            let pr = self.pos[self.n + r];
            lu.add(pr, pr, -dc);
        }
        lu
    }

    fn solve_system(&self, lu: &BandLu, rhs_x: &[f64], rhs_c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut b = vec![0.0; self.n + self.m];
        for i in 0..self.n {
            b[self.pos[i]] = rhs_x[i];
        }
        for r in 0..self.m {
            b[self.pos[self.n + r]] = rhs_c[r];
        }
        lu.solve(&mut b);
        let dx = (0..self.n).map(|i| b[self.pos[i]]).collect();
        let dy = (0..self.m).map(|r| b[self.pos[self.n + r]]).collect();
        (dx, dy)
    }

    /// Least-squares equality multipliers for the current bound multipliers.
    fn ls_multipliers(&self, d: &Derivs, zl: &[f64], zu: &[f64]) -> Vec<f64> {
        if self.m == 0 {
            return Vec::new();
        }
        let rhs_x: Vec<f64> = (0..self.n).map(|i| -(d.grad_phi[i] - zl[i] + zu[i])).collect();
        let rhs_c = vec![0.0; self.m];
        for dc in [0.0, 1e-8] {
            let mut lu = self.assemble(None, &vec![1.0; self.n], &d.jac, dc);
            if lu.factor().is_ok() {
                let (_, y) = self.solve_system(&lu, &rhs_x, &rhs_c);
                if y.iter().all(|v| v.is_finite()) && norm_inf(&y) <= MULTIPLIER_LS_MAX {
                    return y;
                }
                break;
            }
        }
        vec![0.0; self.m]
    }

    // ---- starting points --------------------------------------------------

    fn push_into_bounds(&self, v: &mut [f64], push: f64) {
        for i in 0..self.n {
            let (l, u) = (self.lo[i], self.hi[i]);
            if l.is_finite() && u.is_finite() {
                let gap = u - l;
                let pl = (push * l.abs().max(1.0)).min(0.5 * push * gap.max(0.0)).max(0.0);
                let pu = (push * u.abs().max(1.0)).min(0.5 * push * gap.max(0.0)).max(0.0);
                let pl = if gap > 0.0 { pl.max(gap * 1e-14) } else { pl };
                let pu = if gap > 0.0 { pu.max(gap * 1e-14) } else { pu };
                if gap <= 0.0 {
                    v[i] = 0.5 * (l + u);
                } else {
                    v[i] = v[i].max(l + pl).min(u - pu);
                }
            } else if l.is_finite() {
                v[i] = v[i].max(l + push * l.abs().max(1.0));
            } else if u.is_finite() {
                v[i] = v[i].min(u - push * u.abs().max(1.0));
            }
        }
    }

    fn initial_slacks(&self, x: &[f64]) -> Vec<f64> {
        let mut v = x.to_vec();
        v.resize(self.n, 0.0);
        if self.n > self.nx {
            if let Ok(c) = self.p.constraints(x) {
                for r in 0..self.n - self.nx {
                    v[self.nx + r] = -c[self.me + r];
                }
            }
        }
        v
    }

    fn cold_iterate(&mut self) -> Result<Iterate> {
        let x0 = self.p.initial_point();
        let mut v = self.initial_slacks(&x0);
        self.push_into_bounds(&mut v, self.opts.bound_push);
        let (sl, su) = self.slacks(&v);
        let zl: Vec<f64> = sl.iter().map(|s| if s.is_finite() { 1.0 } else { 0.0 }).collect();
        let zu: Vec<f64> = su.iter().map(|s| if s.is_finite() { 1.0 } else { 0.0 }).collect();
        let (f, c) = self.eval(&v)?;
        let d = self.derivs(&v)?;
        let y = self.ls_multipliers(&d, &zl, &zu);
        Ok(Iterate { v, y, zl, zu, f, c })
    }

    fn warm_iterate(&mut self, w: &WarmStart) -> Result<Result<Iterate>> {
        let (nx, me, mi) = (self.nx, self.me, self.n - self.nx);
        let s = &self.p.s;
        if w.x.len() != nx
            || w.eq_multipliers.len() != me
            || w.ineq_multipliers.len() != mi
            || w.z_lower.len() != nx
            || w.z_upper.len() != nx
        {
            return Err(Error::Precondition("warm start dimensions do not match the problem".into()));
        }
        self.mu = self.opts.warm_mu_init;
        self.tau = TAU_MIN.max(1.0 - self.mu);
        let x = self.p.from_inner(&w.x);
        let mut v = self.initial_slacks(&x);
        self.push_into_bounds(&mut v, WARM_BOUND_PUSH);
        let mut y = vec![0.0; self.m];
        for r in 0..me {
            y[r] = -w.eq_multipliers[r] * s.objective / s.row[r];
        }
        for r in 0..mi {
            y[me + r] = w.ineq_multipliers[r] * s.objective / s.row[me + r];
        }
        let (sl, su) = self.slacks(&v);
        let mut zl = vec![0.0; self.n];
        let mut zu = vec![0.0; self.n];
        for i in 0..self.n {
            let (wl, wu) = if i < nx {
                (
                    w.z_lower[i] * s.objective * s.var[i],
                    w.z_upper[i] * s.objective * s.var[i],
                )
            } else {
                (y[me + i - nx].max(0.0), 0.0)
            };
            if sl[i].is_finite() {
                zl[i] = wl.max(self.mu / sl[i]).min(KAPPA_SIGMA * self.mu / sl[i]);
            }
            if su[i].is_finite() {
                zu[i] = wu.max(self.mu / su[i]).min(KAPPA_SIGMA * self.mu / su[i]);
            }
        }
        Ok(self.eval(&v).map(|(f, c)| Iterate { v, y, zl, zu, f, c }))
    }

    // ---- errors -----------------------------------------------------------

    fn errors(&self, it: &Iterate, d: &Derivs, mu: f64) -> Errors {
        let jty = self.jt(&d.jac, &it.y);
        let (sl, su) = self.slacks(&it.v);
        let mut stat = 0.0f64;
        for i in 0..self.n {
            stat = stat.max((d.grad_phi[i] + jty[i] - it.zl[i] + it.zu[i]).abs());
        }
        let mut zsum = 0.0;
        let mut nb = 0usize;
        let mut compl = 0.0f64;
        for i in 0..self.n {
            if sl[i].is_finite() {
                zsum += it.zl[i].abs();
                nb += 1;
                compl = compl.max((it.zl[i] * sl[i] - mu).abs());
            }
            if su[i].is_finite() {
                zsum += it.zu[i].abs();
                nb += 1;
                compl = compl.max((it.zu[i] * su[i] - mu).abs());
            }
        }
        let s_d = (S_MAX.max((norm_1(&it.y) + zsum) / ((self.m + nb).max(1) as f64))) / S_MAX;
        let s_c = (S_MAX.max(zsum / (nb.max(1) as f64))) / S_MAX;
        let feas = norm_inf(&it.c);
        let stationarity = stat / s_d;
        let complementarity = compl / s_c;
        Errors {
            total: stationarity.max(feas).max(complementarity),
            stationarity,
            feasibility: feas,
            complementarity,
        }
    }

    fn record(&mut self, it: &Iterate, e: &Errors, step: f64, phase: Phase) {
        let merit = self.merit(&it.v, it.f);
        self.log.push(IterationRecord {
            iter: self.iter,
            merit,
            feas: e.feasibility,
            opt: e.stationarity,
            step_size: step,
            mu: self.mu,
            filter: self.filter.len(),
            phase,
        });
        log::trace!(
            "iter {:4} merit {:.6e} feas {:.2e} opt {:.2e} mu {:.1e} step {:.2e}",
            self.iter,
            merit,
            e.feasibility,
            e.stationarity,
            self.mu,
            step
        );
    }

    // ---- main loop --------------------------------------------------------

    fn run(&mut self, start: Result<Iterate>) -> Outcome {
        let mut it = match start {
            Ok(it) => it,
            Err(e) => {
                return Outcome {
                    status: Status::NumericFailure,
                    it: None,
                    message: format!("initial point: {e}"),
                }
            }
        };
        let mut last_step = 0.0;
        let mut tiny_restorations = 0usize;
        let theta0 = norm_1(&it.c);
        self.theta_max = 1e4 * theta0.max(1.0);
        self.theta_min = 1e-4 * theta0.max(1.0);
        loop {
            let d = match self.derivs(&it.v) {
                Ok(d) => d,
                Err(e) => return self.fail(it, Status::NumericFailure, e.to_string()),
            };
            let e0 = self.errors(&it, &d, 0.0);
            self.last_errors = (e0.stationarity, e0.feasibility, e0.complementarity);
            self.record(&it, &e0, last_step, Phase::Main);
            if e0.total <= self.opts.opt_tol && e0.feasibility <= self.opts.feas_tol {
                return Outcome {
                    status: Status::Optimal,
                    it: Some(it),
                    message: "converged".into(),
                };
            }
            if self.iter >= self.opts.max_iter {
                return self.fail(it, Status::IterationLimit, "iteration limit reached".into());
            }
            self.iter += 1;

            let mut emu = self.errors(&it, &d, self.mu).total;
            while emu <= self.opts.barrier_tol_factor * self.mu && self.mu > self.mu_min() {
                self.mu = self
                    .mu_min()
                    .max((self.opts.mu_linear_decrease * self.mu).min(self.mu.powf(self.opts.mu_superlinear_power)));
                self.tau = TAU_MIN.max(1.0 - self.mu);
                self.filter.clear();
                emu = self.errors(&it, &d, self.mu).total;
            }

            let step = match self.step(&it, &d) {
                Ok(s) => s,
                Err(e) => return self.fail(it, Status::NumericFailure, e.to_string()),
            };
            match step {
                Some((next, alpha)) => {
                    it = next;
                    last_step = alpha;
                    tiny_restorations = 0;
                }
                None => {
                    if norm_inf(&it.c) <= 10.0 * self.opts.feas_tol {
                        // Nearly feasible but no acceptable step: regularize harder.
                        tiny_restorations += 1;
                        self.delta_w_last = (self.delta_w_last * 100.0).max(1e-4);
                        self.filter.clear();
                        if tiny_restorations > 5 {
                            return self.fail(it, Status::NumericFailure, "line search failed at a feasible point".into());
                        }
                        last_step = 0.0;
                        continue;
                    }
                    let theta = norm_1(&it.c);
                    let phi = self.merit(&it.v, it.f);
                    self.filter.push(((1.0 - GAMMA_THETA) * theta, phi - GAMMA_PHI * theta));
                    match self.restoration(it.clone()) {
                        Ok(Some(next)) => {
                            it = next;
                            last_step = 0.0;
                        }
                        Ok(None) => {
                            return self.fail(it, Status::Infeasible, "restoration phase converged to an infeasible point".into())
                        }
                        Err((status, msg)) => return self.fail(it, status, msg),
                    }
                }
            }
        }
    }

    fn fail(&self, it: Iterate, status: Status, message: String) -> Outcome {
        Outcome {
            status,
            it: Some(it),
            message,
        }
    }

    /// One Newton step with a filter line search. `Ok(None)` requests
    /// restoration.
    fn step(&mut self, it: &Iterate, d: &Derivs) -> Result<Option<(Iterate, f64)>> {
        let h = self.hessian(&it.v, &it.y)?;
        let (sl, su) = self.slacks(&it.v);
        let mu = self.mu;
        let dir = match self.direction(it, d, &h, &sl, &su)? {
            Some(dir) => dir,
            None => return Ok(None),
        };

        let gb: Vec<f64> = (0..self.n)
            .map(|i| {
                let mut g = d.grad_phi[i];
                if sl[i].is_finite() {
                    g -= mu / sl[i];
                }
                if su[i].is_finite() {
                    g += mu / su[i];
                }
                g
            })
            .collect();
        let dphi = dot(&gb, &dir.dv);
        let theta = norm_1(&it.c);
        let phi0 = self.merit(&it.v, it.f);

        let neg: Vec<f64> = dir.dv.iter().map(|v| -v).collect();
        let alpha_max = ftb(&sl, &dir.dv, self.tau).min(ftb(&su, &neg, self.tau));
        let tiny = dir
            .dv
            .iter()
            .zip(&it.v)
            .all(|(dv, v)| dv.abs() <= 10.0 * f64::EPSILON * (1.0 + v.abs()));
        let alpha_min = if dphi < 0.0 {
            let mut a = GAMMA_THETA.min(GAMMA_PHI * theta / -dphi);
            if theta <= self.theta_min {
                a = a.min(theta.powf(S_THETA) / (-dphi).powf(S_PHI));
            }
            GAMMA_ALPHA * a
        } else {
            GAMMA_ALPHA * GAMMA_THETA
        };

        let mut alpha = alpha_max;
        let mut first = true;
        loop {
            let vt: Vec<f64> = it.v.iter().zip(&dir.dv).map(|(v, d)| v + alpha * d).collect();
            if let Ok((ft, ct)) = self.eval(&vt) {
                let tt = norm_1(&ct);
                let pt = self.merit(&vt, ft);
                if tiny || self.acceptable(theta, phi0, dphi, alpha, tt, pt) {
                    let next = self.accept(it, vt, ft, ct, &dir.dv, &dir.dy, alpha, &sl, &su);
                    return Ok(Some((next, alpha)));
                }
                if first && tt >= theta {
                    if let Some(next) = self.second_order_correction(it, &dir, alpha, ct, tt, theta, phi0, dphi, &sl, &su) {
                        return Ok(Some(next));
                    }
                }
            }
            first = false;
            alpha *= 0.5;
            if alpha < alpha_min || alpha < ALPHA_MIN {
                return Ok(None);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn second_order_correction(
        &mut self,
        it: &Iterate,
        dir: &Direction,
        alpha: f64,
        c_trial: Vec<f64>,
        theta_trial: f64,
        theta: f64,
        phi0: f64,
        dphi: f64,
        sl: &[f64],
        su: &[f64],
    ) -> Option<(Iterate, f64)> {
        let mut c_soc: Vec<f64> = it.c.iter().zip(&c_trial).map(|(c0, c1)| alpha * c0 + c1).collect();
        let mut theta_prev = theta_trial;
        for _ in 0..SOC_MAX {
            let rhs_c: Vec<f64> = c_soc.iter().map(|v| -v).collect();
            let (dvs, dys) = self.solve_system(&dir.lu, &dir.rhs_x, &rhs_c);
            let neg: Vec<f64> = dvs.iter().map(|v| -v).collect();
            let asoc = ftb(sl, &dvs, self.tau).min(ftb(su, &neg, self.tau));
            let vs: Vec<f64> = it.v.iter().zip(&dvs).map(|(v, d)| v + asoc * d).collect();
            let (fs, cs) = self.eval(&vs).ok()?;
            let ts = norm_1(&cs);
            let ps = self.merit(&vs, fs);
            if self.acceptable(theta, phi0, dphi, alpha, ts, ps) {
                let next = self.accept(it, vs, fs, cs, &dvs, &dys, asoc, sl, su);
                return Some((next, asoc));
            }
            if ts > KAPPA_SOC * theta_prev {
                return None;
            }
            theta_prev = ts;
            c_soc = c_soc.iter().zip(&cs).map(|(a, b)| asoc * a + b).collect();
        }
        None
    }

    /// Filter acceptance of a trial point; augments the filter on
    /// infeasibility-reducing steps.
    fn acceptable(&mut self, theta: f64, phi: f64, dphi: f64, alpha: f64, tt: f64, pt: f64) -> bool {
        if !(tt <= self.theta_max) || !pt.is_finite() {
            return false;
        }
        if !self.filter_allows(tt, pt) {
            return false;
        }
        let eps = 10.0 * f64::EPSILON * phi.abs().max(1.0);
        let switching = dphi < 0.0 && alpha * (-dphi).powf(S_PHI) > theta.powf(S_THETA);
        if theta <= self.theta_min && switching {
            return pt <= phi + ETA_PHI * alpha * dphi + eps;
        }
        let ok = tt <= (1.0 - GAMMA_THETA) * theta || pt <= phi - GAMMA_PHI * theta + eps;
        if ok {
            self.filter.push(((1.0 - GAMMA_THETA) * theta, phi - GAMMA_PHI * theta));
        }
        ok
    }

    fn filter_allows(&self, tt: f64, pt: f64) -> bool {
        self.filter.iter().all(|&(tf, pf)| tt < tf || pt < pf)
    }

    #[allow(clippy::too_many_arguments)]
    fn accept(
        &self,
        it: &Iterate,
        v: Vec<f64>,
        f: f64,
        c: Vec<f64>,
        dv: &[f64],
        dy: &[f64],
        alpha: f64,
        sl: &[f64],
        su: &[f64],
    ) -> Iterate {
        let mu = self.mu;
        let mut dzl = vec![0.0; self.n];
        let mut dzu = vec![0.0; self.n];
        for i in 0..self.n {
            if sl[i].is_finite() {
                dzl[i] = mu / sl[i] - it.zl[i] - it.zl[i] / sl[i] * dv[i];
            }
            if su[i].is_finite() {
                dzu[i] = mu / su[i] - it.zu[i] + it.zu[i] / su[i] * dv[i];
            }
        }
        let az = ftb(&it.zl, &dzl, self.tau).min(ftb(&it.zu, &dzu, self.tau));
        let y: Vec<f64> = it.y.iter().zip(dy).map(|(y, d)| y + alpha * d).collect();
        let (nsl, nsu) = self.slacks(&v);
        let mut zl = it.zl.clone();
        let mut zu = it.zu.clone();
        for i in 0..self.n {
            if nsl[i].is_finite() {
                let z = it.zl[i] + az * dzl[i];
                zl[i] = z.max(mu / (KAPPA_SIGMA * nsl[i])).min(KAPPA_SIGMA * mu / nsl[i]);
            }
            if nsu[i].is_finite() {
                let z = it.zu[i] + az * dzu[i];
                zu[i] = z.max(mu / (KAPPA_SIGMA * nsu[i])).min(KAPPA_SIGMA * mu / nsu[i]);
            }
        }
        Iterate { v, y, zl, zu, f, c }
    }

    /// Newton direction with curvature-based regularization.
    fn direction(
        &mut self,
        it: &Iterate,
        d: &Derivs,
        h: &Triplets,
        sl: &[f64],
        su: &[f64],
    ) -> Result<Option<Direction>> {
        let mu = self.mu;
        let jty = self.jt(&d.jac, &it.y);
        let mut sigma = vec![0.0; self.n];
        let mut rhs_x = vec![0.0; self.n];
        for i in 0..self.n {
            let mut g = d.grad_phi[i] + jty[i];
            if sl[i].is_finite() {
                sigma[i] += it.zl[i] / sl[i];
                g -= mu / sl[i];
            }
            if su[i].is_finite() {
                sigma[i] += it.zu[i] / su[i];
                g += mu / su[i];
            }
            rhs_x[i] = -g;
        }
        let rhs_c: Vec<f64> = it.c.iter().map(|c| -c).collect();

        let mut dw = 0.0;
        let mut dc = 0.0;
        loop {
            let diag: Vec<f64> = sigma.iter().map(|s| s + dw).collect();
            let mut lu = self.assemble(Some(h), &diag, &d.jac, dc);
            let ok = lu.factor().is_ok();
            if ok {
                let (dv, dy) = self.solve_system(&lu, &rhs_x, &rhs_c);
                if dv.iter().chain(&dy).all(|v| v.is_finite()) {
                    let hdv = self.hv(h, &dv);
                    let dd = dot(&dv, &dv);
                    let curvature = dot(&dv, &hdv)
                        + dv.iter().zip(&diag).map(|(v, s)| s * v * v).sum::<f64>();
                    if curvature >= CURVATURE_MIN * dd || dd == 0.0 {
                        if dw > 0.0 {
                            self.delta_w_last = dw;
                        }
                        return Ok(Some(Direction {
                            dv,
                            dy,
                            lu,
                            rhs_x,
                        }));
                    }
                }
            } else if dc == 0.0 {
                dc = 1e-8 * mu.powf(0.25);
                continue;
            }
            dw = if dw == 0.0 {
                if self.delta_w_last == 0.0 {
                    1e-4
                } else {
                    (self.delta_w_last / 3.0).max(1e-20)
                }
            } else if self.delta_w_last == 0.0 {
                dw * 100.0
            } else {
                dw * 8.0
            };
            if dw > 1e40 {
                return Ok(None);
            }
        }
    }

    // ---- restoration ------------------------------------------------------

    /// Minimizes ½‖c‖² plus a proximal term and a barrier until the violation
    /// has dropped by 10%. `Ok(None)` means the violation stalled.
    fn restoration(&mut self, mut it: Iterate) -> std::result::Result<Option<Iterate>, (Status, String)> {
        self.restorations += 1;
        let theta0 = norm_inf(&it.c);
        let vr = it.v.clone();
        let dr: Vec<f64> = vr.iter().map(|v| 1.0f64.min(1.0 / v.abs().max(1e-300))).collect();
        let mut mu_r = self.mu.max(theta0.min(0.1));
        let mut best = theta0;
        let mut stalled = 0usize;
        log::debug!("restoration started, violation {theta0:.3e}");
        loop {
            if self.iter >= self.opts.max_iter {
                return Err((Status::IterationLimit, "iteration limit reached in restoration".into()));
            }
            self.iter += 1;
            let d = self
                .derivs(&it.v)
                .map_err(|e| (Status::NumericFailure, e.to_string()))?;
            let zeta = mu_r.sqrt();
            let (sl, su) = self.slacks(&it.v);
            let mut diag = vec![0.0; self.n];
            let mut g = vec![0.0; self.n];
            for i in 0..self.n {
                diag[i] = zeta * dr[i] * dr[i];
                g[i] = zeta * dr[i] * dr[i] * (it.v[i] - vr[i]);
                if sl[i].is_finite() {
                    diag[i] += mu_r / (sl[i] * sl[i]);
                    g[i] -= mu_r / sl[i];
                }
                if su[i].is_finite() {
                    diag[i] += mu_r / (su[i] * su[i]);
                    g[i] += mu_r / su[i];
                }
            }
            let mut reg = 0.0;
            let lu = loop {
                let shifted: Vec<f64> = diag.iter().map(|v| v + reg).collect();
                let mut lu = self.assemble(None, &shifted, &d.jac, 1.0);
                if lu.factor().is_ok() {
                    break lu;
                }
                reg = if reg == 0.0 { 1e-10 } else { reg * 100.0 };
                if reg > 1e10 {
                    return Err((Status::NumericFailure, "singular restoration system".into()));
                }
            };
            let rhs_x: Vec<f64> = g.iter().map(|v| -v).collect();
            let rhs_c: Vec<f64> = it.c.iter().map(|v| -v).collect();
            let (dv, _) = self.solve_system(&lu, &rhs_x, &rhs_c);
            let jtc = self.jt(&d.jac, &it.c);
            let slope = dot(&dv, &jtc) + dot(&dv, &g);
            let psi = |s: &Self, v: &[f64], c: &[f64]| {
                let prox: f64 = (0..s.n).map(|i| (dr[i] * (v[i] - vr[i])).powi(2)).sum();
                0.5 * dot(c, c) + 0.5 * zeta * prox + s.barrier(v, mu_r)
            };
            let psi0 = psi(self, &it.v, &it.c);
            let neg: Vec<f64> = dv.iter().map(|v| -v).collect();
            let mut alpha = ftb(&sl, &dv, self.tau).min(ftb(&su, &neg, self.tau));
            let mut accepted = None;
            while alpha >= ALPHA_MIN {
                let vt: Vec<f64> = it.v.iter().zip(&dv).map(|(v, d)| v + alpha * d).collect();
                if let Ok((ft, ct)) = self.eval(&vt) {
                    let p = psi(self, &vt, &ct);
                    if p <= psi0 + ARMIJO * alpha * slope.min(0.0) + 10.0 * f64::EPSILON * psi0.abs() {
                        accepted = Some((vt, ft, ct));
                        break;
                    }
                }
                alpha *= 0.5;
            }
            let Some((v, f, c)) = accepted else {
                return Ok(None);
            };
            it.v = v;
            it.f = f;
            it.c = c;
            let theta = norm_inf(&it.c);
            let e = Errors {
                total: theta,
                stationarity: f64::NAN,
                feasibility: theta,
                complementarity: f64::NAN,
            };
            self.record(&it, &e, alpha, Phase::Restoration);
            if theta <= self.opts.feas_tol {
                self.filter.clear();
                break;
            }
            if theta <= KAPPA_RESTO * theta0 && self.filter_allows(norm_1(&it.c), self.merit(&it.v, it.f)) {
                break;
            }
            if theta < 0.99 * best {
                best = theta;
                stalled = 0;
            } else {
                stalled += 1;
                if stalled >= self.opts.stall_iterations && theta > 1e2 * self.opts.feas_tol {
                    log::debug!("restoration stalled at violation {theta:.3e}");
                    return Ok(None);
                }
            }
            mu_r = (0.5 * mu_r).max(1e-14);
        }
        let (sl, su) = self.slacks(&it.v);
        for i in 0..self.n {
            it.zl[i] = if sl[i].is_finite() { self.mu / sl[i] } else { 0.0 };
            it.zu[i] = if su[i].is_finite() { self.mu / su[i] } else { 0.0 };
        }
        let d = self
            .derivs(&it.v)
            .map_err(|e| (Status::NumericFailure, e.to_string()))?;
        it.y = self.ls_multipliers(&d, &it.zl, &it.zu);
        log::debug!("restoration finished, violation {:.3e}", norm_inf(&it.c));
        Ok(Some(it))
    }

    // ---- result -----------------------------------------------------------

    fn finish(&self, out: Outcome) -> SolveResult {
        let s = &self.p.s;
        let (nx, me) = (self.nx, self.me);
        let mi = self.n - nx;
        let diagnostics = Diagnostics {
            iterations: self.iter,
            restorations: self.restorations,
            stationarity: self.last_errors.0,
            feasibility: self.last_errors.1,
            complementarity: self.last_errors.2,
            final_mu: self.mu,
            message: out.message,
            log: self.log.clone(),
        };
        let Some(it) = out.it else {
            return SolveResult {
                status: out.status,
                x: Vec::new(),
                objective: f64::NAN,
                eq_multipliers: Vec::new(),
                ineq_multipliers: Vec::new(),
                z_lower: Vec::new(),
                z_upper: Vec::new(),
                diagnostics,
            };
        };
        let x = self.p.to_inner(&it.v[..nx]);
        let eq = (0..me).map(|r| -it.y[r] * s.row[r] / s.objective).collect();
        let ineq = (0..mi)
            .map(|r| it.y[me + r] * s.row[me + r] / s.objective)
            .collect();
        let zl = (0..nx).map(|i| it.zl[i] / (s.objective * s.var[i])).collect();
        let zu = (0..nx).map(|i| it.zu[i] / (s.objective * s.var[i])).collect();
        SolveResult {
            status: out.status,
            x,
            objective: it.f / s.objective,
            eq_multipliers: eq,
            ineq_multipliers: ineq,
            z_lower: zl,
            z_upper: zu,
            diagnostics,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{OrderKey, Problem, SolverOptions, Status, Triplets};
    use super::solve;
    use crate::error::Result;

    /// Dense toy problem described by closures.
    struct Toy {
        n: usize,
        me: usize,
        mi: usize,
        lo: Vec<f64>,
        hi: Vec<f64>,
        x0: Vec<f64>,
        f: fn(&[f64]) -> f64,
        c: fn(&[f64]) -> Vec<f64>,
    }

    fn fd_grad(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut a = x.to_vec();
                let mut b = x.to_vec();
                a[i] += h;
                b[i] -= h;
                (f(&a) - f(&b)) / (2.0 * h)
            })
            .collect()
    }

    impl Toy {
        fn lag(&self, x: &[f64], sigma: f64, y: &[f64]) -> f64 {
            sigma * (self.f)(x) + (self.c)(x).iter().zip(y).map(|(c, y)| c * y).sum::<f64>()
        }
    }

    impl Problem for Toy {
        fn num_vars(&self) -> usize {
            self.n
        }
        fn num_eq(&self) -> usize {
            self.me
        }
        fn num_ineq(&self) -> usize {
            self.mi
        }
        fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
            (self.lo.clone(), self.hi.clone())
        }
        fn initial_point(&self) -> Vec<f64> {
            self.x0.clone()
        }
        fn objective(&self, x: &[f64]) -> Result<f64> {
            Ok((self.f)(x))
        }
        fn objective_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
            Ok(fd_grad(&|x| (self.f)(x), x))
        }
        fn constraints(&self, x: &[f64]) -> Result<Vec<f64>> {
            Ok((self.c)(x))
        }
        fn jacobian(&self, x: &[f64]) -> Result<Triplets> {
            let mut t = Vec::new();
            for r in 0..self.me + self.mi {
                let g = fd_grad(&|x| (self.c)(x)[r], x);
                for (j, v) in g.into_iter().enumerate() {
                    t.push((r, j, v));
                }
            }
            Ok(t)
        }
        fn lagrangian_hessian(&self, x: &[f64], sigma: f64, y: &[f64]) -> Result<Triplets> {
            let h = 1e-4;
            let mut t = Vec::new();
            for i in 0..self.n {
                for j in 0..=i {
                    let e = |di: f64, dj: f64| {
                        let mut p = x.to_vec();
                        p[i] += di;
                        p[j] += dj;
                        self.lag(&p, sigma, y)
                    };
                    let v = (e(h, h) - e(h, -h) - e(-h, h) + e(-h, -h)) / (4.0 * h * h);
                    t.push((i, j, v));
                }
            }
            Ok(t)
        }
        fn var_keys(&self) -> Vec<OrderKey> {
            (0..self.n).map(|i| OrderKey::var(0, i)).collect()
        }
    }

    #[test]
    fn interior_optimum() {
        let p = Toy {
            n: 1,
            me: 0,
            mi: 0,
            lo: vec![0.0],
            hi: vec![2.0],
            x0: vec![0.3],
            f: |x| -(x[0] - 1.0).powi(2),
            c: |_| vec![],
        };
        let r = solve(&p, &SolverOptions::default(), None).unwrap();
        assert_eq!(r.status, Status::Optimal);
        assert!((r.x[0] - 1.0).abs() < 1e-6);
        assert!(r.objective.abs() < 1e-10);
    }

    #[test]
    fn equality_multiplier_sign() {
        let inf = f64::INFINITY;
        let p = Toy {
            n: 2,
            me: 1,
            mi: 0,
            lo: vec![-inf; 2],
            hi: vec![inf; 2],
            x0: vec![3.0, -1.0],
            f: |x| -(x[0] * x[0] + x[1] * x[1]),
            c: |x| vec![x[0] + x[1] - 1.0],
        };
        let r = solve(&p, &SolverOptions::default(), None).unwrap();
        assert_eq!(r.status, Status::Optimal);
        assert!((r.x[0] - 0.5).abs() < 1e-6 && (r.x[1] - 0.5).abs() < 1e-6);
        assert!((r.eq_multipliers[0] - 1.0).abs() < 1e-6, "{:?}", r.eq_multipliers);
    }

    #[test]
    fn active_upper_bound() {
        let p = Toy {
            n: 1,
            me: 0,
            mi: 0,
            lo: vec![0.0],
            hi: vec![1.0],
            x0: vec![0.5],
            f: |x| x[0],
            c: |_| vec![],
        };
        let r = solve(&p, &SolverOptions::default(), None).unwrap();
        assert_eq!(r.status, Status::Optimal);
        assert!((r.x[0] - 1.0).abs() < 1e-6);
        assert!((r.z_upper[0] - 1.0).abs() < 1e-5, "{:?}", r.z_upper);
    }

    #[test]
    fn inequality_multiplier() {
        let inf = f64::INFINITY;
        // maximize x + y subject to x² + y² ≤ 2: optimum (1, 1), ν = 1/2.
        let p = Toy {
            n: 2,
            me: 0,
            mi: 1,
            lo: vec![-inf; 2],
            hi: vec![inf; 2],
            x0: vec![0.0, 0.0],
            f: |x| x[0] + x[1],
            c: |x| vec![x[0] * x[0] + x[1] * x[1] - 2.0],
        };
        let r = solve(&p, &SolverOptions::default(), None).unwrap();
        assert_eq!(r.status, Status::Optimal);
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5, "{:?}", r.x);
        assert!((r.ineq_multipliers[0] - 0.5).abs() < 1e-5);
    }

    #[test]
    fn nonconvex_objective_needs_regularization() {
        // maximize x² on [−1, 2] from an interior start: optimum at x = 2.
        let p = Toy {
            n: 1,
            me: 0,
            mi: 0,
            lo: vec![-1.0],
            hi: vec![2.0],
            x0: vec![0.1],
            f: |x| x[0] * x[0],
            c: |_| vec![],
        };
        let r = solve(&p, &SolverOptions::default(), None).unwrap();
        assert_eq!(r.status, Status::Optimal);
        assert!((r.x[0] - 2.0).abs() < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn infeasible_constraints_are_detected() {
        // x ∈ [0, 1] with x = 2.
        let p = Toy {
            n: 1,
            me: 1,
            mi: 0,
            lo: vec![0.0],
            hi: vec![1.0],
            x0: vec![0.5],
            f: |x| -x[0] * x[0],
            c: |x| vec![x[0] - 2.0],
        };
        let r = solve(&p, &SolverOptions::default(), None).unwrap();
        assert_eq!(r.status, Status::Infeasible, "{}", r.diagnostics.message);
    }

    #[test]
    fn infeasible_inequality_is_detected() {
        let inf = f64::INFINITY;
        // x² + y² ≤ 1 and x + y = 3 cannot both hold.
        let p = Toy {
            n: 2,
            me: 1,
            mi: 1,
            lo: vec![-inf; 2],
            hi: vec![inf; 2],
            x0: vec![0.0, 0.0],
            f: |x| x[0],
            c: |x| vec![x[0] + x[1] - 3.0, x[0] * x[0] + x[1] * x[1] - 1.0],
        };
        let r = solve(&p, &SolverOptions::default(), None).unwrap();
        assert_eq!(r.status, Status::Infeasible, "{}", r.diagnostics.message);
    }

    #[test]
    fn warm_start_from_optimum_is_immediate() {
        let inf = f64::INFINITY;
        let p = Toy {
            n: 2,
            me: 1,
            mi: 0,
            lo: vec![-inf, 0.0],
            hi: vec![inf, 0.3],
            x0: vec![3.0, 0.1],
            f: |x| -(x[0] * x[0] + x[1] * x[1]),
            c: |x| vec![x[0] + x[1] - 1.0],
        };
        let opts = SolverOptions::default();
        let cold = solve(&p, &opts, None).unwrap();
        assert_eq!(cold.status, Status::Optimal);
        let warm = solve(&p, &opts, Some(&cold.warm_start())).unwrap();
        assert_eq!(warm.status, Status::Optimal);
        assert!(warm.diagnostics.iterations <= 5, "{}", warm.diagnostics.iterations);
        assert!((warm.x[1] - 0.3).abs() < 1e-6);
    }
}
