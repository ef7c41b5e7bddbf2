//! Receding-horizon closed loop.
//!
//! Step 1 solves the free-start problem; each later step pins x(1) to the
//! second state of the previous prediction and re-solves.

use crate::error::{Error, Result};
use crate::nlp::{solve, SolveResult, SolverOptions, Status, WarmStart};
use crate::transcription::{
    augmented_step, build_ocp1, build_ocp2, idx, AugmentedState, EqRow, IneqRow, InitialCondition,
    Input, NlpProblem, OcpSpec, DIM,
};

/// Which prediction slots the recorded multipliers come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LambdaIndexing {
    /// λ_E(i) and λ_C(i) both from slot (2 | i−1).
    #[default]
    SameSlot,
    /// λ_E(i) from slot (2 | i−1), λ_C(i) from slot (1 | i−1).
    AsPrinted,
}

#[derive(Clone, Debug)]
pub struct MpcConfig {
    pub n_sim: usize,
    /// Template for every step; its horizon is the prediction horizon.
    pub template: OcpSpec,
    pub warm_start: bool,
    pub lambda_indexing: LambdaIndexing,
    pub solver: SolverOptions,
}

impl MpcConfig {
    pub fn new(template: OcpSpec, n_sim: usize) -> Self {
        MpcConfig {
            n_sim,
            template,
            warm_start: true,
            lambda_indexing: LambdaIndexing::SameSlot,
            solver: SolverOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sim < 1 {
            return Err(Error::Options("N_sim must be at least 1".into()));
        }
        if self.template.initial != InitialCondition::Free {
            return Err(Error::Options("MPC template must have a free initial condition".into()));
        }
        self.template.validate()?;
        self.solver.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepSummary {
    pub step: usize,
    pub status: Status,
    pub iterations: usize,
    pub restorations: usize,
    pub objective: f64,
    pub stationarity: f64,
    pub feasibility: f64,
    pub message: String,
}

impl StepSummary {
    fn from_result(step: usize, r: &SolveResult) -> Self {
        StepSummary {
            step,
            status: r.status,
            iterations: r.diagnostics.iterations,
            restorations: r.diagnostics.restorations,
            objective: r.objective,
            stationarity: r.diagnostics.stationarity,
            feasibility: r.diagnostics.feasibility,
            message: r.diagnostics.message.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepFailure {
    pub step: usize,
    pub status: Status,
    pub message: String,
}

#[derive(Clone, Debug, Default)]
pub struct ClosedLoopRun {
    /// Applied states x(1..).
    pub states: Vec<AugmentedState>,
    pub lambda_e: Vec<f64>,
    pub lambda_c: Vec<f64>,
    pub scc: Vec<f64>,
    pub steps: Vec<StepSummary>,
    /// Predicted state trajectories, one per solve.
    pub predictions: Vec<Vec<AugmentedState>>,
    /// max_j ‖x*(j+1|i−1) − x*(j|i)‖∞ (component-scaled) for i ≥ 2.
    pub shift_gap: Vec<f64>,
    /// Set when a step did not solve to optimality.
    pub failure: Option<StepFailure>,
}

impl ClosedLoopRun {
    pub fn is_complete(&self) -> bool {
        self.failure.is_none()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Applied (μ, s) per recorded step.
    pub fn applied_inputs(&self) -> Vec<Input> {
        self.states.iter().map(|x| [x[idx::MU], x[idx::SAVINGS]]).collect()
    }
}

fn multiplier(prob: &NlpProblem, r: &SolveResult, step: usize, comp: usize) -> f64 {
    r.eq_multipliers[prob.costate_row(step, comp)]
}

pub fn run_mpc(cfg: &MpcConfig) -> Result<ClosedLoopRun> {
    cfg.validate()?;
    let mut run = ClosedLoopRun::default();
    let prob = build_ocp1(&cfg.template)?;
    let res = solve(&prob, &cfg.solver, None)?;
    log::info!(
        "mpc step 1: {} in {} iterations",
        res.status,
        res.diagnostics.iterations
    );
    run.steps.push(StepSummary::from_result(1, &res));
    if !res.is_optimal() {
        run.failure = Some(StepFailure {
            step: 1,
            status: res.status,
            message: res.diagnostics.message.clone(),
        });
        return Ok(run);
    }
    let states = prob.states(&res.x);
    record(
        &mut run,
        states[0],
        multiplier(&prob, &res, 1, idx::E),
        multiplier(&prob, &res, 1, idx::C),
    );
    run.predictions.push(states);

    let mut prev = (prob, res);
    for i in 2..=cfg.n_sim {
        let (pprob, pres) = &prev;
        let pstates = pprob.states(&pres.x);
        let x_init = pstates[1];
        let lambda_e = multiplier(pprob, pres, 2, idx::E);
        let lambda_c = match cfg.lambda_indexing {
            LambdaIndexing::SameSlot => multiplier(pprob, pres, 2, idx::C),
            LambdaIndexing::AsPrinted => multiplier(pprob, pres, 1, idx::C),
        };
        record(&mut run, x_init, lambda_e, lambda_c);

        let prob = build_ocp2(&cfg.template, &x_init)?;
        let warm = if cfg.warm_start {
            Some(shift_warm_start(pprob, pres, &prob)?)
        } else {
            None
        };
        let res = solve(&prob, &cfg.solver, warm.as_ref())?;
        log::info!(
            "mpc step {i}: {} in {} iterations",
            res.status,
            res.diagnostics.iterations
        );
        run.steps.push(StepSummary::from_result(i, &res));
        if !res.is_optimal() {
            run.failure = Some(StepFailure {
                step: i,
                status: res.status,
                message: res.diagnostics.message.clone(),
            });
            return Ok(run);
        }
        let states = prob.states(&res.x);
        run.shift_gap.push(shift_gap(&pstates, &states));
        run.predictions.push(states);
        prev = (prob, res);
    }
    Ok(run)
}

fn record(run: &mut ClosedLoopRun, x: AugmentedState, lambda_e: f64, lambda_c: f64) {
    run.states.push(x);
    run.lambda_e.push(lambda_e);
    run.lambda_c.push(lambda_c);
    run.scc.push(-1000.0 * lambda_e / lambda_c);
}

fn shift_gap(prev: &[AugmentedState], next: &[AugmentedState]) -> f64 {
    let mut scale = [0.0f64; DIM];
    for x in prev {
        for k in 0..DIM {
            scale[k] = scale[k].max(x[k].abs());
        }
    }
    let mut gap = 0.0f64;
    for j in 0..next.len().min(prev.len()) - 1 {
        for k in 1..DIM {
            if k == idx::W || scale[k] == 0.0 {
                continue;
            }
            gap = gap.max((prev[j + 1][k] - next[j][k]).abs() / scale[k]);
        }
    }
    gap
}

/// Shifts a solution one step forward for use as the next warm start:
/// x(j) ← x(j+1), w(j) ← w(j+1), the last input repeated and the last state
/// re-simulated. Multipliers follow the same shift.
pub fn shift_warm_start(prev: &NlpProblem, res: &SolveResult, next: &NlpProblem) -> Result<WarmStart> {
    let n = prev.horizon();
    if next.horizon() != n {
        return Err(Error::Precondition("shifted problem must have the same horizon".into()));
    }
    let states = prev.states(&res.x);
    let inputs = prev.inputs(&res.x);
    let mut s: Vec<AugmentedState> = states[1..].to_vec();
    let mut w: Vec<Input> = inputs[1..].to_vec();
    let last_w = inputs[n - 1];
    w.push(last_w);
    let p = prev.params();
    s.push(augmented_step(p, prev.spec().rho, &states[n], &last_w)?);
    if let InitialCondition::Pinned(x1) = &next.spec().initial {
        s[0] = *x1;
    }
    let x = next.pack(&s, &w);

    let shifted = |var: usize| -> Option<usize> {
        let stride = DIM + 2;
        let moved = var + stride;
        (moved < res.x.len()).then_some(moved)
    };
    let nv = res.x.len();
    let mut z_lower = vec![0.0; nv];
    let mut z_upper = vec![0.0; nv];
    for v in 0..nv {
        let src = shifted(v).unwrap_or(v);
        z_lower[v] = res.z_lower[src];
        z_upper[v] = res.z_upper[src];
    }

    let peq = prev.eq_rows();
    let find_eq = |want: &dyn Fn(&EqRow) -> bool| peq.iter().position(want);
    let eq_multipliers = next
        .eq_rows()
        .iter()
        .map(|row| {
            let src = match *row {
                EqRow::Pin { comp, .. } => Some(prev.dynamics_row(1, comp)),
                EqRow::EmissionsFormula | EqRow::ConsumptionFormula => None,
                EqRow::Dynamics { step, comp } => Some(prev.dynamics_row((step + 1).min(n), comp)),
                EqRow::Fix { step, comp, .. } => find_eq(&|r| {
                    matches!(*r, EqRow::Fix { step: s2, comp: c2, .. } if c2 == comp && s2 == step + 1)
                })
                .or_else(|| {
                    find_eq(&|r| matches!(*r, EqRow::Fix { step: s2, comp: c2, .. } if c2 == comp && s2 == step))
                }),
            };
            src.map_or(0.0, |r| res.eq_multipliers[r])
        })
        .collect();

    let pin = prev.ineq_rows();
    let kind = |r: &IneqRow| -> (u8, usize) {
        match *r {
            IneqRow::TemperatureCap { step, .. } => (0, step),
            IneqRow::RateUp { step, .. } => (1, step),
            IneqRow::RateDown { step, .. } => (2, step),
            IneqRow::Growth { step, .. } => (3, step),
        }
    };
    let ineq_multipliers = next
        .ineq_rows()
        .iter()
        .map(|row| {
            let (k, step) = kind(row);
            pin.iter()
                .position(|r| kind(r) == (k, step + 1))
                .or_else(|| pin.iter().position(|r| kind(r) == (k, step)))
                .map_or(0.0, |r| res.ineq_multipliers[r])
        })
        .collect();

    Ok(WarmStart {
        x,
        eq_multipliers,
        ineq_multipliers,
        z_lower,
        z_upper,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{load_parameter_set, Vintage};

    fn template(n: usize) -> OcpSpec {
        let mut spec = OcpSpec::new(load_parameter_set(Vintage::Dice2016R), n);
        spec.fix_mu1 = true;
        spec
    }

    #[test]
    fn single_step_equals_open_loop() {
        let cfg = MpcConfig::new(template(10), 1);
        let run = run_mpc(&cfg).unwrap();
        let prob = build_ocp1(&cfg.template).unwrap();
        let res = solve(&prob, &cfg.solver, None).unwrap();
        assert!(run.is_complete());
        assert_eq!(run.len(), 1);
        assert_eq!(run.states[0], prob.states(&res.x)[0]);
        let scc = -1000.0 * multiplier(&prob, &res, 1, idx::E) / multiplier(&prob, &res, 1, idx::C);
        assert_eq!(run.scc[0], scc);
    }

    #[test]
    fn closed_loop_follows_predictions() {
        let cfg = MpcConfig::new(template(15), 4);
        let run = run_mpc(&cfg).unwrap();
        assert!(run.is_complete());
        assert_eq!(run.len(), 4);
        assert_eq!(run.predictions.len(), 4);
        for i in 1..4 {
            assert_eq!(run.states[i], run.predictions[i - 1][1]);
            assert_eq!(run.states[i][idx::TIME], (i + 1) as f64);
        }
        for (e, c) in run.lambda_e.iter().zip(&run.lambda_c) {
            assert!(*e < 0.0 && *c > 0.0);
        }
        assert!(run.steps.iter().all(|s| s.status == Status::Optimal));
    }

    #[test]
    fn warm_start_needs_fewer_iterations() {
        let mut cfg = MpcConfig::new(template(20), 3);
        let warm = run_mpc(&cfg).unwrap();
        cfg.warm_start = false;
        let cold = run_mpc(&cfg).unwrap();
        let it = |r: &ClosedLoopRun| r.steps[1..].iter().map(|s| s.iterations).sum::<usize>();
        assert!(it(&warm) < it(&cold), "{} vs {}", it(&warm), it(&cold));
        for (a, b) in warm.scc.iter().zip(&cold.scc) {
            assert!((a - b).abs() <= 1e-4 * b.abs());
        }
    }

    #[test]
    fn printed_indexing_differs_only_in_lambda_c() {
        let mut cfg = MpcConfig::new(template(10), 2);
        let same = run_mpc(&cfg).unwrap();
        cfg.lambda_indexing = LambdaIndexing::AsPrinted;
        let printed = run_mpc(&cfg).unwrap();
        assert_eq!(same.lambda_e, printed.lambda_e);
        assert_eq!(same.lambda_c[0], printed.lambda_c[0]);
        assert_ne!(same.lambda_c[1], printed.lambda_c[1]);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = MpcConfig::new(template(10), 0);
        assert!(run_mpc(&cfg).is_err());
    }
}
