//! Social cost of carbon from multiplier ratios and from emission pulses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mpc::ClosedLoopRun;
use crate::nlp::{solve, SolveResult, SolverOptions};
use crate::params::ParameterSet;
use crate::transcription::{
    augmented_step, build_ocp2, idx, AugmentedState, Input, NlpProblem, OcpSpec,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SccMethod {
    Multiplier,
    Pulse,
}

impl SccMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            SccMethod::Multiplier => "multiplier",
            SccMethod::Pulse => "pulse",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SccPoint {
    pub step: usize,
    pub year: f64,
    /// USD per tonne of CO2.
    pub scc: f64,
    pub method: SccMethod,
    pub lambda_e: f64,
    pub lambda_c: f64,
}

/// A step left out of a series because λ_C could not be used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SccAnomaly {
    pub step: usize,
    pub lambda_e: f64,
    pub lambda_c: f64,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SccSeries {
    pub rho: f64,
    pub points: Vec<SccPoint>,
    pub anomalies: Vec<SccAnomaly>,
}

impl SccSeries {
    pub fn at_step(&self, step: usize) -> Option<f64> {
        self.points.iter().find(|p| p.step == step).map(|p| p.scc)
    }

    pub fn at_year(&self, year: f64) -> Option<f64> {
        self.points
            .iter()
            .find(|p| (p.year - year).abs() < 1e-9)
            .map(|p| p.scc)
    }
}

/// −1000·λ_E/λ_C.
pub fn scc_ratio(lambda_e: f64, lambda_c: f64) -> f64 {
    if lambda_e == 0.0 {
        return 0.0;
    }
    -1000.0 * lambda_e / lambda_c
}

fn push_ratio(series: &mut SccSeries, p: &ParameterSet, step: usize, lambda_e: f64, lambda_c: f64) {
    let reason = if !lambda_c.is_finite() || !lambda_e.is_finite() {
        Some("non-finite multiplier")
    } else if lambda_c == 0.0 {
        Some("lambda_C is zero")
    } else if lambda_c < 0.0 {
        Some("lambda_C is negative")
    } else {
        None
    };
    if let Some(reason) = reason {
        log::warn!("scc step {step} skipped: {reason} (lambda_E = {lambda_e:e}, lambda_C = {lambda_c:e})");
        series.anomalies.push(SccAnomaly {
            step,
            lambda_e,
            lambda_c,
            reason: reason.into(),
        });
        return;
    }
    series.points.push(SccPoint {
        step,
        year: p.year(step),
        scc: scc_ratio(lambda_e, lambda_c),
        method: SccMethod::Multiplier,
        lambda_e,
        lambda_c,
    });
}

/// Per-step SCC over steps 1..N of an optimal open-loop solution. Step
/// numbers follow the problem's own time index, so an MPC subproblem
/// starting at time i reports steps i..i+N−1.
pub fn scc_from_solution(prob: &NlpProblem, res: &SolveResult) -> Result<SccSeries> {
    if !res.is_optimal() {
        return Err(Error::Precondition(format!(
            "multiplier SCC needs an optimal solution, got {}",
            res.status
        )));
    }
    let first = prob.states(&res.x)[0][idx::TIME].round() as usize;
    let mut series = SccSeries {
        rho: prob.spec().rho,
        ..Default::default()
    };
    for j in 1..=prob.horizon() {
        let le = res.eq_multipliers[prob.costate_row(j, idx::E)];
        let lc = res.eq_multipliers[prob.costate_row(j, idx::C)];
        push_ratio(&mut series, prob.params(), first + j - 1, le, lc);
    }
    Ok(series)
}

/// SCC along the applied closed-loop trajectory.
pub fn scc_from_closed_loop(run: &ClosedLoopRun, p: &ParameterSet, rho: f64) -> SccSeries {
    let mut series = SccSeries {
        rho,
        ..Default::default()
    };
    for (i, (&le, &lc)) in run.lambda_e.iter().zip(&run.lambda_c).enumerate() {
        push_ratio(&mut series, p, i + 1, le, lc);
    }
    series
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PulseDiscount {
    /// Constant annual rate.
    Flat(f64),
    /// Discounted marginal utility of consumption relative to the pulse step,
    /// the weighting implied by the welfare objective.
    MarginalUtility,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseOptions {
    /// Step at which the pulse is emitted.
    pub step: usize,
    /// GtCO2 emitted during that step.
    pub size: f64,
    pub discount: PulseDiscount,
    /// Steps simulated after the pulse.
    pub tail_steps: usize,
}

impl PulseOptions {
    pub fn new(step: usize, size: f64, discount: PulseDiscount) -> Self {
        PulseOptions {
            step,
            size,
            discount,
            tail_steps: 100,
        }
    }
}

/// The inputs of a solved scenario, ready for re-simulation.
#[derive(Clone, Debug, PartialEq)]
pub struct PulseBaseline {
    pub params: ParameterSet,
    pub rho: f64,
    pub x1: AugmentedState,
    pub inputs: Vec<Input>,
}

impl PulseBaseline {
    pub fn from_solution(prob: &NlpProblem, res: &SolveResult) -> Result<Self> {
        if !res.is_optimal() {
            return Err(Error::Precondition(format!(
                "pulse baseline needs an optimal solution, got {}",
                res.status
            )));
        }
        Ok(PulseBaseline {
            params: prob.params().clone(),
            rho: prob.spec().rho,
            x1: prob.states(&res.x)[0],
            inputs: prob.inputs(&res.x),
        })
    }

    fn first_step(&self) -> usize {
        self.x1[idx::TIME].round() as usize
    }

    /// States from x1 through `last`, holding the final input beyond the
    /// solved horizon and adding `pulse` GtCO2 to E at step `at`.
    fn simulate(&self, last: usize, at: usize, pulse: f64) -> Result<Vec<AugmentedState>> {
        let first = self.first_step();
        let n = last - first + 1;
        let mut x = self.x1;
        let mut states = Vec::with_capacity(n);
        for j in 0..n {
            if first + j == at {
                x[idx::E] += pulse;
            }
            states.push(x);
            if j + 1 == n {
                break;
            }
            let w = self
                .inputs
                .get(j)
                .or(self.inputs.last())
                .copied()
                .unwrap_or([x[idx::MU], x[idx::SAVINGS]]);
            x = augmented_step(&self.params, self.rho, &x, &w)?;
            if let Some(k) = x.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    step: first + j + 1,
                    component: k + 1,
                });
            }
            if !(x[idx::C] > 0.0) {
                return Err(Error::domain(
                    "pulse",
                    format!("consumption is nonpositive at step {}", first + j + 1),
                ));
            }
        }
        Ok(states)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PulseResult {
    pub step: usize,
    pub year: f64,
    pub size: f64,
    pub discount: PulseDiscount,
    pub scc: f64,
    /// max_i |C_base(i) − C_pulse(i)| / C_base(i).
    pub max_relative_deviation: f64,
    /// Share of the weighted sum contributed by the last tenth of the
    /// simulated steps.
    pub tail_share: f64,
    pub baseline: Vec<AugmentedState>,
    pub pulsed: Vec<AugmentedState>,
}

impl PulseResult {
    pub fn point(&self) -> SccPoint {
        SccPoint {
            step: self.step,
            year: self.year,
            scc: self.scc,
            method: SccMethod::Pulse,
            lambda_e: f64::NAN,
            lambda_c: f64::NAN,
        }
    }
}

fn check_pulse(base: &PulseBaseline, opts: &PulseOptions) -> Result<()> {
    let first = base.first_step();
    if opts.step < first || opts.step > first + base.inputs.len() {
        return Err(Error::Precondition(format!(
            "pulse step {} outside the solved steps {}..={}",
            opts.step,
            first,
            first + base.inputs.len()
        )));
    }
    if !opts.size.is_finite() || opts.size < 0.0 {
        return Err(Error::Precondition(format!("pulse size {} must be nonnegative", opts.size)));
    }
    if opts.tail_steps < 1 {
        return Err(Error::Precondition("pulse tail must be at least one step".into()));
    }
    if let PulseDiscount::Flat(r) = opts.discount {
        if !(r > -1.0) {
            return Err(Error::Precondition(format!("pulse discount rate {r} is not usable")));
        }
    }
    Ok(())
}

fn weighted_loss(
    p: &ParameterSet,
    rho: f64,
    opts: &PulseOptions,
    baseline: &[AugmentedState],
    pulsed: &[AugmentedState],
) -> (f64, f64, f64) {
    let k0 = baseline
        .iter()
        .position(|x| x[idx::TIME].round() as usize == opts.step)
        .unwrap_or(0);
    let pc = |x: &AugmentedState| x[idx::C] / x[idx::L];
    let c_p = pc(&baseline[k0]);
    let mut terms = Vec::with_capacity(baseline.len() - k0);
    let mut max_dev = 0.0f64;
    for (b, q) in baseline.iter().zip(pulsed).skip(k0) {
        let years = p.delta * (b[idx::TIME] - opts.step as f64);
        let w = match opts.discount {
            PulseDiscount::Flat(r) => (1.0 + r).powf(-years),
            PulseDiscount::MarginalUtility => {
                (1.0 + rho).powf(-years) * (pc(b) / c_p).powf(-p.alpha)
            }
        };
        terms.push(w * (b[idx::C] - q[idx::C]));
        max_dev = max_dev.max((b[idx::C] - q[idx::C]).abs() / b[idx::C]);
    }
    let total: f64 = terms.iter().sum();
    let tail_len = (terms.len() / 10).max(1);
    let tail: f64 = terms[terms.len() - tail_len..].iter().sum();
    let abs_total: f64 = terms.iter().map(|t| t.abs()).sum();
    let tail_share = if abs_total > 0.0 {
        tail.abs() / abs_total
    } else {
        0.0
    };
    (total, max_dev, tail_share)
}

/// SCC = 1000·Σ_i d(i)·(C_base(i) − C_pulse(i))/size with the baseline
/// inputs held fixed after the pulse.
pub fn scc_pulse(base: &PulseBaseline, opts: &PulseOptions) -> Result<PulseResult> {
    check_pulse(base, opts)?;
    let last = opts.step + opts.tail_steps;
    let baseline = base.simulate(last, 0, 0.0)?;
    let pulsed = if opts.size == 0.0 {
        baseline.clone()
    } else {
        base.simulate(last, opts.step, opts.size)?
    };
    let (total, max_dev, tail_share) = weighted_loss(&base.params, base.rho, opts, &baseline, &pulsed);
    let scc = if opts.size == 0.0 {
        0.0
    } else {
        1000.0 * total / opts.size
    };
    Ok(PulseResult {
        step: opts.step,
        year: base.params.year(opts.step),
        size: opts.size,
        discount: opts.discount,
        scc,
        max_relative_deviation: max_dev,
        tail_share,
        baseline,
        pulsed,
    })
}

/// Pulse SCC with the inputs re-optimized from the pulse step on. Both the
/// baseline and the pulsed trajectories are re-solved over the template's
/// horizon from the baseline state at the pulse step.
pub fn scc_pulse_reoptimized(
    base: &PulseBaseline,
    template: &OcpSpec,
    opts: &PulseOptions,
    solver: &SolverOptions,
) -> Result<PulseResult> {
    check_pulse(base, opts)?;
    let x_p = *base
        .simulate(opts.step, 0, 0.0)?
        .last()
        .ok_or_else(|| Error::Precondition("empty baseline".into()))?;
    let mut x_q = x_p;
    x_q[idx::E] += opts.size;
    let run = |x: &AugmentedState| -> Result<Vec<AugmentedState>> {
        let prob = build_ocp2(template, x)?;
        let res = solve(&prob, solver, None)?;
        if !res.is_optimal() {
            return Err(Error::Solve {
                step: opts.step,
                status: res.status.to_string(),
            });
        }
        Ok(prob.states(&res.x))
    };
    let baseline = run(&x_p)?;
    let pulsed = if opts.size == 0.0 {
        baseline.clone()
    } else {
        run(&x_q)?
    };
    let (total, max_dev, tail_share) = weighted_loss(&base.params, base.rho, opts, &baseline, &pulsed);
    let scc = if opts.size == 0.0 {
        0.0
    } else {
        1000.0 * total / opts.size
    };
    Ok(PulseResult {
        step: opts.step,
        year: base.params.year(opts.step),
        size: opts.size,
        discount: opts.discount,
        scc,
        max_relative_deviation: max_dev,
        tail_share,
        baseline,
        pulsed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossValidationRow {
    pub step: usize,
    pub year: f64,
    pub multiplier: f64,
    pub pulse: f64,
    pub relative_deviation: f64,
    pub flagged: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub threshold: f64,
    pub rows: Vec<CrossValidationRow>,
}

impl CrossValidation {
    pub fn any_flagged(&self) -> bool {
        self.rows.iter().any(|r| r.flagged)
    }

    pub fn max_deviation(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.relative_deviation)
            .fold(0.0, f64::max)
    }
}

/// Relative deviation |pulse − multiplier|/|multiplier| per pulse step;
/// rows above `threshold` are flagged.
pub fn cross_validate(series: &SccSeries, pulses: &[PulseResult], threshold: f64) -> CrossValidation {
    let mut out = CrossValidation {
        threshold,
        rows: Vec::new(),
    };
    for pr in pulses {
        let Some(m) = series.at_step(pr.step) else {
            continue;
        };
        let dev = if m == 0.0 {
            if pr.scc == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (pr.scc - m).abs() / m.abs()
        };
        out.rows.push(CrossValidationRow {
            step: pr.step,
            year: pr.year,
            multiplier: m,
            pulse: pr.scc,
            relative_deviation: dev,
            flagged: !(dev <= threshold),
        });
    }
    out
}
