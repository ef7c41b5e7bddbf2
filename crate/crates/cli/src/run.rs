//! Scenario execution.

use std::sync::Mutex;

use dice_core::dynamics::{damages_factor, gross_output, net_output};
use dice_core::exogenous::abatement_cost_coeff;
use dice_core::mpc::{run_mpc, MpcConfig};
use dice_core::nlp::{solve, SolveResult, SolverOptions, Status};
use dice_core::scc::{
    cross_validate, scc_from_closed_loop, scc_from_solution, scc_pulse, scc_pulse_reoptimized,
    PulseBaseline, PulseDiscount, PulseOptions, PulseResult, SccPoint, SccSeries,
};
use dice_core::transcription::{build_ocp1, idx, AugmentedState, NlpProblem, OcpSpec};
use dice_core::ParameterSet;
use serde_json::{json, Value};

use crate::config::{ConfigError, Mode, ScenarioConfig, SearchTarget};

/// Overall outcome, mapped to the process exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum RunStatus {
    Optimal,
    Infeasible,
    Failure,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Optimal => 0,
            RunStatus::Infeasible => 2,
            RunStatus::Failure => 3,
        }
    }

    pub fn from_solver(s: Status) -> Self {
        match s {
            Status::Optimal => RunStatus::Optimal,
            Status::Infeasible => RunStatus::Infeasible,
            _ => RunStatus::Failure,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Optimal => "optimal",
            RunStatus::Infeasible => "infeasible",
            RunStatus::Failure => "failure",
        }
    }
}

/// One row of the trajectory table. E, C and I are annual flows.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub step: usize,
    pub year: f64,
    pub t_at: f64,
    pub t_lo: f64,
    pub m_at: f64,
    pub m_up: f64,
    pub m_lo: f64,
    pub k: f64,
    pub l: f64,
    pub a: f64,
    pub sigma: f64,
    pub mu: f64,
    pub s: f64,
    pub y: f64,
    pub q: f64,
    pub e: f64,
    pub c: f64,
    pub i: f64,
    pub damages_factor: f64,
    pub scc: Option<f64>,
}

impl TrajectoryRow {
    pub fn from_state(p: &ParameterSet, x: &AugmentedState, scc: Option<f64>) -> Self {
        let y = gross_output(x[idx::A], x[idx::K], x[idx::L], p.gamma);
        let theta1 = abatement_cost_coeff(x[idx::SIGMA], p.pb, p.delta_pb, p.theta2, x[idx::TIME]);
        let q = net_output(y, x[idx::T_AT], theta1, x[idx::MU], p);
        let step = x[idx::TIME].round() as usize;
        TrajectoryRow {
            step,
            year: p.year(step),
            t_at: x[idx::T_AT],
            t_lo: x[idx::T_LO],
            m_at: x[idx::M_AT],
            m_up: x[idx::M_UP],
            m_lo: x[idx::M_LO],
            k: x[idx::K],
            l: x[idx::L],
            a: x[idx::A],
            sigma: x[idx::SIGMA],
            mu: x[idx::MU],
            s: x[idx::SAVINGS],
            y,
            q,
            e: x[idx::E] / p.delta,
            c: x[idx::C] / p.delta,
            i: x[idx::SAVINGS] * q,
            damages_factor: damages_factor(x[idx::T_AT], p.a2, p.a3),
            scc,
        }
    }
}

/// Rows of the pulse comparison table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PulseRow {
    pub step: usize,
    pub year: f64,
    pub t_base: f64,
    pub t_pulse: f64,
    pub m_at_base: f64,
    pub m_at_pulse: f64,
    pub c_base: f64,
    pub c_pulse: f64,
}

/// Everything a run produces, before serialization.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub status: RunStatus,
    pub trajectory: Vec<TrajectoryRow>,
    pub scc: Vec<(f64, SccPoint)>,
    pub pulse: Vec<PulseRow>,
    pub iterations: Option<String>,
    pub summary: Value,
}

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Model(dice_core::Error),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "configuration error: {e}"),
            RunError::Model(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

impl From<dice_core::Error> for RunError {
    fn from(e: dice_core::Error) -> Self {
        RunError::Model(e)
    }
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 4,
            RunError::Model(dice_core::Error::Options(_))
            | RunError::Model(dice_core::Error::InvalidParameters(_))
            | RunError::Model(dice_core::Error::Parse(_)) => 4,
            RunError::Model(_) => 3,
        }
    }
}

pub fn ocp_spec(cfg: &ScenarioConfig, p: &ParameterSet, rho: f64) -> OcpSpec {
    let mut spec = OcpSpec::new(p.clone(), cfg.horizon);
    spec.rho = rho;
    spec.fix_mu1 = cfg.fix_mu1;
    spec.t_max = cfg.t_max;
    spec.rate_bound = cfg.delta_mu;
    spec.growth_bound = cfg.gamma_mu;
    spec.savings_tail = cfg.savings_tail;
    spec.scaled_objective = cfg.scaled_objective;
    spec
}

pub fn solver_options(cfg: &ScenarioConfig) -> SolverOptions {
    let mut o = SolverOptions::default();
    if let Some(m) = cfg.max_iter {
        o.max_iter = m;
    }
    o
}

fn solve_open_loop(spec: &OcpSpec, opts: &SolverOptions) -> Result<(NlpProblem, SolveResult), RunError> {
    let prob = build_ocp1(spec)?;
    let res = solve(&prob, opts, None)?;
    log::info!(
        "open loop N = {}, rho = {}: {} after {} iterations",
        spec.horizon,
        spec.rho,
        res.status,
        res.diagnostics.iterations
    );
    Ok((prob, res))
}

fn trajectory_of(prob: &NlpProblem, res: &SolveResult, series: Option<&SccSeries>) -> Vec<TrajectoryRow> {
    let p = prob.params();
    prob.states(&res.x)
        .iter()
        .map(|x| {
            let step = x[idx::TIME].round() as usize;
            TrajectoryRow::from_state(p, x, series.and_then(|s| s.at_step(step)))
        })
        .collect()
}

fn solve_summary(res: &SolveResult) -> Value {
    json!({
        "status": res.status.to_string(),
        "iterations": res.diagnostics.iterations,
        "restorations": res.diagnostics.restorations,
        "objective": res.objective,
        "stationarity": res.diagnostics.stationarity,
        "feasibility": res.diagnostics.feasibility,
        "message": res.diagnostics.message,
    })
}

fn points(series: &SccSeries) -> Vec<(f64, SccPoint)> {
    series.points.iter().map(|p| (series.rho, *p)).collect()
}

fn anomalies(series: &SccSeries) -> Value {
    Value::Array(
        series
            .anomalies
            .iter()
            .map(|a| json!({"step": a.step, "lambda_E": a.lambda_e, "lambda_C": a.lambda_c, "reason": a.reason}))
            .collect(),
    )
}

/// Runs the scenario. `jobs` bounds the worker threads used by modes with
/// independent solves.
pub fn run_scenario(cfg: &ScenarioConfig, jobs: usize) -> Result<RunOutput, RunError> {
    let p = cfg.parameter_set()?;
    let opts = solver_options(cfg);
    match cfg.mode {
        Mode::OpenLoop => open_loop(cfg, &p, &opts),
        Mode::Mpc => mpc(cfg, &p, &opts),
        Mode::SccTable => scc_table(cfg, &p, &opts, jobs.max(1)),
        Mode::Pulse => pulse(cfg, &p, &opts),
        Mode::FeasibilitySearch => feasibility_search(cfg, &p, &opts, jobs.max(1)),
    }
}

fn open_loop(cfg: &ScenarioConfig, p: &ParameterSet, opts: &SolverOptions) -> Result<RunOutput, RunError> {
    let (prob, res) = solve_open_loop(&ocp_spec(cfg, p, cfg.rho), opts)?;
    let status = RunStatus::from_solver(res.status);
    let iterations = cfg.iterations_log.then(|| res.iterations_csv());
    if status != RunStatus::Optimal {
        return Ok(RunOutput {
            status,
            trajectory: Vec::new(),
            scc: Vec::new(),
            pulse: Vec::new(),
            iterations,
            summary: json!({"solve": solve_summary(&res)}),
        });
    }
    let series = scc_from_solution(&prob, &res)?;
    let trajectory = trajectory_of(&prob, &res, Some(&series));
    let peak = trajectory.iter().map(|r| r.t_at).fold(f64::NEG_INFINITY, f64::max);
    Ok(RunOutput {
        status,
        summary: json!({
            "solve": solve_summary(&res),
            "peak_T_AT": peak,
            "scc_anomalies": anomalies(&series),
        }),
        trajectory,
        scc: points(&series),
        pulse: Vec::new(),
        iterations,
    })
}

fn mpc(cfg: &ScenarioConfig, p: &ParameterSet, opts: &SolverOptions) -> Result<RunOutput, RunError> {
    let mut mc = MpcConfig::new(ocp_spec(cfg, p, cfg.rho), cfg.n_sim.unwrap_or(1));
    mc.warm_start = cfg.warm_start;
    mc.lambda_indexing = cfg.lambda_indexing;
    mc.solver = opts.clone();
    let run = run_mpc(&mc)?;
    let series = scc_from_closed_loop(&run, p, cfg.rho);
    let trajectory = run
        .states
        .iter()
        .enumerate()
        .map(|(i, x)| TrajectoryRow::from_state(p, x, series.at_step(i + 1)))
        .collect();
    let status = match &run.failure {
        None => RunStatus::Optimal,
        Some(f) => RunStatus::from_solver(f.status),
    };
    let steps: Vec<Value> = run
        .steps
        .iter()
        .map(|s| {
            json!({
                "step": s.step,
                "status": s.status.to_string(),
                "iterations": s.iterations,
                "restorations": s.restorations,
                "objective": s.objective,
            })
        })
        .collect();
    Ok(RunOutput {
        status,
        trajectory,
        scc: points(&series),
        pulse: Vec::new(),
        iterations: None,
        summary: json!({
            "steps": steps,
            "shift_gap": run.shift_gap,
            "failure": run.failure.as_ref().map(|f| json!({"step": f.step, "status": f.status.to_string(), "message": f.message})),
            "scc_anomalies": anomalies(&series),
        }),
    })
}

/// Runs `f` over `items` on up to `jobs` threads, keeping input order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    let next = Mutex::new(0usize);
    std::thread::scope(|s| {
        for _ in 0..jobs.min(items.len()).max(1) {
            s.spawn(|| loop {
                let k = {
                    let mut n = next.lock().unwrap();
                    let k = *n;
                    *n += 1;
                    k
                };
                if k >= items.len() {
                    break;
                }
                let r = f(&items[k]);
                *slots[k].lock().unwrap() = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every item is processed"))
        .collect()
}

fn scc_table(cfg: &ScenarioConfig, p: &ParameterSet, opts: &SolverOptions, jobs: usize) -> Result<RunOutput, RunError> {
    let results = parallel_map(&cfg.rhos, jobs, |&rho| {
        solve_open_loop(&ocp_spec(cfg, p, rho), opts).and_then(|(prob, res)| {
            let series = if res.is_optimal() {
                Some(scc_from_solution(&prob, &res)?)
            } else {
                None
            };
            Ok((res, series))
        })
    });
    let mut status = RunStatus::Optimal;
    let mut scc = Vec::new();
    let mut cells = Vec::new();
    for (rho, r) in cfg.rhos.iter().zip(results) {
        let (res, series) = r?;
        status = status.max(RunStatus::from_solver(res.status));
        let mut row = serde_json::Map::new();
        row.insert("rho".into(), json!(rho));
        row.insert("solve".into(), solve_summary(&res));
        if let Some(series) = series {
            let years: serde_json::Map<String, Value> = cfg
                .scc_years
                .iter()
                .map(|y| (format!("{y}"), json!(series.at_year(*y))))
                .collect();
            row.insert("scc".into(), Value::Object(years));
            row.insert("scc_anomalies".into(), anomalies(&series));
            scc.extend(points(&series));
        }
        cells.push(Value::Object(row));
    }
    Ok(RunOutput {
        status,
        trajectory: Vec::new(),
        scc,
        pulse: Vec::new(),
        iterations: None,
        summary: json!({"table": cells}),
    })
}

fn discount_label(d: PulseDiscount) -> Value {
    match d {
        PulseDiscount::Flat(r) => json!(r),
        PulseDiscount::MarginalUtility => json!("marginal_utility"),
    }
}

fn pulse(cfg: &ScenarioConfig, p: &ParameterSet, opts: &SolverOptions) -> Result<RunOutput, RunError> {
    let spec = ocp_spec(cfg, p, cfg.rho);
    let (prob, res) = solve_open_loop(&spec, opts)?;
    if !res.is_optimal() {
        return Ok(RunOutput {
            status: RunStatus::from_solver(res.status),
            trajectory: Vec::new(),
            scc: Vec::new(),
            pulse: Vec::new(),
            iterations: cfg.iterations_log.then(|| res.iterations_csv()),
            summary: json!({"solve": solve_summary(&res)}),
        });
    }
    let series = scc_from_solution(&prob, &res)?;
    let year = cfg.pulse_year.unwrap_or(p.t0);
    let step = ((year - p.t0) / p.delta).round() as usize + 1;
    let base = PulseBaseline::from_solution(&prob, &res)?;
    let mut po = PulseOptions::new(step, cfg.pulse_size, cfg.pulse_discount);
    po.tail_steps = cfg.pulse_tail;
    let pr: PulseResult = if cfg.pulse_reoptimize {
        scc_pulse_reoptimized(&base, &spec, &po, opts)?
    } else {
        scc_pulse(&base, &po)?
    };
    let cv = cross_validate(&series, std::slice::from_ref(&pr), 0.1);
    let pulse_rows = pr
        .baseline
        .iter()
        .zip(&pr.pulsed)
        .map(|(b, q)| {
            let s = b[idx::TIME].round() as usize;
            PulseRow {
                step: s,
                year: p.year(s),
                t_base: b[idx::T_AT],
                t_pulse: q[idx::T_AT],
                m_at_base: b[idx::M_AT],
                m_at_pulse: q[idx::M_AT],
                c_base: b[idx::C] / p.delta,
                c_pulse: q[idx::C] / p.delta,
            }
        })
        .collect();
    let mut scc = points(&series);
    scc.push((cfg.rho, pr.point()));
    Ok(RunOutput {
        status: RunStatus::Optimal,
        trajectory: trajectory_of(&prob, &res, Some(&series)),
        scc,
        pulse: pulse_rows,
        iterations: cfg.iterations_log.then(|| res.iterations_csv()),
        summary: json!({
            "solve": solve_summary(&res),
            "pulse": {
                "year": pr.year,
                "size_GtCO2": pr.size,
                "discount": discount_label(pr.discount),
                "reoptimized": cfg.pulse_reoptimize,
                "scc": pr.scc,
                "max_relative_consumption_deviation": pr.max_relative_deviation,
                "tail_share": pr.tail_share,
            },
            "multiplier_scc": series.at_step(step),
            "cross_validation": cv.rows.first().map(|r| json!({
                "relative_deviation": r.relative_deviation,
                "flagged": r.flagged,
            })),
        }),
    })
}

/// Result of one feasibility probe.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub value: f64,
    pub status: Status,
    pub peak_t_at: Option<f64>,
}

fn probe(cfg: &ScenarioConfig, p: &ParameterSet, opts: &SolverOptions, target: SearchTarget, v: f64) -> Result<(Probe, Option<(NlpProblem, SolveResult)>), RunError> {
    let mut spec = ocp_spec(cfg, p, cfg.rho);
    match target {
        SearchTarget::TMax => spec.t_max = Some(v),
        SearchTarget::GammaMu => spec.growth_bound = Some(v),
    }
    let (mut prob, mut res) = solve_open_loop(&spec, opts)?;
    if !matches!(res.status, Status::Optimal | Status::Infeasible) {
        let mut retry = opts.clone();
        retry.max_iter *= 2;
        retry.mu_init = 1.0;
        log::info!("{target} = {v}: {} on first attempt, retrying", res.status);
        (prob, res) = solve_open_loop(&spec, &retry)?;
    }
    let peak = res
        .is_optimal()
        .then(|| prob.states(&res.x).iter().map(|x| x[idx::T_AT]).fold(f64::NEG_INFINITY, f64::max));
    let status = res.status;
    Ok((
        Probe {
            value: v,
            status,
            peak_t_at: peak,
        },
        res.is_optimal().then_some((prob, res)),
    ))
}

fn feasibility_search(cfg: &ScenarioConfig, p: &ParameterSet, opts: &SolverOptions, jobs: usize) -> Result<RunOutput, RunError> {
    let target = cfg.search.expect("validated");
    let (mut lo, mut hi) = cfg.search_bracket(target);
    let mut probes: Vec<Probe> = Vec::new();
    let record = |pr: &Probe| json!({"value": pr.value, "status": pr.status.to_string(), "peak_T_AT": pr.peak_t_at});

    let (top, mut best) = probe(cfg, p, opts, target, hi)?;
    probes.push(top.clone());
    if top.status != Status::Optimal {
        let status = RunStatus::from_solver(top.status);
        return Ok(RunOutput {
            status,
            trajectory: Vec::new(),
            scc: Vec::new(),
            pulse: Vec::new(),
            iterations: None,
            summary: json!({
                "search": target.to_string(),
                "threshold": Value::Null,
                "message": format!("upper end {hi} is not feasible ({})", top.status),
                "probes": probes.iter().map(record).collect::<Vec<_>>(),
            }),
        });
    }
    let (bottom, low_sol) = probe(cfg, p, opts, target, lo)?;
    probes.push(bottom.clone());
    let mut failure = None;
    match bottom.status {
        Status::Optimal => {
            best = low_sol;
            hi = lo;
        }
        Status::Infeasible => {}
        s => failure = Some(s),
    }
    while failure.is_none() && hi - lo > cfg.search_resolution * (1.0 + 1e-9) {
        let k = jobs;
        let pts: Vec<f64> = (1..=k).map(|m| lo + (hi - lo) * m as f64 / (k + 1) as f64).collect();
        let results = parallel_map(&pts, jobs, |&v| probe(cfg, p, opts, target, v));
        let mut new_lo = lo;
        let mut new_hi = hi;
        let mut new_best = None;
        for r in results {
            let (pr, sol) = r?;
            probes.push(pr.clone());
            match pr.status {
                Status::Optimal => {
                    if pr.value < new_hi {
                        new_hi = pr.value;
                        new_best = sol;
                    }
                }
                Status::Infeasible => new_lo = new_lo.max(pr.value),
                s => failure = Some(s),
            }
        }
        if new_lo >= new_hi {
            failure = Some(Status::NumericFailure);
            log::warn!("feasibility is not monotone in {target} near {new_hi}");
        }
        lo = new_lo;
        if new_hi < hi {
            hi = new_hi;
            best = new_best;
        }
    }
    let status = if failure.is_some() {
        RunStatus::Failure
    } else {
        RunStatus::Optimal
    };
    let (trajectory, scc) = match &best {
        Some((prob, res)) => {
            let series = scc_from_solution(prob, res)?;
            (trajectory_of(prob, res, Some(&series)), points(&series))
        }
        None => (Vec::new(), Vec::new()),
    };
    let peak = trajectory.iter().map(|r| r.t_at).fold(f64::NEG_INFINITY, f64::max);
    Ok(RunOutput {
        status,
        trajectory,
        scc,
        pulse: Vec::new(),
        iterations: None,
        summary: json!({
            "search": target.to_string(),
            "threshold": hi,
            "infeasible_below": lo,
            "resolution": cfg.search_resolution,
            "peak_T_AT_at_threshold": peak,
            "failure": failure.map(|s| s.to_string()),
            "probes": probes.iter().map(record).collect::<Vec<_>>(),
        }),
    })
}
