//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero when a criterion fails that is not a recorded deviation.

use std::fmt::Write as _;
use std::process::ExitCode;
use std::time::Instant;

use dice_core::dynamics::carbon_step_total;
use dice_core::mpc::{run_mpc, MpcConfig};
use dice_core::nlp::{check_gradient, solve, Problem, SolveResult, SolverOptions, Status};
use dice_core::scc::{cross_validate, scc_from_solution, scc_pulse, PulseBaseline, PulseDiscount, PulseOptions, SccSeries};
use dice_core::transcription::{augmented_step, build_ocp1, idx, initial_augmented_state, NlpProblem, OcpSpec};
use dice_core::{load_parameter_set, Vintage};
use dice_mpc_cli::{parse_config, run_scenario, RunStatus};
use rand::{Rng, SeedableRng};

/// Criteria whose failure is analysed in the decisions ledger.
const RECORDED_DEVIATIONS: &[&str] = &["4b", "5"];

const TABLE: [(f64, [f64; 3]); 3] = [
    (0.005, [73.95, 89.31, 124.20]),
    (0.015, [27.14, 32.28, 44.54]),
    (0.03, [10.84, 12.54, 16.98]),
];
const TABLE_TOL: f64 = 0.05;

struct Outcome {
    id: &'static str,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(id: &'static str, name: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { id, name, pass, detail }
}

fn spec(n: usize, rho: f64) -> OcpSpec {
    let mut s = OcpSpec::new(load_parameter_set(Vintage::Dice2016R), n);
    s.rho = rho;
    s.fix_mu1 = true;
    s
}

fn solved(s: &OcpSpec) -> (NlpProblem, SolveResult) {
    let prob = build_ocp1(s).expect("problem builds");
    let res = solve(&prob, &SolverOptions::default(), None).expect("solver runs");
    (prob, res)
}

struct TableRun {
    rho: f64,
    prob: NlpProblem,
    res: SolveResult,
    series: Option<SccSeries>,
}

fn table_runs() -> Vec<TableRun> {
    std::thread::scope(|sc| {
        let handles: Vec<_> = TABLE
            .iter()
            .map(|&(rho, _)| {
                sc.spawn(move || {
                    let (prob, res) = solved(&spec(100, rho));
                    let series = scc_from_solution(&prob, &res).ok();
                    TableRun { rho, prob, res, series }
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    })
}

fn criterion1(runs: &[TableRun]) -> Outcome {
    let mut ok = true;
    let mut d = String::new();
    for (run, (_, reference)) in runs.iter().zip(TABLE) {
        let _ = write!(d, "rho={}:", run.rho);
        for (j, target) in [1usize, 2, 4].iter().zip(reference) {
            let v = run.series.as_ref().and_then(|s| s.at_step(*j)).unwrap_or(f64::NAN);
            let rel = (v - target).abs() / target;
            ok &= rel <= TABLE_TOL;
            let _ = write!(d, " {v:.2}/{target}");
        }
        d.push(';');
    }
    outcome("1", "SCC table within 5%", ok, d)
}

fn criterion2() -> Outcome {
    let p = load_parameter_set(Vintage::Dice2016R);
    let x1 = initial_augmented_state(&p, 0.03, 0.25).unwrap();
    let x2 = augmented_step(&p, p.rho, &x1, &[0.03, 0.25]).unwrap();
    let y1 = dice_core::dynamics::gross_output(x1[idx::A], x1[idx::K], x1[idx::L], p.gamma);
    let checks = [
        ("T_AT(2)", x2[idx::T_AT], 0.9887, 1e-3),
        ("M_AT(2)", x2[idx::M_AT], 891.3, 0.5),
        ("K(2)", x2[idx::K], 262.9, 0.5),
        ("Y(1)", y1, 105.2, 0.2),
    ];
    let ok = checks.iter().all(|(_, v, t, tol)| (v - t).abs() <= *tol);
    let d = checks
        .iter()
        .map(|(n, v, _, _)| format!("{n}={v:.4}"))
        .collect::<Vec<_>>()
        .join(" ");
    outcome("2", "one-step golden values", ok, d)
}

fn criterion3() -> Outcome {
    let (prob, res) = solved(&spec(120, 0.015));
    if !res.is_optimal() {
        return outcome("3", "MPC convergence", false, format!("N=120 reference: {}", res.status));
    }
    let reference = prob.states(&res.x);
    let ref_scc = scc_from_solution(&prob, &res).unwrap();
    let horizons = [10usize, 20, 40, 60];
    let runs: Vec<_> = std::thread::scope(|sc| {
        let hs: Vec<_> = horizons
            .iter()
            .map(|&n| sc.spawn(move || run_mpc(&MpcConfig::new(spec(n, 0.015), 40)).unwrap()))
            .collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut devs = Vec::new();
    for run in &runs {
        if !run.is_complete() {
            return outcome("3", "MPC convergence", false, format!("closed loop stopped: {:?}", run.failure));
        }
        let mut d = [0.0f64; 4];
        for (i, x) in run.states.iter().enumerate() {
            for (k, c) in [idx::T_AT, idx::MU, idx::SAVINGS].iter().enumerate() {
                d[k] = d[k].max((x[*c] - reference[i][*c]).abs());
            }
            let r = ref_scc.at_step(i + 1).unwrap();
            d[3] = d[3].max((run.scc[i] - r).abs() / r);
        }
        devs.push(d);
    }
    let monotone = (0..4).all(|k| devs.windows(2).all(|w| w[1][k] < w[0][k]));
    let s60 = runs[3].scc[0];
    let s120 = ref_scc.at_step(1).unwrap();
    let rel = (s60 - s120).abs() / s120;
    let d = format!(
        "max dev (T_AT, mu, s, SCC rel) by N: {}; SCC(2015) N=60 {s60:.3} vs N=120 {s120:.3} ({:.2}%)",
        horizons
            .iter()
            .zip(&devs)
            .map(|(n, d)| format!("N={n} [{:.2e} {:.2e} {:.2e} {:.2e}]", d[0], d[1], d[2], d[3]))
            .collect::<Vec<_>>()
            .join(" "),
        100.0 * rel
    );
    outcome("3", "MPC convergence", monotone && rel <= 0.03, d)
}

fn search(text: &str) -> (RunStatus, Option<f64>, String) {
    let cfg = parse_config(text).expect("config parses");
    let out = run_scenario(&cfg, 3).expect("search runs");
    let t = out.summary["threshold"].as_f64();
    let below = out.summary["infeasible_below"].as_f64();
    (out.status, t, format!("threshold {t:?}, infeasible at {below:?}"))
}

fn criterion4a() -> Outcome {
    let (st, t, d) = search("mode = feasibility_search\nsearch = T_max\nN = 100");
    let ok = st == RunStatus::Optimal && t.is_some_and(|t| (2.3..=2.5).contains(&t));
    outcome("4a", "minimal feasible T_max in [2.3, 2.5]", ok, d)
}

fn criterion4b() -> Outcome {
    let (st, t, d) = search("mode = feasibility_search\nsearch = gamma_mu\nT_max = 3\nN = 100");
    let ok = st == RunStatus::Optimal && t.is_some_and(|t| (0.45..=0.60).contains(&t));
    outcome("4b", "minimal feasible growth bound in [0.45, 0.60] at T_max = 3", ok, d)
}

fn criterion4c() -> Outcome {
    let mut s = spec(100, 0.015);
    s.t_max = Some(3.0);
    s.rate_bound = Some(0.1);
    let (prob, res) = solved(&s);
    if !res.is_optimal() {
        return outcome("4c", "rate bound 0.1 feasible, cap binds", false, res.status.to_string());
    }
    let peak = prob.states(&res.x).iter().map(|x| x[idx::T_AT]).fold(0.0, f64::max);
    outcome(
        "4c",
        "rate bound 0.1 feasible, cap binds",
        (peak - 3.0).abs() <= 0.01,
        format!("peak T_AT {peak:.4}"),
    )
}

fn criterion5(run: &TableRun) -> Outcome {
    let states = run.prob.states(&run.res.x);
    let (k, peak) = states
        .iter()
        .map(|x| x[idx::T_AT])
        .enumerate()
        .fold((0, f64::MIN), |a, (k, t)| if t > a.1 { (k, t) } else { a });
    let t2100 = states[17][idx::T_AT];
    outcome(
        "5",
        "unconstrained peak T_AT in [3.0, 4.5]",
        (3.0..=4.5).contains(&peak),
        format!("peak {peak:.3} at step {} (year {}), T_AT(2100) {t2100:.3}", k + 1, 2015 + 5 * k),
    )
}

fn criterion6a() -> Outcome {
    let prob = build_ocp1(&spec(10, 0.015)).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let w: Vec<[f64; 2]> = (0..10).map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.1..0.5)]).collect();
        let x = prob.rollout_point(0.03, rng.gen_range(0.1..0.5), &w).unwrap();
        worst = worst.max(check_gradient(&prob, &x, 1e-6).unwrap());
    }
    outcome("6a", "gradient audit", worst <= 1e-6, format!("max error {worst:.2e}"))
}

fn criterion6b() -> Outcome {
    let mut ok = true;
    let mut d = String::new();
    for v in [Vintage::Dice2013R, Vintage::Dice2016R] {
        let p = load_parameter_set(v);
        let r = p.phi_t_spectral_radius();
        let sums = p.phi_m_column_sums();
        let m = [851.0, 460.0, 1740.0];
        let next = carbon_step_total(m, 10.0, &p.phi_m, p.xi2);
        let leak: f64 = (0..3).map(|j| (sums[j] - 1.0) * m[j]).sum();
        let gap = next.iter().sum::<f64>() - m.iter().sum::<f64>() - p.xi2 * 10.0 - leak;
        ok &= r < 1.0 && sums.iter().all(|s| (s - 1.0).abs() < 1e-4) && gap.abs() < 1e-9;
        let _ = write!(d, "{v}: rho(Phi_T)={r:.4} col sums {sums:.6?} conservation gap {gap:.1e}; ");
    }
    outcome("6b", "carbon conservation, spectral radius, column sums", ok, d)
}

fn criterion6c(runs: &[TableRun]) -> Outcome {
    let Some(base) = runs.iter().find(|r| r.rho == 0.015).and_then(|r| r.series.clone()) else {
        return outcome("6c", "SCC scale invariance and orderings", false, "no base solution".into());
    };
    let mut s = spec(100, 0.015);
    s.scaled_objective = true;
    let (prob, res) = solved(&s);
    let scaled = scc_from_solution(&prob, &res).ok();
    let inv = scaled.as_ref().map_or(f64::INFINITY, |sc| {
        (1..=20)
            .map(|j| (sc.at_step(j).unwrap() - base.at_step(j).unwrap()).abs() / base.at_step(j).unwrap())
            .fold(0.0, f64::max)
    });
    let cells: Vec<Vec<f64>> = runs
        .iter()
        .map(|r| {
            [1usize, 2, 4]
                .iter()
                .map(|&j| r.series.as_ref().and_then(|s| s.at_step(j)).unwrap_or(f64::NAN))
                .collect()
        })
        .collect();
    let rho_monotone = (0..3).all(|j| cells[0][j] > cells[1][j] && cells[1][j] > cells[2][j]);
    let growing = cells.iter().all(|c| c[0] < c[1] && c[1] < c[2]);
    outcome(
        "6c",
        "SCC scale invariance and orderings",
        inv <= 1e-4 && rho_monotone && growing,
        format!("scaled vs plain max rel diff {inv:.1e}; decreasing in rho {rho_monotone}; increasing in time {growing}"),
    )
}

fn criterion6d(runs: &[TableRun]) -> Outcome {
    let Some(run) = runs.iter().find(|r| r.rho == 0.015) else {
        return outcome("6d", "pulse vs multiplier", false, "no base solution".into());
    };
    let series = run.series.clone().unwrap_or_default();
    let base = PulseBaseline::from_solution(&run.prob, &run.res).unwrap();
    let pulses: Vec<_> = (1..=8)
        .map(|step| scc_pulse(&base, &PulseOptions::new(step, 1.0, PulseDiscount::MarginalUtility)).unwrap())
        .collect();
    let cv = cross_validate(&series, &pulses, 0.10);
    outcome(
        "6d",
        "pulse vs multiplier within 10% (2015-2050, marginal-utility weights)",
        !cv.any_flagged() && cv.rows.len() == 8,
        format!("max deviation {:.2}%", 100.0 * cv.max_deviation()),
    )
}

fn criterion6e() -> Outcome {
    let prob = build_ocp1(&spec(100, 0.015)).unwrap();
    let inputs: Vec<[f64; 2]> = (0..100).map(|j| [(0.03 + 0.01 * j as f64).min(1.0), 0.25]).collect();
    let x = prob.rollout_point(0.03, 0.25, &inputs).unwrap();
    let c = prob.constraints(&x).unwrap();
    let states = prob.states(&x);
    let worst = c
        .iter()
        .enumerate()
        .map(|(r, v)| {
            let t = prob.eq_row_tag(r);
            v.abs() / states[t.step.saturating_sub(1).min(100)][t.comp].abs().max(1.0)
        })
        .fold(0.0, f64::max);
    let w = states[100][idx::W];
    let f = prob.objective(&x).unwrap();
    let obj = (f - w).abs() / w.abs();
    outcome(
        "6e",
        "rollout and objective equivalence",
        worst <= 1e-10 && obj <= 1e-10,
        format!("max rel residual {worst:.1e}, objective rel diff {obj:.1e}"),
    )
}

fn main() -> ExitCode {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !filter.is_empty() && !filter.iter().any(|f| "acceptance".contains(f.as_str())) {
        return ExitCode::SUCCESS;
    }
    let start = Instant::now();
    let table = table_runs();
    let mut results = vec![criterion1(&table), criterion2()];
    let mut heavy = std::thread::scope(|sc| {
        let h3 = sc.spawn(criterion3);
        let h4a = sc.spawn(criterion4a);
        let h4b = sc.spawn(criterion4b);
        let h4c = sc.spawn(criterion4c);
        vec![h3.join().unwrap(), h4a.join().unwrap(), h4b.join().unwrap(), h4c.join().unwrap()]
    });
    results.append(&mut heavy);
    let base = table.iter().find(|r| r.rho == 0.015).expect("rho 0.015 solved");
    results.push(criterion5(base));
    results.push(criterion6a());
    results.push(criterion6b());
    results.push(criterion6c(&table));
    results.push(criterion6d(&table));
    results.push(criterion6e());

    let mut unexpected = 0;
    for r in &results {
        let note = if !r.pass && RECORDED_DEVIATIONS.contains(&r.id) {
            " (recorded deviation)"
        } else {
            ""
        };
        if !r.pass && note.is_empty() {
            unexpected += 1;
        }
        println!(
            "criterion {:<3} {} {}{note}: {}",
            r.id,
            if r.pass { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        );
    }
    for r in &results {
        if r.pass && RECORDED_DEVIATIONS.contains(&r.id) {
            println!("note: criterion {} passed although recorded as a deviation", r.id);
        }
    }
    if table.iter().any(|r| r.res.status != Status::Optimal) {
        unexpected += 1;
    }
    println!(
        "acceptance: {} of {} criteria passed in {:.1}s",
        results.iter().filter(|r| r.pass).count(),
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if unexpected > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
