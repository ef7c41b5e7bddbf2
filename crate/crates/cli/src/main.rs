use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dice_mpc_cli::output::prepare_dir;
use dice_mpc_cli::{parse_entries, run_scenario, write_outputs, Entry, Origin, ScenarioConfig};

#[derive(Parser, Debug)]
#[command(name = "dice-mpc", version, about = "DICE welfare optimization, receding-horizon control and social cost of carbon")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one scenario and write its artifacts.
    Run(RunArgs),
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    /// Scenario file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    vintage: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    /// Prediction horizon in steps.
    #[arg(long = "N")]
    n: Option<usize>,
    /// Closed-loop steps for mode mpc.
    #[arg(long = "N-sim")]
    n_sim: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    tmax: Option<f64>,
    #[arg(long = "rate-bound")]
    rate_bound: Option<f64>,
    #[arg(long = "growth-bound")]
    growth_bound: Option<f64>,
    #[arg(long = "pulse-year")]
    pulse_year: Option<f64>,
    #[arg(long = "pulse-size")]
    pulse_size: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for independent solves.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
}

impl RunArgs {
    fn flag_entries(&self) -> Vec<Entry> {
        let mut v = Vec::new();
        let mut push = |flag: &'static str, key: &str, value: Option<String>| {
            if let Some(value) = value {
                v.push(Entry {
                    origin: Origin::Flag(flag),
                    key: key.into(),
                    value,
                });
            }
        };
        push("vintage", "vintage", self.vintage.clone());
        push("mode", "mode", self.mode.clone());
        push("N", "N", self.n.map(|x| x.to_string()));
        push("N-sim", "N_sim", self.n_sim.map(|x| x.to_string()));
        push("rho", "rho", self.rho.map(|x| x.to_string()));
        push("tmax", "T_max", self.tmax.map(|x| x.to_string()));
        push("rate-bound", "delta_mu", self.rate_bound.map(|x| x.to_string()));
        push("growth-bound", "gamma_mu", self.growth_bound.map(|x| x.to_string()));
        push("pulse-year", "pulse_year", self.pulse_year.map(|x| x.to_string()));
        push("pulse-size", "pulse_size", self.pulse_size.map(|x| x.to_string()));
        push("out", "out", self.out.as_ref().map(|p| p.display().to_string()));
        v
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DICE_MPC_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 4 } else { 0 });
        }
    };
    let Command::Run(args) = cli.command;
    ExitCode::from(execute(&args) as u8)
}

fn execute(args: &RunArgs) -> i32 {
    let started = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut entries = match &args.config {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(text) => match parse_entries(&text) {
                Ok(e) => e,
                Err(e) => {
                    eprintln!("error: {}: {e}", path.display());
                    return 4;
                }
            },
            Err(e) => {
                eprintln!("error: cannot read {}: {e}", path.display());
                return 4;
            }
        },
        None => Vec::new(),
    };
    entries.extend(args.flag_entries());
    let cfg = match ScenarioConfig::from_entries(&entries) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 4;
        }
    };
    let params_text = match cfg.parameter_set() {
        Ok(p) => p.to_override_text(),
        Err(e) => {
            eprintln!("error: {e}");
            return 4;
        }
    };
    if let Err(e) = prepare_dir(&cfg.out, args.force) {
        eprintln!("error: {e}");
        return 4;
    }
    let out = match run_scenario(&cfg, args.jobs) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    match write_outputs(&cfg, &params_text, &out, &cfg.out, started) {
        Ok(files) => {
            println!("{} ({}): wrote {} to {}", cfg.mode, out.status.as_str(), files.join(", "), cfg.out.display());
            if let Some(t) = out.summary.get("threshold") {
                println!("threshold {} = {t}", out.summary["search"]);
            }
            out.status.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            3
        }
    }
}
