//! Scenario configuration: flat `key = value` text plus command-line overrides.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use dice_core::mpc::LambdaIndexing;
use dice_core::scc::PulseDiscount;
use dice_core::{load_parameter_set, ParameterSet, Vintage};
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    OpenLoop,
    Mpc,
    SccTable,
    Pulse,
    FeasibilitySearch,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "open_loop" => Ok(Mode::OpenLoop),
            "mpc" => Ok(Mode::Mpc),
            "scc_table" => Ok(Mode::SccTable),
            "pulse" => Ok(Mode::Pulse),
            "feasibility_search" => Ok(Mode::FeasibilitySearch),
            _ => Err(format!(
                "unknown mode '{s}' (expected open_loop, mpc, scc_table, pulse or feasibility_search)"
            )),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::OpenLoop => "open_loop",
            Mode::Mpc => "mpc",
            Mode::SccTable => "scc_table",
            Mode::Pulse => "pulse",
            Mode::FeasibilitySearch => "feasibility_search",
        })
    }
}

/// Quantity bisected by `feasibility_search`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SearchTarget {
    TMax,
    GammaMu,
}

impl FromStr for SearchTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "T_max" | "tmax" => Ok(SearchTarget::TMax),
            "gamma_mu" | "growth_bound" => Ok(SearchTarget::GammaMu),
            _ => Err(format!("unknown search target '{s}' (expected T_max or gamma_mu)")),
        }
    }
}

impl fmt::Display for SearchTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SearchTarget::TMax => "T_max",
            SearchTarget::GammaMu => "gamma_mu",
        })
    }
}

/// Where a setting came from, for error messages.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Origin {
    Line(usize),
    Flag(&'static str),
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Line(n) => write!(f, "line {n}"),
            Origin::Flag(name) => write!(f, "flag --{name}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub origin: Option<Origin>,
    pub key: Option<String>,
    pub message: String,
}

impl ConfigError {
    fn at(origin: &Origin, key: &str, message: impl Into<String>) -> Self {
        ConfigError {
            origin: Some(origin.clone()),
            key: Some(key.to_string()),
            message: message.into(),
        }
    }

    fn general(message: impl Into<String>) -> Self {
        ConfigError {
            origin: None,
            key: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.origin, &self.key) {
            (Some(o), Some(k)) => write!(f, "{o}: {k}: {}", self.message),
            (None, Some(k)) => write!(f, "{k}: {}", self.message),
            _ => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// One `key = value` setting.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub origin: Origin,
    pub key: String,
    pub value: String,
}

const KEYS: &[&str] = &[
    "vintage",
    "mode",
    "N",
    "N_sim",
    "rho",
    "T_max",
    "delta_mu",
    "gamma_mu",
    "fix_mu1",
    "savings_tail",
    "scaled_objective",
    "warm_start",
    "lambda_indexing",
    "rhos",
    "scc_years",
    "pulse_year",
    "pulse_size",
    "pulse_discount",
    "pulse_tail",
    "pulse_reoptimize",
    "search",
    "search_lo",
    "search_hi",
    "search_resolution",
    "params",
    "out",
    "seed",
    "iterations_log",
    "max_iter",
];

/// Splits text into entries. Blank lines and `#` comments are skipped;
/// values may be quoted.
pub fn parse_entries(text: &str) -> Result<Vec<Entry>, ConfigError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let origin = Origin::Line(n + 1);
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError {
                origin: Some(origin),
                key: None,
                message: format!("expected 'key = value', got '{line}'"),
            });
        };
        let key = k.trim();
        if !KEYS.contains(&key) {
            return Err(ConfigError::at(&origin, key, "unknown key"));
        }
        let value = v.trim().trim_matches('"').to_string();
        out.push(Entry {
            origin,
            key: key.to_string(),
            value,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub vintage: Vintage,
    pub mode: Mode,
    /// Prediction horizon N.
    pub horizon: usize,
    pub n_sim: Option<usize>,
    pub rho: f64,
    pub t_max: Option<f64>,
    pub delta_mu: Option<f64>,
    pub gamma_mu: Option<f64>,
    pub fix_mu1: bool,
    pub savings_tail: Option<(usize, f64)>,
    pub scaled_objective: bool,
    pub warm_start: bool,
    #[serde(skip)]
    pub lambda_indexing: LambdaIndexing,
    pub rhos: Vec<f64>,
    pub scc_years: Vec<f64>,
    pub pulse_year: Option<f64>,
    pub pulse_size: f64,
    #[serde(skip)]
    pub pulse_discount: PulseDiscount,
    pub pulse_tail: usize,
    pub pulse_reoptimize: bool,
    pub search: Option<SearchTarget>,
    pub search_lo: Option<f64>,
    pub search_hi: Option<f64>,
    pub search_resolution: f64,
    pub params: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub iterations_log: bool,
    pub max_iter: Option<usize>,
    /// Effective settings as `key = value` lines, in the order applied.
    #[serde(skip)]
    pub echo: Vec<String>,
}

fn parse_num<T: FromStr>(e: &Entry) -> Result<T, ConfigError> {
    e.value
        .parse()
        .map_err(|_| ConfigError::at(&e.origin, &e.key, format!("cannot parse '{}'", e.value)))
}

fn parse_bool(e: &Entry) -> Result<bool, ConfigError> {
    match e.value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(ConfigError::at(&e.origin, &e.key, format!("expected true or false, got '{}'", e.value))),
    }
}

fn parse_list(e: &Entry) -> Result<Vec<f64>, ConfigError> {
    e.value
        .split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| ConfigError::at(&e.origin, &e.key, format!("cannot parse '{}'", t.trim())))
        })
        .collect()
}

fn parse_optional(e: &Entry) -> Result<Option<f64>, ConfigError> {
    if e.value == "none" || e.value.is_empty() {
        Ok(None)
    } else {
        parse_num(e).map(Some)
    }
}

impl ScenarioConfig {
    fn defaults() -> Self {
        ScenarioConfig {
            vintage: Vintage::Dice2016R,
            mode: Mode::OpenLoop,
            horizon: 100,
            n_sim: None,
            rho: f64::NAN,
            t_max: None,
            delta_mu: None,
            gamma_mu: None,
            fix_mu1: true,
            savings_tail: None,
            scaled_objective: false,
            warm_start: true,
            lambda_indexing: LambdaIndexing::SameSlot,
            rhos: vec![0.005, 0.015, 0.03],
            scc_years: vec![2015.0, 2020.0, 2030.0],
            pulse_year: None,
            pulse_size: 10.0,
            pulse_discount: PulseDiscount::Flat(0.05),
            pulse_tail: 100,
            pulse_reoptimize: false,
            search: None,
            search_lo: None,
            search_hi: None,
            search_resolution: 0.01,
            params: None,
            out: PathBuf::from("out"),
            seed: 0,
            iterations_log: false,
            max_iter: None,
            echo: Vec::new(),
        }
    }

    /// Applies entries in order (later ones win) and validates the result.
    pub fn from_entries(entries: &[Entry]) -> Result<Self, ConfigError> {
        let mut c = Self::defaults();
        let mut rho_set = false;
        for e in entries {
            let o = &e.origin;
            let k = e.key.as_str();
            match k {
                "vintage" => {
                    c.vintage = e
                        .value
                        .parse()
                        .map_err(|_| ConfigError::at(o, k, format!("unknown vintage '{}'", e.value)))?
                }
                "mode" => c.mode = e.value.parse().map_err(|m| ConfigError::at(o, k, m))?,
                "N" => c.horizon = parse_num(e)?,
                "N_sim" => c.n_sim = Some(parse_num(e)?),
                "rho" => {
                    c.rho = parse_num(e)?;
                    rho_set = true;
                }
                "T_max" => c.t_max = parse_optional(e)?,
                "delta_mu" => c.delta_mu = parse_optional(e)?,
                "gamma_mu" => c.gamma_mu = parse_optional(e)?,
                "fix_mu1" => c.fix_mu1 = parse_bool(e)?,
                "savings_tail" => {
                    c.savings_tail = if e.value == "none" {
                        None
                    } else {
                        let v = parse_list(e)?;
                        if v.len() != 2 || v[0] < 0.0 || v[0].fract() != 0.0 {
                            return Err(ConfigError::at(o, k, "expected '<steps>, <value>'"));
                        }
                        Some((v[0] as usize, v[1]))
                    }
                }
                "scaled_objective" => c.scaled_objective = parse_bool(e)?,
                "warm_start" => c.warm_start = parse_bool(e)?,
                "lambda_indexing" => {
                    c.lambda_indexing = match e.value.as_str() {
                        "same_slot" => LambdaIndexing::SameSlot,
                        "as_printed" => LambdaIndexing::AsPrinted,
                        _ => {
                            return Err(ConfigError::at(o, k, "expected same_slot or as_printed"));
                        }
                    }
                }
                "rhos" => c.rhos = parse_list(e)?,
                "scc_years" => c.scc_years = parse_list(e)?,
                "pulse_year" => c.pulse_year = Some(parse_num(e)?),
                "pulse_size" => c.pulse_size = parse_num(e)?,
                "pulse_discount" => {
                    c.pulse_discount = if e.value == "marginal_utility" {
                        PulseDiscount::MarginalUtility
                    } else {
                        PulseDiscount::Flat(parse_num(e)?)
                    }
                }
                "pulse_tail" => c.pulse_tail = parse_num(e)?,
                "pulse_reoptimize" => c.pulse_reoptimize = parse_bool(e)?,
                "search" => c.search = Some(e.value.parse().map_err(|m| ConfigError::at(o, k, m))?),
                "search_lo" => c.search_lo = Some(parse_num(e)?),
                "search_hi" => c.search_hi = Some(parse_num(e)?),
                "search_resolution" => c.search_resolution = parse_num(e)?,
                "params" => c.params = Some(PathBuf::from(&e.value)),
                "out" => c.out = PathBuf::from(&e.value),
                "seed" => c.seed = parse_num(e)?,
                "iterations_log" => c.iterations_log = parse_bool(e)?,
                "max_iter" => c.max_iter = Some(parse_num(e)?),
                _ => return Err(ConfigError::at(o, k, "unknown key")),
            }
            c.echo.push(format!("{} = {}", e.key, e.value));
        }
        if !rho_set {
            c.rho = load_parameter_set(c.vintage).rho;
        }
        c.validate(entries)?;
        Ok(c)
    }

    fn validate(&self, entries: &[Entry]) -> Result<(), ConfigError> {
        let find = |key: &str| {
            entries
                .iter()
                .rev()
                .find(|e| e.key == key)
                .map(|e| e.origin.clone())
        };
        let fail = |key: &str, msg: String| match find(key) {
            Some(o) => Err(ConfigError::at(&o, key, msg)),
            None => Err(ConfigError {
                origin: None,
                key: Some(key.to_string()),
                message: msg,
            }),
        };
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return fail("rho", "rho must be positive".into());
        }
        if self.horizon < 1 {
            return fail("N", "N must be at least 1".into());
        }
        if self.rhos.iter().any(|r| !(*r > 0.0)) {
            return fail("rhos", "rho must be positive".into());
        }
        if let Some(t) = self.t_max {
            if !(t > 0.0) {
                return fail("T_max", "T_max must be positive".into());
            }
        }
        for (key, v) in [("delta_mu", self.delta_mu), ("gamma_mu", self.gamma_mu)] {
            if let Some(v) = v {
                if !(v >= 0.0) {
                    return fail(key, format!("{key} must be nonnegative"));
                }
            }
        }
        if (self.delta_mu.is_some() || self.gamma_mu.is_some()) && !self.fix_mu1 {
            return fail("fix_mu1", "rate and growth bounds need fix_mu1 = true".into());
        }
        if let Some((len, v)) = self.savings_tail {
            if len > self.horizon {
                return fail("savings_tail", format!("{len} steps exceed N = {}", self.horizon));
            }
            if !(0.0..=1.0).contains(&v) {
                return fail("savings_tail", format!("value {v} outside [0, 1]"));
            }
        }
        if !(self.pulse_size >= 0.0) {
            return fail("pulse_size", "pulse size must be nonnegative".into());
        }
        if !(self.search_resolution > 0.0) {
            return fail("search_resolution", "resolution must be positive".into());
        }
        match self.mode {
            Mode::Mpc => match self.n_sim {
                None => return fail("N_sim", "mode mpc requires N_sim".into()),
                Some(0) => return fail("N_sim", "N_sim must be at least 1".into()),
                _ => {}
            },
            Mode::Pulse => {
                let Some(year) = self.pulse_year else {
                    return fail("pulse_year", "mode pulse requires pulse_year".into());
                };
                let p = load_parameter_set(self.vintage);
                let pos = (year - p.t0) / p.delta;
                if pos < 0.0 || pos.fract() != 0.0 || pos as usize >= self.horizon {
                    return fail(
                        "pulse_year",
                        format!("{year} is not a step year inside the horizon ({} + {}k)", p.t0, p.delta),
                    );
                }
            }
            Mode::FeasibilitySearch => {
                let Some(target) = self.search else {
                    return fail("search", "mode feasibility_search requires search = T_max or gamma_mu".into());
                };
                let (lo, hi) = self.search_bracket(target);
                if !(lo < hi) {
                    return fail("search_lo", format!("empty search bracket [{lo}, {hi}]"));
                }
                if target == SearchTarget::GammaMu && !self.fix_mu1 {
                    return fail("fix_mu1", "a gamma_mu search needs fix_mu1 = true".into());
                }
            }
            Mode::OpenLoop | Mode::SccTable => {}
        }
        Ok(())
    }

    /// The search interval, with defaults per target.
    pub fn search_bracket(&self, target: SearchTarget) -> (f64, f64) {
        let (lo, hi) = match target {
            SearchTarget::TMax => (2.0, 3.0),
            SearchTarget::GammaMu => (0.1, 1.0),
        };
        (self.search_lo.unwrap_or(lo), self.search_hi.unwrap_or(hi))
    }

    /// The parameter set: the vintage's tables, or an override file.
    pub fn parameter_set(&self) -> Result<ParameterSet, ConfigError> {
        let Some(path) = &self.params else {
            return Ok(load_parameter_set(self.vintage));
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::general(format!("params: cannot read {}: {e}", path.display())))?;
        let p = ParameterSet::from_override_text(&text)
            .map_err(|e| ConfigError::general(format!("params: {e}")))?;
        if p.vintage != self.vintage {
            return Err(ConfigError::general(format!(
                "params: file is for vintage {} but the scenario uses {}",
                p.vintage, self.vintage
            )));
        }
        Ok(p)
    }

    pub fn echo_text(&self) -> String {
        let mut s = self.echo.join("\n");
        s.push('\n');
        s
    }
}

/// Parses and validates configuration text.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    ScenarioConfig::from_entries(&parse_entries(text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_table_config() {
        let c = parse_config("vintage = 2016R\nmode = scc_table\nN = 100\nrho = 0.015").unwrap();
        assert_eq!(c.vintage, Vintage::Dice2016R);
        assert_eq!(c.mode, Mode::SccTable);
        assert_eq!(c.horizon, 100);
        assert_eq!(c.rho, 0.015);
    }

    #[test]
    fn negative_rho_is_rejected() {
        let e = parse_config("rho = -1").unwrap_err();
        assert_eq!(e.message, "rho must be positive");
        assert_eq!(e.key.as_deref(), Some("rho"));
        assert_eq!(e.origin, Some(Origin::Line(1)));
    }

    #[test]
    fn unknown_key_names_line() {
        let e = parse_config("N = 10\n# comment\nfoo = 3").unwrap_err();
        assert_eq!(e.to_string(), "line 3: foo: unknown key");
    }

    #[test]
    fn later_entries_win() {
        let mut entries = parse_entries("T_max = 2.36").unwrap();
        entries.push(Entry {
            origin: Origin::Flag("tmax"),
            key: "T_max".into(),
            value: "3.0".into(),
        });
        let c = ScenarioConfig::from_entries(&entries).unwrap();
        assert_eq!(c.t_max, Some(3.0));
    }

    #[test]
    fn mode_requirements() {
        assert!(parse_config("mode = mpc").is_err());
        assert!(parse_config("mode = mpc\nN_sim = 5").is_ok());
        assert!(parse_config("mode = pulse\npulse_year = 2017").is_err());
        assert!(parse_config("mode = pulse\npulse_year = 2020").is_ok());
        assert!(parse_config("mode = feasibility_search").is_err());
        let c = parse_config("mode = feasibility_search\nsearch = gamma_mu\nT_max = 3").unwrap();
        assert_eq!(c.search_bracket(SearchTarget::GammaMu), (0.1, 1.0));
    }

    #[test]
    fn lists_and_discounts() {
        let c = parse_config("rhos = 0.01, 0.02\npulse_discount = marginal_utility\nsavings_tail = 10, 0.258").unwrap();
        assert_eq!(c.rhos, vec![0.01, 0.02]);
        assert_eq!(c.pulse_discount, PulseDiscount::MarginalUtility);
        assert_eq!(c.savings_tail, Some((10, 0.258)));
    }

    #[test]
    fn default_rho_comes_from_vintage() {
        let c = parse_config("vintage = 2013R").unwrap();
        assert_eq!(c.rho, load_parameter_set(Vintage::Dice2013R).rho);
    }
}
