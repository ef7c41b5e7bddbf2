//! Serialization of run results: CSV tables and the JSON manifest.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::ScenarioConfig;
use crate::run::{RunOutput, TrajectoryRow};

/// `v` with 10 significant digits; plain notation for moderate magnitudes.
pub fn fmt_sig(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    if (-4..15).contains(&exp) {
        let decimals = (9 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{v:.9e}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.filter(|x| x.is_finite()).map(fmt_sig).unwrap_or_default()
}

pub const TRAJECTORY_HEADER: &str =
    "step,year,T_AT,T_LO,M_AT,M_UP,M_LO,K,L,A,sigma,mu,s,Y,Q,E,C,I,damages_factor,scc";

pub fn trajectory_csv(rows: &[TrajectoryRow]) -> String {
    let mut s = String::from(TRAJECTORY_HEADER);
    s.push('\n');
    for r in rows {
        let vals = [
            r.year, r.t_at, r.t_lo, r.m_at, r.m_up, r.m_lo, r.k, r.l, r.a, r.sigma, r.mu, r.s, r.y, r.q,
            r.e, r.c, r.i, r.damages_factor,
        ];
        let _ = write!(s, "{}", r.step);
        for v in vals {
            let _ = write!(s, ",{}", fmt_sig(v));
        }
        let _ = writeln!(s, ",{}", opt(r.scc));
    }
    s
}

pub fn scc_csv(out: &RunOutput) -> String {
    let mut s = String::from("year,scc,method,lambda_E,lambda_C,rho\n");
    for (rho, p) in &out.scc {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            fmt_sig(p.year),
            fmt_sig(p.scc),
            p.method.as_str(),
            opt(Some(p.lambda_e)),
            opt(Some(p.lambda_c)),
            fmt_sig(*rho)
        );
    }
    s
}

pub fn pulse_csv(out: &RunOutput) -> String {
    let mut s = String::from("step,year,T_AT_base,T_AT_pulse,M_AT_base,M_AT_pulse,C_base,C_pulse\n");
    for r in &out.pulse {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.step,
            fmt_sig(r.year),
            fmt_sig(r.t_base),
            fmt_sig(r.t_pulse),
            fmt_sig(r.m_at_base),
            fmt_sig(r.m_at_pulse),
            fmt_sig(r.c_base),
            fmt_sig(r.c_pulse)
        );
    }
    s
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// The files a run writes, in a fixed order.
pub fn artifacts(out: &RunOutput) -> Vec<(&'static str, String)> {
    let mut files = Vec::new();
    if !out.trajectory.is_empty() {
        files.push(("trajectory.csv", trajectory_csv(&out.trajectory)));
    }
    if !out.scc.is_empty() {
        files.push(("scc.csv", scc_csv(out)));
    }
    if !out.pulse.is_empty() {
        files.push(("pulse.csv", pulse_csv(out)));
    }
    if let Some(it) = &out.iterations {
        files.push(("iterations.csv", it.clone()));
    }
    files
}

#[derive(Debug)]
pub enum OutputError {
    NotEmpty(PathBuf),
    Io(PathBuf, io::Error),
}

impl std::fmt::Display for OutputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OutputError::NotEmpty(p) => write!(
                f,
                "output directory {} exists and is not empty (use --force to overwrite)",
                p.display()
            ),
            OutputError::Io(p, e) => write!(f, "cannot write {}: {e}", p.display()),
        }
    }
}

impl std::error::Error for OutputError {}

/// Checks that `dir` may be written to.
pub fn prepare_dir(dir: &Path, force: bool) -> Result<(), OutputError> {
    if dir.exists() {
        let mut it = fs::read_dir(dir).map_err(|e| OutputError::Io(dir.into(), e))?;
        if it.next().is_some() && !force {
            return Err(OutputError::NotEmpty(dir.into()));
        }
    } else {
        fs::create_dir_all(dir).map_err(|e| OutputError::Io(dir.into(), e))?;
    }
    Ok(())
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Writes every artifact plus `manifest.json` and returns the file names.
/// Files written before an IO error are removed.
pub fn write_outputs(
    cfg: &ScenarioConfig,
    params_text: &str,
    out: &RunOutput,
    dir: &Path,
    started: u64,
) -> Result<Vec<String>, OutputError> {
    let files = artifacts(out);
    let mut written: Vec<PathBuf> = Vec::new();
    let mut inventory = Vec::new();
    let cleanup = |written: &[PathBuf]| {
        for p in written {
            let _ = fs::remove_file(p);
        }
    };
    for (name, content) in &files {
        let path = dir.join(name);
        if let Err(e) = fs::write(&path, content) {
            cleanup(&written);
            return Err(OutputError::Io(path, e));
        }
        written.push(path);
        inventory.push(json!({
            "name": name,
            "bytes": content.len(),
            "sha256": sha256_hex(content.as_bytes()),
        }));
    }
    let manifest = json!({
        "tool": "dice-mpc",
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "config_echo": cfg.echo,
        "parameter_digest": sha256_hex(params_text.as_bytes()),
        "started_unix": started,
        "finished_unix": unix_now(),
        "status": out.status.as_str(),
        "exit_code": out.status.exit_code(),
        "summary": out.summary,
        "files": inventory,
    });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    let path = dir.join("manifest.json");
    if let Err(e) = fs::write(&path, text) {
        cleanup(&written);
        return Err(OutputError::Io(path, e));
    }
    let mut names: Vec<String> = files.iter().map(|(n, _)| n.to_string()).collect();
    names.push("manifest.json".into());
    Ok(names)
}

pub fn manifest_value(dir: &Path) -> io::Result<Value> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_significant_digits() {
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(27.14), "27.14");
        assert_eq!(fmt_sig(1.0 / 3.0), "0.3333333333");
        assert_eq!(fmt_sig(2015.0), "2015");
        assert_eq!(fmt_sig(123456.789012345), "123456.789");
        assert_eq!(fmt_sig(-0.00012345678901234), "-0.000123456789");
        assert_eq!(fmt_sig(1.5e-9), "1.500000000e-9");
    }

    #[test]
    fn digests_are_hex_sha256() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
