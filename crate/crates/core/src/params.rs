//! DICE2013R / DICE2016R parameter tables and initial conditions.
//!
//! Tables are compiled in. A plain-text override file (`key = value` lines,
//! a TOML subset) can replace individual entries; it is validated before use.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Vintage {
    Dice2013R,
    Dice2016R,
}

impl fmt::Display for Vintage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Vintage::Dice2013R => f.write_str("2013R"),
            Vintage::Dice2016R => f.write_str("2016R"),
        }
    }
}

impl FromStr for Vintage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().trim_matches('"').to_ascii_uppercase();
        match t.trim_start_matches("DICE") {
            "2013R" | "2013" => Ok(Vintage::Dice2013R),
            "2016R" | "2016" => Ok(Vintage::Dice2016R),
            _ => Err(Error::Parse(format!("unknown vintage '{s}'"))),
        }
    }
}

/// Every scalar needed to simulate and optimize one DICE vintage.
///
/// `phi_t` is the 2×2 climate diffusion matrix, `phi_m` the 3×3 carbon
/// diffusion matrix (row = receiving reservoir). Rates with a `delta_`
/// prefix are per step unless noted; `delta_k` and `rho` are per year.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub vintage: Vintage,
    /// Years per step.
    pub delta: f64,
    /// Calendar year of step 1.
    pub t0: f64,
    pub n_default: usize,

    pub phi_t: [[f64; 2]; 2],
    pub xi1: f64,
    /// Forcing from a doubling of atmospheric CO2 (F_2x), W/m².
    pub eta: f64,

    pub phi_m: [[f64; 3]; 3],
    /// GtC per GtCO2.
    pub xi2: f64,
    pub m_at_1750: f64,

    pub f0: f64,
    pub f1: f64,
    pub tf: f64,
    pub e_l0: f64,
    pub delta_el: f64,

    pub gamma: f64,
    pub theta2: f64,
    pub a2: f64,
    pub a3: f64,
    pub delta_k: f64,
    pub alpha: f64,
    pub rho: f64,

    pub l0: f64,
    pub la: f64,
    pub lg: f64,
    pub a0: f64,
    pub g_a: f64,
    pub delta_a: f64,
    pub g_sigma: f64,
    pub delta_sigma: f64,
    pub pb: f64,
    pub delta_pb: f64,
    pub mu0: f64,
    pub e0: f64,
    pub q0: f64,
    pub scale1: f64,
    pub scale2: f64,

    pub t_at0: f64,
    pub t_lo0: f64,
    pub k0: f64,
    pub m_at0: f64,
    pub m_up0: f64,
    pub m_lo0: f64,
}

/// σ0 = e0 / (q0 (1 − μ0)).
pub fn initial_sigma(e0: f64, q0: f64, mu0: f64) -> Result<f64> {
    let denom = q0 * (1.0 - mu0);
    if denom == 0.0 || !denom.is_finite() {
        return Err(Error::domain(
            "initial_sigma",
            format!("q0·(1−mu0) = {denom} (q0 = {q0}, mu0 = {mu0})"),
        ));
    }
    Ok(e0 / denom)
}

/// Tabulated σ0 for a vintage (a validation target, never used directly).
pub fn tabulated_sigma0(vintage: Vintage) -> f64 {
    match vintage {
        Vintage::Dice2013R => 0.5491,
        Vintage::Dice2016R => 0.3503,
    }
}

pub fn load_parameter_set(vintage: Vintage) -> ParameterSet {
    match vintage {
        Vintage::Dice2013R => ParameterSet {
            vintage,
            delta: 5.0,
            t0: 2010.0,
            n_default: 60,
            phi_t: [[0.8630, 0.0086], [0.025, 0.975]],
            xi1: 0.098,
            eta: 3.8,
            phi_m: [
                [0.912, 0.03833, 0.0],
                [0.088, 0.9592, 0.0003375],
                [0.0, 0.00250, 0.9996625],
            ],
            xi2: 12.0 / 44.0,
            m_at_1750: 588.0,
            f0: 0.25,
            f1: 0.70,
            tf: 18.0,
            e_l0: 3.3,
            delta_el: 0.2,
            gamma: 0.3,
            theta2: 2.8,
            a2: 0.00267,
            a3: 2.0,
            delta_k: 0.1,
            alpha: 1.45,
            rho: 0.015,
            l0: 6838.0,
            la: 10500.0,
            lg: 0.134,
            a0: 3.80,
            g_a: 0.079,
            delta_a: 0.006,
            g_sigma: 0.01,
            delta_sigma: 0.001,
            pb: 344.0,
            delta_pb: 0.025,
            mu0: 0.039,
            e0: 33.61,
            q0: 63.69,
            scale1: 0.016408662,
            scale2: 3855.106895,
            t_at0: 0.8,
            t_lo0: 0.0068,
            k0: 135.0,
            m_at0: 830.4,
            m_up0: 1527.0,
            m_lo0: 10010.0,
        },
        Vintage::Dice2016R => ParameterSet {
            vintage,
            delta: 5.0,
            t0: 2015.0,
            n_default: 100,
            phi_t: [[0.8718, 0.0088], [0.025, 0.975]],
            xi1: 0.1005,
            eta: 3.6813,
            phi_m: [
                [0.88, 0.196, 0.0],
                [0.12, 0.797, 0.001465],
                [0.0, 0.007, 0.99853488],
            ],
            xi2: 12.0 / 44.0,
            m_at_1750: 588.0,
            f0: 0.5,
            f1: 1.0,
            tf: 17.0,
            e_l0: 2.6,
            delta_el: 0.115,
            gamma: 0.3,
            theta2: 2.6,
            a2: 0.00236,
            a3: 2.0,
            delta_k: 0.1,
            alpha: 1.45,
            rho: 0.015,
            l0: 7403.0,
            la: 11500.0,
            lg: 0.134,
            a0: 5.115,
            g_a: 0.076,
            delta_a: 0.005,
            g_sigma: 0.0152,
            delta_sigma: 0.001,
            pb: 550.0,
            delta_pb: 0.025,
            mu0: 0.03,
            e0: 35.85,
            q0: 105.5,
            scale1: 0.030245527,
            scale2: 10993.704,
            t_at0: 0.85,
            t_lo0: 0.0068,
            k0: 223.0,
            m_at0: 851.0,
            m_up0: 460.0,
            m_lo0: 1740.0,
        },
    }
}

/// Eigenvalue moduli of a real 2×2 matrix, largest first.
pub fn eigen_moduli_2x2(m: &[[f64; 2]; 2]) -> [f64; 2] {
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = tr * tr / 4.0 - det;
    if disc >= 0.0 {
        let r = disc.sqrt();
        let (a, b) = ((tr / 2.0 + r).abs(), (tr / 2.0 - r).abs());
        if a >= b {
            [a, b]
        } else {
            [b, a]
        }
    } else {
        let modulus = det.sqrt();
        [modulus, modulus]
    }
}

const COLUMN_SUM_TOL: f64 = 1e-4;

impl ParameterSet {
    /// σ0 recomputed from (e0, q0, μ0).
    pub fn sigma0(&self) -> f64 {
        initial_sigma(self.e0, self.q0, self.mu0).unwrap_or(f64::NAN)
    }

    /// Φ_K = (1 − δ_K)^Δ.
    pub fn phi_k(&self) -> f64 {
        (1.0 - self.delta_k).powf(self.delta)
    }

    pub fn year(&self, step: usize) -> f64 {
        self.t0 + self.delta * (step as f64 - 1.0)
    }

    pub fn phi_t_spectral_radius(&self) -> f64 {
        eigen_moduli_2x2(&self.phi_t)[0]
    }

    pub fn phi_m_column_sums(&self) -> [f64; 3] {
        let m = &self.phi_m;
        [
            m[0][0] + m[1][0] + m[2][0],
            m[0][1] + m[1][1] + m[2][1],
            m[0][2] + m[1][2] + m[2][2],
        ]
    }

    /// Invariant violations; empty when the set is usable.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (c, s) in self.phi_m_column_sums().iter().enumerate() {
            if (s - 1.0).abs() > COLUMN_SUM_TOL || !s.is_finite() {
                out.push(format!("phi_M column {} sums to {}", c + 1, round_sig(*s, 6)));
            }
        }
        let radius = self.phi_t_spectral_radius();
        if !(radius < 1.0) {
            out.push(format!(
                "phi_T spectral radius ≥ 1 ({})",
                round_sig(radius, 6)
            ));
        }
        for (name, v) in [
            ("mu0", self.mu0),
            ("delta_EL", self.delta_el),
            ("delta_pb", self.delta_pb),
            ("g_sigma", self.g_sigma),
            ("delta_sigma", self.delta_sigma),
        ] {
            if !(v > 0.0 && v < 1.0) {
                out.push(format!("{name} = {v} must lie in (0, 1)"));
            }
        }
        for (name, v) in [
            ("delta", self.delta),
            ("N_default", self.n_default as f64),
            ("tf", self.tf),
        ] {
            if !(v > 0.0) {
                out.push(format!("{name} = {v} must be positive"));
            }
        }
        for (name, v) in [
            ("q0", self.q0),
            ("L0", self.l0),
            ("M_AT_1750", self.m_at_1750),
            ("K0", self.k0),
            ("M_AT0", self.m_at0),
            ("M_UP0", self.m_up0),
            ("M_LO0", self.m_lo0),
        ] {
            if !(v > 0.0) {
                out.push(format!("{name} = {v} must be positive"));
            }
        }
        out
    }

    /// Serializes every overridable field as `key = value` lines.
    ///
    /// Floats are written in shortest round-trip form so parsing the text
    /// back reproduces the set bit-exactly.
    pub fn to_override_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "vintage = \"{}\"", self.vintage);
        for (key, value) in self.entries() {
            let _ = writeln!(s, "{key} = {}", fmt_float(value));
        }
        s
    }

    /// Applies an override file on top of the vintage it names (DICE2016R
    /// when absent) and validates the result.
    pub fn from_override_text(text: &str) -> Result<Self> {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let vintage = match table.get("vintage") {
            None => Vintage::Dice2016R,
            Some(toml::Value::String(s)) => s.parse()?,
            Some(other) => {
                return Err(Error::Parse(format!("vintage must be a string, got {other}")))
            }
        };
        let mut p = load_parameter_set(vintage);
        for (key, value) in &table {
            if key == "vintage" {
                continue;
            }
            let v = match value {
                toml::Value::Float(f) => *f,
                toml::Value::Integer(i) => *i as f64,
                other => {
                    return Err(Error::Parse(format!("{key}: expected a number, got {other}")))
                }
            };
            p.set(key, v)?;
        }
        let violations = p.validate();
        if violations.is_empty() {
            Ok(p)
        } else {
            Err(Error::InvalidParameters(violations))
        }
    }

    fn entries(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("delta", self.delta),
            ("t0", self.t0),
            ("N_default", self.n_default as f64),
            ("phi11", self.phi_t[0][0]),
            ("phi12", self.phi_t[0][1]),
            ("phi21", self.phi_t[1][0]),
            ("phi22", self.phi_t[1][1]),
            ("xi1", self.xi1),
            ("eta", self.eta),
            ("zeta11", self.phi_m[0][0]),
            ("zeta12", self.phi_m[0][1]),
            ("zeta21", self.phi_m[1][0]),
            ("zeta22", self.phi_m[1][1]),
            ("zeta23", self.phi_m[1][2]),
            ("zeta32", self.phi_m[2][1]),
            ("zeta33", self.phi_m[2][2]),
            ("xi2", self.xi2),
            ("M_AT_1750", self.m_at_1750),
            ("f0", self.f0),
            ("f1", self.f1),
            ("tf", self.tf),
            ("E_L0", self.e_l0),
            ("delta_EL", self.delta_el),
            ("gamma", self.gamma),
            ("theta2", self.theta2),
            ("a2", self.a2),
            ("a3", self.a3),
            ("delta_K", self.delta_k),
            ("alpha", self.alpha),
            ("rho", self.rho),
            ("L0", self.l0),
            ("La", self.la),
            ("lg", self.lg),
            ("A0", self.a0),
            ("gA", self.g_a),
            ("delta_A", self.delta_a),
            ("g_sigma", self.g_sigma),
            ("delta_sigma", self.delta_sigma),
            ("pb", self.pb),
            ("delta_pb", self.delta_pb),
            ("mu0", self.mu0),
            ("e0", self.e0),
            ("q0", self.q0),
            ("scale1", self.scale1),
            ("scale2", self.scale2),
            ("T_AT0", self.t_at0),
            ("T_LO0", self.t_lo0),
            ("K0", self.k0),
            ("M_AT0", self.m_at0),
            ("M_UP0", self.m_up0),
            ("M_LO0", self.m_lo0),
        ]
    }

    /// Sets one field by its override-file key.
    pub fn set(&mut self, key: &str, v: f64) -> Result<()> {
        let slot: &mut f64 = match key {
            "delta" => &mut self.delta,
            "t0" => &mut self.t0,
            "N_default" => {
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(Error::Parse(format!("N_default must be a whole number, got {v}")));
                }
                self.n_default = v as usize;
                return Ok(());
            }
            "phi11" => &mut self.phi_t[0][0],
            "phi12" => &mut self.phi_t[0][1],
            "phi21" => &mut self.phi_t[1][0],
            "phi22" => &mut self.phi_t[1][1],
            "xi1" => &mut self.xi1,
            "eta" => &mut self.eta,
            "zeta11" => &mut self.phi_m[0][0],
            "zeta12" => &mut self.phi_m[0][1],
            "zeta21" => &mut self.phi_m[1][0],
            "zeta22" => &mut self.phi_m[1][1],
            "zeta23" => &mut self.phi_m[1][2],
            "zeta32" => &mut self.phi_m[2][1],
            "zeta33" => &mut self.phi_m[2][2],
            "xi2" => &mut self.xi2,
            "M_AT_1750" => &mut self.m_at_1750,
            "f0" => &mut self.f0,
            "f1" => &mut self.f1,
            "tf" => &mut self.tf,
            "E_L0" => &mut self.e_l0,
            "delta_EL" => &mut self.delta_el,
            "gamma" => &mut self.gamma,
            "theta2" => &mut self.theta2,
            "a2" => &mut self.a2,
            "a3" => &mut self.a3,
            "delta_K" => &mut self.delta_k,
            "alpha" => &mut self.alpha,
            "rho" => &mut self.rho,
            "L0" => &mut self.l0,
            "La" => &mut self.la,
            "lg" => &mut self.lg,
            "A0" => &mut self.a0,
            "gA" => &mut self.g_a,
            "delta_A" => &mut self.delta_a,
            "g_sigma" => &mut self.g_sigma,
            "delta_sigma" => &mut self.delta_sigma,
            "pb" => &mut self.pb,
            "delta_pb" => &mut self.delta_pb,
            "mu0" => &mut self.mu0,
            "e0" => &mut self.e0,
            "q0" => &mut self.q0,
            "scale1" => &mut self.scale1,
            "scale2" => &mut self.scale2,
            "T_AT0" => &mut self.t_at0,
            "T_LO0" => &mut self.t_lo0,
            "K0" => &mut self.k0,
            "M_AT0" => &mut self.m_at0,
            "M_UP0" => &mut self.m_up0,
            "M_LO0" => &mut self.m_lo0,
            _ => return Err(Error::Parse(format!("unknown key '{key}'"))),
        };
        *slot = v;
        Ok(())
    }
}

/// Shortest representation that parses back to the same f64, always with a
/// decimal point or exponent so TOML reads it as a float.
pub(crate) fn fmt_float(v: f64) -> String {
    let s = format!("{v:?}");
    if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

fn round_sig(v: f64, digits: usize) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{:.*e}", digits - 1, v).parse().unwrap_or(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tabulated_entries() {
        let p16 = load_parameter_set(Vintage::Dice2016R);
        assert_eq!(p16.phi_t[0][0], 0.8718);
        assert_eq!(p16.xi1, 0.1005);
        assert_eq!(p16.eta, 3.6813);
        assert_eq!((p16.m_at0, p16.m_up0, p16.m_lo0), (851.0, 460.0, 1740.0));

        let p13 = load_parameter_set(Vintage::Dice2013R);
        assert_eq!(p13.e_l0, 3.3);
        assert_eq!(p13.delta_el, 0.2);
        assert_eq!(p13.pb, 344.0);
    }

    #[test]
    fn shipped_defaults_validate() {
        for v in [Vintage::Dice2013R, Vintage::Dice2016R] {
            assert!(load_parameter_set(v).validate().is_empty());
        }
    }

    #[test]
    fn broken_carbon_column_is_reported() {
        let mut p = load_parameter_set(Vintage::Dice2016R);
        p.phi_m[0][0] = 0.5;
        let v = p.validate();
        assert_eq!(v, vec!["phi_M column 1 sums to 0.62".to_string()]);
    }

    #[test]
    fn unstable_climate_matrix_is_reported() {
        let mut p = load_parameter_set(Vintage::Dice2016R);
        p.phi_t[0][0] = 1.2;
        let v = p.validate();
        assert_eq!(v.len(), 1);
        assert!(v[0].starts_with("phi_T spectral radius ≥ 1"), "{v:?}");
    }

    #[test]
    fn rate_outside_unit_interval_is_reported() {
        let mut p = load_parameter_set(Vintage::Dice2013R);
        p.delta_pb = 1.5;
        assert!(p.validate()[0].contains("delta_pb"));
    }

    #[test]
    fn sigma0_from_base_year_data() {
        assert!((initial_sigma(35.85, 105.5, 0.03).unwrap() - 0.3503).abs() < 1e-4);
        assert!((initial_sigma(33.61, 63.69, 0.039).unwrap() - 0.5491).abs() < 1e-4);
        assert_eq!(initial_sigma(0.0, 105.5, 0.03).unwrap(), 0.0);
        assert!(initial_sigma(1.0, 0.0, 0.03).is_err());
        assert!(initial_sigma(1.0, 10.0, 1.0).is_err());
        for v in [Vintage::Dice2013R, Vintage::Dice2016R] {
            let p = load_parameter_set(v);
            assert!((p.sigma0() - tabulated_sigma0(v)).abs() < 1e-4);
        }
    }

    #[test]
    fn climate_eigenvalues_2016() {
        let p = load_parameter_set(Vintage::Dice2016R);
        let [a, b] = eigen_moduli_2x2(&p.phi_t);
        assert!((a - 0.977).abs() < 1e-3, "{a}");
        assert!((b - 0.870).abs() < 1e-3, "{b}");
    }

    #[test]
    fn override_file_applies_and_validates() {
        let p = ParameterSet::from_override_text("vintage = \"2013R\"\nrho = 0.03\nK0 = 140\n")
            .unwrap();
        assert_eq!(p.vintage, Vintage::Dice2013R);
        assert_eq!(p.rho, 0.03);
        assert_eq!(p.k0, 140.0);

        let err = ParameterSet::from_override_text("zeta11 = 0.5\n").unwrap_err();
        assert!(err.to_string().contains("phi_M column 1"), "{err}");

        let err = ParameterSet::from_override_text("sigma0 = 0.3\n").unwrap_err();
        assert!(err.to_string().contains("unknown key 'sigma0'"), "{err}");
    }

    #[test]
    fn vintage_names() {
        assert_eq!("2016R".parse::<Vintage>().unwrap(), Vintage::Dice2016R);
        assert_eq!("DICE2013R".parse::<Vintage>().unwrap(), Vintage::Dice2013R);
        assert!("2020R".parse::<Vintage>().is_err());
    }
}
