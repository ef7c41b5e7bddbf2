//! One-step endogenous dynamics and derived economic quantities.

use serde::{Deserialize, Serialize};

use crate::ad::Scalar;
use crate::error::{Error, Result};
use crate::params::ParameterSet;

/// Driven states at one step: temperatures (°C above 1750), carbon
/// reservoirs (GtC) and capital (trillion 2010USD).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndogenousState {
    pub t_at: f64,
    pub t_lo: f64,
    pub m_at: f64,
    pub m_up: f64,
    pub m_lo: f64,
    pub k: f64,
}

impl EndogenousState {
    pub fn initial(p: &ParameterSet) -> Self {
        EndogenousState {
            t_at: p.t_at0,
            t_lo: p.t_lo0,
            m_at: p.m_at0,
            m_up: p.m_up0,
            m_lo: p.m_lo0,
            k: p.k0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Controls {
    pub mu: f64,
    pub s: f64,
}

/// Annual flows derived from a state and controls.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Flows {
    pub y: f64,
    pub q: f64,
    pub e: f64,
    pub c: f64,
    pub f: f64,
    pub u: f64,
}

/// Y = A·K^γ·(L/1000)^(1−γ).
pub fn gross_output<S: Scalar>(a: S, k: S, l: S, gamma: f64) -> S {
    a * k.powf(gamma) * (l / 1000.0).powf(1.0 - gamma)
}

/// Ω = 1/(1 + a2·T^a3).
pub fn damages_factor<S: Scalar>(t_at: S, a2: f64, a3: f64) -> S {
    (t_at.powf(a3) * a2 + 1.0).recip()
}

/// Q = Ω(T_AT)·(1 − θ1·μ^θ2)·Y.
pub fn net_output<S: Scalar>(y: S, t_at: S, theta1: S, mu: S, p: &ParameterSet) -> S {
    damages_factor(t_at, p.a2, p.a3) * (S::from_f64(1.0) - theta1 * mu.powf(p.theta2)) * y
}

/// E = σ·(1−μ)·Y + E_Land, GtCO2/yr.
pub fn emissions_rate<S: Scalar>(sigma: S, mu: S, y: S, e_land: S) -> S {
    sigma * (S::from_f64(1.0) - mu) * y + e_land
}

/// F = η·log2(M_AT/M_AT,1750) + F_EX.
pub fn radiative_forcing<S: Scalar>(m_at: S, f_ex: S, eta: f64, m_at_1750: f64) -> Result<S> {
    if !(m_at.value() > 0.0) {
        return Err(Error::domain(
            "radiative_forcing",
            format!("M_AT = {} must be positive", m_at.value()),
        ));
    }
    Ok((m_at / m_at_1750).log2() * eta + f_ex)
}

/// T' = Φ_T·T + [ξ1, 0]ᵀ·F with F taken at the current step.
pub fn climate_step<S: Scalar>(t: [S; 2], f: S, phi_t: &[[f64; 2]; 2], xi1: f64) -> [S; 2] {
    [
        t[0] * phi_t[0][0] + t[1] * phi_t[0][1] + f * xi1,
        t[0] * phi_t[1][0] + t[1] * phi_t[1][1],
    ]
}

/// M' = Φ_M·M + [ξ2·Δ·E, 0, 0]ᵀ with E in GtCO2/yr.
pub fn carbon_step<S: Scalar>(m: [S; 3], e: S, phi_m: &[[f64; 3]; 3], xi2: f64, delta: f64) -> [S; 3] {
    carbon_step_total(m, e * delta, phi_m, xi2)
}

/// Carbon update driven by a whole-step emission total (GtCO2 per step).
pub fn carbon_step_total<S: Scalar>(m: [S; 3], e_step: S, phi_m: &[[f64; 3]; 3], xi2: f64) -> [S; 3] {
    let row = |r: usize| m[0] * phi_m[r][0] + m[1] * phi_m[r][1] + m[2] * phi_m[r][2];
    [row(0) + e_step * xi2, row(1), row(2)]
}

/// K' = (1−δ_K)^Δ·K + Δ·Q·s.
pub fn capital_step<S: Scalar>(k: S, q: S, s: S, delta_k: f64, delta: f64) -> S {
    k * (1.0 - delta_k).powf(delta) + q * s * delta
}

/// C = Q·(1−s).
pub fn consumption<S: Scalar>(q: S, s: S) -> S {
    q * (S::from_f64(1.0) - s)
}

/// U = L·(c^(1−α) − 1)/(1−α) with c = 1000·C/L; L·ln c when α = 1.
pub fn utility<S: Scalar>(c: S, l: S, alpha: f64) -> Result<S> {
    if !(c.value() > 0.0) {
        return Err(Error::domain(
            "utility",
            format!("consumption {} must be positive", c.value()),
        ));
    }
    let per_capita = c / l * 1000.0;
    if alpha == 1.0 {
        return Ok(l * per_capita.ln());
    }
    Ok(l * ((per_capita.powf(1.0 - alpha) - 1.0) / (1.0 - alpha)))
}

/// Discount factor (1+ρ)^(−Δ(i−1)) for 1-based step `i`.
pub fn discount_factor(rho: f64, delta: f64, i: usize) -> f64 {
    (1.0 + rho).powf(-delta * (i as f64 - 1.0))
}

/// scale2 + scale1·Σ_i U(C(i), L(i))/(1+ρ)^(Δ(i−1)) over the given paths
/// (annual consumption; position k is step k+1).
pub fn welfare_objective(
    c_path: &[f64],
    l_path: &[f64],
    alpha: f64,
    rho: f64,
    delta: f64,
    scale1: f64,
    scale2: f64,
) -> Result<f64> {
    if c_path.len() != l_path.len() {
        return Err(Error::Precondition(format!(
            "consumption path has {} entries, population path {}",
            c_path.len(),
            l_path.len()
        )));
    }
    let mut w = 0.0;
    for (k, (&c, &l)) in c_path.iter().zip(l_path).enumerate() {
        w += utility(c, l, alpha)? * discount_factor(rho, delta, k + 1);
    }
    Ok(scale2 + scale1 * w)
}

/// Explicit-Euler two-layer energy balance: heat capacities, climate
/// feedback λ and inter-layer exchange γ give (Φ_T, ξ1).
pub fn build_climate_matrices(
    c_at: f64,
    c_lo: f64,
    lambda: f64,
    gamma_heat: f64,
    delta: f64,
) -> Result<([[f64; 2]; 2], f64)> {
    for (name, v) in [("C_AT", c_at), ("C_LO", c_lo), ("delta", delta)] {
        if !(v > 0.0) {
            return Err(Error::Precondition(format!("{name} = {v} must be positive")));
        }
    }
    if lambda < 0.0 || gamma_heat < 0.0 {
        return Err(Error::Precondition(format!(
            "lambda = {lambda} and gamma = {gamma_heat} must be nonnegative"
        )));
    }
    let load = delta / c_at * (lambda + gamma_heat);
    if load >= 1.0 {
        return Err(Error::Precondition(format!(
            "Δ/C_AT·(λ+γ) = {load} ≥ 1, explicit step is unstable"
        )));
    }
    let phi = [
        [1.0 - load, delta * gamma_heat / c_at],
        [delta * gamma_heat / c_lo, 1.0 - delta * gamma_heat / c_lo],
    ];
    Ok((phi, delta / c_at))
}

/// Physical parameters behind a tabulated (Φ_T, ξ1).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyBalance {
    pub c_at: f64,
    pub c_lo: f64,
    pub lambda: f64,
    pub gamma_heat: f64,
}

impl EnergyBalance {
    /// Equilibrium climate sensitivity F_2x/λ.
    pub fn ecs(&self, eta: f64) -> f64 {
        eta / self.lambda
    }
}

/// Inverts [`build_climate_matrices`]. Only φ11, φ12, φ21 and ξ1 are used;
/// φ22 is implied.
pub fn invert_climate_matrices(phi_t: &[[f64; 2]; 2], xi1: f64, delta: f64) -> Result<EnergyBalance> {
    if !(xi1 > 0.0) || phi_t[1][0] <= 0.0 {
        return Err(Error::Precondition(
            "xi1 and phi21 must be positive to invert".into(),
        ));
    }
    let c_at = delta / xi1;
    let gamma_heat = phi_t[0][1] / xi1;
    let lambda = (1.0 - phi_t[0][0]) / xi1 - gamma_heat;
    let c_lo = delta * gamma_heat / phi_t[1][0];
    Ok(EnergyBalance {
        c_at,
        c_lo,
        lambda,
        gamma_heat,
    })
}

/// Flows at one step for plain floats (reporting and tests).
pub fn flows(
    p: &ParameterSet,
    x: &EndogenousState,
    w: Controls,
    exo: (f64, f64, f64, f64, f64, f64),
) -> Result<Flows> {
    let (l, a, sigma, theta1, f_ex, e_land) = exo;
    let y = gross_output(a, x.k, l, p.gamma);
    let q = net_output(y, x.t_at, theta1, w.mu, p);
    let e = emissions_rate(sigma, w.mu, y, e_land);
    let c = consumption(q, w.s);
    let f = radiative_forcing(x.m_at, f_ex, p.eta, p.m_at_1750)?;
    let u = utility(c, l, p.alpha)?;
    Ok(Flows { y, q, e, c, f, u })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{load_parameter_set, Vintage};

    fn p16() -> ParameterSet {
        load_parameter_set(Vintage::Dice2016R)
    }

    #[test]
    fn output_and_damages() {
        let y = gross_output(5.115, 223.0, 7403.0, 0.3);
        assert!((y - 105.2).abs() < 0.05, "{y}");
        assert_eq!(gross_output(5.115, 0.0, 7403.0, 0.3), 0.0);
        assert_eq!(damages_factor(0.0, 0.00236, 2.0), 1.0);
        assert!((damages_factor(3.0, 0.00236, 2.0) - 0.97920).abs() < 1e-5);
        assert!((damages_factor(0.85, 0.00236, 2.0) - 0.998298).abs() < 1e-6);
        let p = p16();
        let q = net_output(105.2, 0.85, 0.074101, 0.03, &p);
        assert!((q - 105.02).abs() < 0.01, "{q}");
        assert_eq!(net_output(105.2, 0.0, 0.074101, 0.0, &p), 105.2);
    }

    #[test]
    fn emissions_and_forcing() {
        assert!((emissions_rate(0.3503, 0.03, 105.2, 2.6) - 38.35).abs() < 0.01);
        assert_eq!(emissions_rate(0.3503, 1.0, 105.2, 2.6), 2.6);
        let f = radiative_forcing(2.0 * 588.0, 0.0, 3.6813, 588.0).unwrap();
        assert!((f - 3.6813).abs() < 1e-12);
        let f = radiative_forcing(851.0, 0.5, 3.6813, 588.0).unwrap();
        assert!((f - 2.4634).abs() < 1e-4);
        assert_eq!(radiative_forcing(588.0, 0.0, 3.6813, 588.0).unwrap(), 0.0);
        assert!(radiative_forcing(0.0, 0.0, 3.6813, 588.0).is_err());
    }

    #[test]
    fn one_step_updates() {
        let p = p16();
        let t = climate_step([0.85, 0.0068], 2.4634, &p.phi_t, p.xi1);
        assert!((t[0] - 0.9887).abs() < 1e-4);
        assert!((t[1] - 0.02788).abs() < 1e-5);
        assert_eq!(climate_step([0.0, 0.0], 0.0, &p.phi_t, p.xi1), [0.0, 0.0]);

        let m = carbon_step([851.0, 460.0, 1740.0], 38.35, &p.phi_m, p.xi2, p.delta);
        assert!((m[0] - 891.3).abs() < 0.1);
        assert!((m[1] - 471.29).abs() < 0.01);
        assert!((m[2] - 1740.67).abs() < 0.01);

        assert!((p.phi_k() - 0.59049).abs() < 1e-12);
        let k = capital_step(223.0, 105.02, 0.25, 0.1, 5.0);
        assert!((k - 262.954).abs() < 1e-3, "{k}");
        assert!((capital_step(10.0, 50.0, 0.0, 0.1, 5.0) - 5.9049).abs() < 1e-12);
    }

    #[test]
    fn consumption_and_utility() {
        assert_eq!(consumption(105.02, 0.0), 105.02);
        assert_eq!(consumption(105.02, 1.0), 0.0);
        assert!((consumption(105.02, 0.25) - 78.765).abs() < 1e-9);
        let u = utility(78.76, 7403.0, 1.45).unwrap();
        assert!((u - 10774.0).abs() < 1.0, "{u}");
        assert_eq!(utility(7.403, 7403.0, 1.45).unwrap(), 0.0);
        assert!(utility(0.0, 7403.0, 1.45).is_err());
        let log = utility(78.76, 7403.0, 1.0).unwrap();
        for a in [1.0 - 1e-6, 1.0 + 1e-6] {
            let near = utility(78.76, 7403.0, a).unwrap();
            assert!(((near - log) / log).abs() < 1e-3);
        }
    }

    #[test]
    fn welfare_discounting() {
        let u1 = utility(78.76, 7403.0, 1.45).unwrap();
        let w = welfare_objective(&[78.76], &[7403.0], 1.45, 0.3, 5.0, 2.0, 7.0).unwrap();
        assert!((w - (7.0 + 2.0 * u1)).abs() < 1e-9);
        let w2 = welfare_objective(&[78.76; 2], &[7403.0; 2], 1.45, 0.015, 5.0, 1.0, 0.0).unwrap();
        assert!((w2 - u1 * (1.0 + 1.015f64.powi(-5))).abs() < 1e-9);
        assert!((1.015f64.powi(-5) - 0.92826).abs() < 1e-5);
        assert!(welfare_objective(&[1.0], &[], 1.45, 0.015, 5.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn climate_matrix_round_trip() {
        let p = p16();
        let eb = invert_climate_matrices(&p.phi_t, p.xi1, p.delta).unwrap();
        assert!((eb.lambda + eb.gamma_heat - 1.2756).abs() < 1e-3);
        let (phi, xi1) =
            build_climate_matrices(eb.c_at, eb.c_lo, eb.lambda, eb.gamma_heat, p.delta).unwrap();
        assert!((xi1 - p.xi1).abs() < 1e-12);
        for r in 0..2 {
            for c in 0..2 {
                assert!((phi[r][c] - p.phi_t[r][c]).abs() < 1e-12);
            }
        }
        let (phi, _) = build_climate_matrices(50.0, 100.0, 1.0, 0.0, 5.0).unwrap();
        assert_eq!((phi[0][1], phi[1][0]), (0.0, 0.0));
        let (phi, _) = build_climate_matrices(50.0, 100.0, 0.0, 0.0, 5.0).unwrap();
        assert_eq!((phi[0][0], phi[1][1]), (1.0, 1.0));
        assert!(build_climate_matrices(1.0, 100.0, 1.0, 0.5, 5.0).is_err());
    }

    #[test]
    fn constant_forcing_equilibrium() {
        let p = p16();
        let eb = invert_climate_matrices(&p.phi_t, p.xi1, p.delta).unwrap();
        let f = 3.0;
        let mut t = [0.0, 0.0];
        for _ in 0..5000 {
            t = climate_step(t, f, &p.phi_t, p.xi1);
        }
        assert!((t[0] - f / eb.lambda).abs() < 1e-6);
    }
}
