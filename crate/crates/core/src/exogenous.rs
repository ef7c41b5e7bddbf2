//! Control-independent drivers: population, productivity, emissions
//! intensity, abatement cost coefficient, non-CO2 forcing and land-use
//! emissions.
//!
//! Step functions are generic over [`Scalar`] because the augmented state
//! carries them as states driven by the time index.

use std::fmt::Write as _;

use crate::ad::Scalar;
use crate::error::{Error, Result};
use crate::params::ParameterSet;

/// L(i+1) = L(i)·((1+La)/(1+L(i)))^lg.
pub fn population_step<S: Scalar>(l: S, la: f64, lg: f64) -> S {
    l * ((l + 1.0).recip() * (1.0 + la)).powf(lg)
}

/// A(i+1) = A(i)/(1 − gA·exp(−δ_A·Δ·(i−1))).
pub fn tfp_step<S: Scalar>(a: S, g_a: f64, delta_a: f64, delta: f64, i: S) -> Result<S> {
    let growth = ((i - 1.0) * (-delta_a * delta)).exp() * g_a;
    if !(growth.value() < 1.0) {
        return Err(Error::domain(
            "tfp_step",
            format!("gA·exp(−δA·Δ·(i−1)) = {} ≥ 1 at i = {}", growth.value(), i.value()),
        ));
    }
    Ok(a / (S::from_f64(1.0) - growth))
}

/// σ(i+1) = σ(i)·exp(−g_σ·(1−δ_σ)^(Δ(i−1))·Δ).
pub fn sigma_step<S: Scalar>(sigma: S, g_sigma: f64, delta_sigma: f64, delta: f64, i: S) -> S {
    let decay = ((i - 1.0) * delta).exp_base(1.0 - delta_sigma);
    sigma * (decay * (-g_sigma * delta)).exp()
}

/// θ1(i) = pb/(1000·θ2)·(1−δ_pb)^(i−1)·σ(i).
pub fn abatement_cost_coeff<S: Scalar>(sigma: S, pb: f64, delta_pb: f64, theta2: f64, i: S) -> S {
    (i - 1.0).exp_base(1.0 - delta_pb) * sigma * (pb / (1000.0 * theta2))
}

/// F_EX(i) = f0 + min{f1−f0, (f1−f0)/tf·(i−1)}.
pub fn forcing_exo<S: Scalar>(i: S, f0: f64, f1: f64, tf: f64) -> S {
    let span = f1 - f0;
    if i.value() - 1.0 < tf * (1.0 - 1e-9) {
        (i - 1.0) * (span / tf) + f0
    } else {
        S::from_f64(f1)
    }
}

/// E_Land(i) = E_L0·(1−δ_EL)^(i−1).
pub fn land_emissions<S: Scalar>(i: S, e_l0: f64, delta_el: f64) -> S {
    (i - 1.0).exp_base(1.0 - delta_el) * e_l0
}

/// Precomputed exogenous sequences; entry 0 is step 1 (the base year).
#[derive(Clone, Debug, PartialEq)]
pub struct ExogenousPath {
    pub horizon: usize,
    pub t0: f64,
    pub delta: f64,
    pub l: Vec<f64>,
    pub a: Vec<f64>,
    pub sigma: Vec<f64>,
    pub theta1: Vec<f64>,
    pub f_ex: Vec<f64>,
    pub e_land: Vec<f64>,
}

pub fn build_exogenous_path(p: &ParameterSet, horizon: usize) -> Result<ExogenousPath> {
    let n = horizon + 1;
    let mut path = ExogenousPath {
        horizon,
        t0: p.t0,
        delta: p.delta,
        l: Vec::with_capacity(n),
        a: Vec::with_capacity(n),
        sigma: Vec::with_capacity(n),
        theta1: Vec::with_capacity(n),
        f_ex: Vec::with_capacity(n),
        e_land: Vec::with_capacity(n),
    };
    let (mut l, mut a) = (p.l0, p.a0);
    let mut sigma = crate::params::initial_sigma(p.e0, p.q0, p.mu0)?;
    for step in 1..=n {
        let i = step as f64;
        path.l.push(l);
        path.a.push(a);
        path.sigma.push(sigma);
        path.theta1
            .push(abatement_cost_coeff(sigma, p.pb, p.delta_pb, p.theta2, i));
        path.f_ex.push(forcing_exo(i, p.f0, p.f1, p.tf));
        path.e_land.push(land_emissions(i, p.e_l0, p.delta_el));
        if step < n {
            l = population_step(l, p.la, p.lg);
            a = tfp_step(a, p.g_a, p.delta_a, p.delta, i)?;
            sigma = sigma_step(sigma, p.g_sigma, p.delta_sigma, p.delta, i);
        }
    }
    Ok(path)
}

impl ExogenousPath {
    pub fn len(&self) -> usize {
        self.l.len()
    }

    pub fn is_empty(&self) -> bool {
        self.l.is_empty()
    }

    /// Calendar year of 1-based step `i`.
    pub fn year(&self, i: usize) -> f64 {
        self.t0 + self.delta * (i as f64 - 1.0)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,year,L,A,sigma,theta1,F_EX,E_Land\n");
        for k in 0..self.len() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                k + 1,
                self.year(k + 1),
                self.l[k],
                self.a[k],
                self.sigma[k],
                self.theta1[k],
                self.f_ex[k],
                self.e_land[k]
            );
        }
        s
    }
}
