//! Direct transcription of the welfare-maximization problem.
//!
//! Decision vector layout (1-based step `j`, `N` = horizon):
//!
//! ```text
//! [x(1), w(1), x(2), w(2), …, x(N), w(N), x(N+1)]
//! ```
//!
//! with `x(j)` the 17-component augmented state and `w(j) = (μ(j+1), s(j+1))`.
//! Equality rows, in order: initial-condition rows, dynamics rows
//! `f(x(j), w(j)) − x(j+1)` for `j = 1..N` (17 each), then fixed-value rows.
//! Inequality rows `d(x) ≤ 0`: temperature cap, rate bound (two per step),
//! growth bound.

use std::fmt::Write as _;

use crate::ad::{Scalar, Tape, Taylor2, Var};
use crate::dynamics::{
    capital_step, carbon_step_total, climate_step, consumption, emissions_rate, gross_output,
    net_output, radiative_forcing, utility,
};
use crate::error::{Error, Result};
use crate::exogenous::{
    abatement_cost_coeff, forcing_exo, population_step, sigma_step, tfp_step,
};
use crate::nlp::{OrderKey, Problem, Scaling, Triplets};
use crate::params::ParameterSet;

pub const DIM: usize = 17;
pub const NU: usize = 2;
const STAGE: usize = DIM + NU;
const STAGE_H: usize = STAGE * (STAGE + 1) / 2;
const DIM_H: usize = DIM * (DIM + 1) / 2;
const POSITIVE_FLOOR: f64 = 1e-6;

/// Component indices of the augmented state (0-based).
pub mod idx {
    pub const TIME: usize = 0;
    pub const T_AT: usize = 1;
    pub const T_LO: usize = 2;
    pub const M_AT: usize = 3;
    pub const M_UP: usize = 4;
    pub const M_LO: usize = 5;
    pub const K: usize = 6;
    pub const SIGMA: usize = 7;
    pub const L: usize = 8;
    pub const A: usize = 9;
    pub const E_LAND: usize = 10;
    pub const F_EX: usize = 11;
    /// Δ × annual emissions (GtCO2 per step).
    pub const E: usize = 12;
    /// Δ × annual consumption (trillion USD per step).
    pub const C: usize = 13;
    pub const MU: usize = 14;
    pub const SAVINGS: usize = 15;
    pub const W: usize = 16;

    pub const NAMES: [&str; super::DIM] = [
        "i", "T_AT", "T_LO", "M_AT", "M_UP", "M_LO", "K", "sigma", "L", "A", "E_Land", "F_EX",
        "E", "C", "mu", "s", "W",
    ];
}

use idx::*;

pub type AugmentedState = [f64; DIM];
pub type Input = [f64; NU];

/// Δ·(σ(1−μ)Y + E_Land) from the components of `x`.
pub fn emissions_state<S: Scalar>(p: &ParameterSet, x: &[S; DIM]) -> S {
    let y = gross_output(x[A], x[K], x[L], p.gamma);
    emissions_rate(x[SIGMA], x[MU], y, x[E_LAND]) * p.delta
}

/// Δ·Ω(T_AT)(1 − θ1 μ^θ2)Y(1 − s) from the components of `x`.
pub fn consumption_state<S: Scalar>(p: &ParameterSet, x: &[S; DIM]) -> S {
    let y = gross_output(x[A], x[K], x[L], p.gamma);
    let theta1 = abatement_cost_coeff(x[SIGMA], p.pb, p.delta_pb, p.theta2, x[TIME]);
    consumption(net_output(y, x[T_AT], theta1, x[MU], p), x[SAVINGS]) * p.delta
}

/// x(i+1) = f(x(i), w(i)).
pub fn augmented_step<S: Scalar>(
    p: &ParameterSet,
    rho: f64,
    x: &[S; DIM],
    w: &[S; NU],
) -> Result<[S; DIM]> {
    let i = x[TIME];
    let y = gross_output(x[A], x[K], x[L], p.gamma);
    let theta1 = abatement_cost_coeff(x[SIGMA], p.pb, p.delta_pb, p.theta2, i);
    let q = net_output(y, x[T_AT], theta1, x[MU], p);
    let f = radiative_forcing(x[M_AT], x[F_EX], p.eta, p.m_at_1750)?;
    let t = climate_step([x[T_AT], x[T_LO]], f, &p.phi_t, p.xi1);
    let m = carbon_step_total([x[M_AT], x[M_UP], x[M_LO]], x[E], &p.phi_m, p.xi2);
    let u = utility(x[C] / p.delta, x[L], p.alpha)?;
    let discount = ((i - 1.0) * -p.delta).exp_base(1.0 + rho);

    let mut next = [S::from_f64(0.0); DIM];
    next[TIME] = i + 1.0;
    next[T_AT] = t[0];
    next[T_LO] = t[1];
    next[M_AT] = m[0];
    next[M_UP] = m[1];
    next[M_LO] = m[2];
    next[K] = capital_step(x[K], q, x[SAVINGS], p.delta_k, p.delta);
    next[SIGMA] = sigma_step(x[SIGMA], p.g_sigma, p.delta_sigma, p.delta, i);
    next[L] = population_step(x[L], p.la, p.lg);
    next[A] = tfp_step(x[A], p.g_a, p.delta_a, p.delta, i)?;
    next[E_LAND] = x[E_LAND] * (1.0 - p.delta_el);
    next[F_EX] = forcing_exo(i + 1.0, p.f0, p.f1, p.tf);
    next[MU] = w[0];
    next[SAVINGS] = w[1];
    next[E] = emissions_state(p, &next);
    next[C] = consumption_state(p, &next);
    next[W] = x[W] + u * discount;
    Ok(next)
}

/// x(1) for the base year with first-step controls (μ1, s1).
pub fn initial_augmented_state(p: &ParameterSet, mu1: f64, s1: f64) -> Result<AugmentedState> {
    let mut x = [0.0; DIM];
    x[TIME] = 1.0;
    x[T_AT] = p.t_at0;
    x[T_LO] = p.t_lo0;
    x[M_AT] = p.m_at0;
    x[M_UP] = p.m_up0;
    x[M_LO] = p.m_lo0;
    x[K] = p.k0;
    x[SIGMA] = crate::params::initial_sigma(p.e0, p.q0, p.mu0)?;
    x[L] = p.l0;
    x[A] = p.a0;
    x[E_LAND] = p.e_l0;
    x[F_EX] = forcing_exo(1.0, p.f0, p.f1, p.tf);
    x[MU] = mu1;
    x[SAVINGS] = s1;
    x[E] = emissions_state(p, &x);
    x[C] = consumption_state(p, &x);
    x[W] = 0.0;
    Ok(x)
}

/// Simulates the augmented dynamics from `x1` under `inputs`.
pub fn rollout(
    p: &ParameterSet,
    rho: f64,
    x1: &AugmentedState,
    inputs: &[Input],
) -> Result<Vec<AugmentedState>> {
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(*x1);
    for (j, w) in inputs.iter().enumerate() {
        let next = augmented_step(p, rho, &states[j], w)?;
        if let Some(k) = next.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step: j + 2,
                component: k + 1,
            });
        }
        states.push(next);
    }
    Ok(states)
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitialCondition {
    /// x(1) built from the base-year data with μ(1), s(1) free.
    Free,
    /// x(1) fixed to a given state.
    Pinned(AugmentedState),
}

#[derive(Clone, Debug, PartialEq)]
pub struct OcpSpec {
    pub params: ParameterSet,
    pub horizon: usize,
    pub rho: f64,
    pub initial: InitialCondition,
    pub fix_mu1: bool,
    pub t_max: Option<f64>,
    pub rate_bound: Option<f64>,
    pub growth_bound: Option<f64>,
    /// (length, value) of the savings-rate pin at the end of the horizon.
    pub savings_tail: Option<(usize, f64)>,
    /// Maximize `scale2 + scale1·W` instead of `W`.
    pub scaled_objective: bool,
}

impl OcpSpec {
    pub fn new(params: ParameterSet, horizon: usize) -> Self {
        let rho = params.rho;
        OcpSpec {
            params,
            horizon,
            rho,
            initial: InitialCondition::Free,
            fix_mu1: false,
            t_max: None,
            rate_bound: None,
            growth_bound: None,
            savings_tail: None,
            scaled_objective: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Options(m));
        if self.horizon < 1 {
            return bad("horizon must be at least 1".into());
        }
        if !(self.rho > -1.0) || !self.rho.is_finite() {
            return bad(format!("discount rate {} is not usable", self.rho));
        }
        if let Some(t) = self.t_max {
            if !(t > 0.0) {
                return bad(format!("T_max = {t} must be positive"));
            }
        }
        let pinned = matches!(self.initial, InitialCondition::Pinned(_));
        if let Some(b) = self.rate_bound {
            if !(b >= 0.0) {
                return bad(format!("rate bound {b} must be nonnegative"));
            }
            if !self.fix_mu1 && !pinned {
                return bad("rate bound requires fix_mu1 so that mu(1) is defined".into());
            }
        }
        if let Some(g) = self.growth_bound {
            if !(g >= 0.0) {
                return bad(format!("growth bound {g} must be nonnegative"));
            }
            if !self.fix_mu1 && !pinned {
                return bad("growth bound requires fix_mu1 so that mu(1) is defined".into());
            }
        }
        if let Some((len, v)) = self.savings_tail {
            if len > self.horizon {
                return bad(format!("savings tail {len} exceeds horizon {}", self.horizon));
            }
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("savings tail value {v} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EqRow {
    /// data − x_comp(1)
    Pin { comp: usize, value: f64 },
    /// Δ·E(x(1)) − x13(1)
    EmissionsFormula,
    /// Δ·C(x(1)) − x14(1)
    ConsumptionFormula,
    /// f_comp(x(step), w(step)) − x_comp(step+1)
    Dynamics { step: usize, comp: usize },
    /// value − x_comp(step)
    Fix { step: usize, comp: usize, value: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum IneqRow {
    /// T_AT(step) − T_max
    TemperatureCap { step: usize, t_max: f64 },
    /// μ(step+1) − μ(step) − Δμ
    RateUp { step: usize, bound: f64 },
    /// μ(step) − μ(step+1) − Δμ
    RateDown { step: usize, bound: f64 },
    /// μ(step+1) − (1+Γ)μ(step)
    Growth { step: usize, gamma: f64 },
}

/// (step, component) of a row; component is 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RowTag {
    pub step: usize,
    pub comp: usize,
}

/// A transcribed finite-horizon problem.
#[derive(Clone, Debug)]
pub struct NlpProblem {
    spec: OcpSpec,
    eq: Vec<EqRow>,
    ineq: Vec<IneqRow>,
    n_pins: usize,
    guess: Vec<f64>,
    scale: [f64; DIM],
}

pub fn build_ocp1(spec: &OcpSpec) -> Result<NlpProblem> {
    if spec.initial != InitialCondition::Free {
        return Err(Error::Options("OCP1 requires a free initial condition".into()));
    }
    NlpProblem::build(spec.clone())
}

pub fn build_ocp2(spec: &OcpSpec, x_init: &AugmentedState) -> Result<NlpProblem> {
    let mut spec = spec.clone();
    spec.initial = InitialCondition::Pinned(*x_init);
    NlpProblem::build(spec)
}

impl NlpProblem {
    fn build(spec: OcpSpec) -> Result<Self> {
        spec.validate()?;
        let p = &spec.params;
        let n = spec.horizon;

        let mu_start = match &spec.initial {
            InitialCondition::Free => p.mu0,
            InitialCondition::Pinned(x) => x[MU],
        };
        let clamp = |v: f64| v.clamp(0.01, 0.99);
        let ramp = |j: usize| clamp(mu_start + (1.0 - mu_start) * (j as f64 - 1.0) / n as f64);
        let mut inputs: Vec<Input> = (1..=n).map(|j| [ramp(j + 1), 0.25]).collect();
        if let Some((len, value)) = spec.savings_tail {
            for j in (n + 1 - len)..=n {
                if j >= 2 {
                    inputs[j - 2][1] = value;
                }
            }
        }
        let x1 = match &spec.initial {
            InitialCondition::Free => {
                let mu1 = if spec.fix_mu1 { p.mu0 } else { clamp(p.mu0) };
                initial_augmented_state(p, mu1, 0.25)?
            }
            InitialCondition::Pinned(x) => *x,
        };
        let states = rollout(p, spec.rho, &x1, &inputs)?;
        let mut scale = [0.0f64; DIM];
        for x in &states {
            for k in 0..DIM {
                scale[k] = scale[k].max(x[k].abs());
            }
        }
        for s in scale.iter_mut() {
            if *s == 0.0 {
                *s = 1.0;
            }
        }
        scale[MU] = 1.0;
        scale[SAVINGS] = 1.0;

        let mut guess = Vec::with_capacity(STAGE * n + DIM);
        for j in 0..n {
            guess.extend_from_slice(&states[j]);
            guess.extend_from_slice(&inputs[j]);
        }
        guess.extend_from_slice(&states[n]);

        let mut prob = NlpProblem {
            spec,
            eq: Vec::new(),
            ineq: Vec::new(),
            n_pins: 0,
            guess,
            scale,
        };
        prob.make_rows();
        Ok(prob)
    }

    fn make_rows(&mut self) {
        let spec = &self.spec;
        let n = spec.horizon;
        let mut eq = Vec::new();
        match &spec.initial {
            InitialCondition::Free => {
                let data = initial_augmented_state(&spec.params, spec.params.mu0, 0.0)
                    .expect("validated parameters");
                for comp in 0..DIM {
                    if ![E, C, MU, SAVINGS].contains(&comp) {
                        eq.push(EqRow::Pin {
                            comp,
                            value: data[comp],
                        });
                    }
                }
                eq.push(EqRow::EmissionsFormula);
                eq.push(EqRow::ConsumptionFormula);
            }
            InitialCondition::Pinned(x) => {
                for comp in 0..DIM {
                    eq.push(EqRow::Pin {
                        comp,
                        value: x[comp],
                    });
                }
            }
        }
        let n_pins = eq.len();
        for step in 1..=n {
            for comp in 0..DIM {
                eq.push(EqRow::Dynamics { step, comp });
            }
        }
        let free = spec.initial == InitialCondition::Free;
        if spec.fix_mu1 && free {
            eq.push(EqRow::Fix {
                step: 1,
                comp: MU,
                value: spec.params.mu0,
            });
        }
        if let Some((len, value)) = spec.savings_tail {
            for step in (n + 1 - len)..=n {
                if step == 1 && !free {
                    continue;
                }
                eq.push(EqRow::Fix {
                    step,
                    comp: SAVINGS,
                    value,
                });
            }
        }

        let mut ineq = Vec::new();
        if let Some(t_max) = spec.t_max {
            for step in 1..=n + 1 {
                ineq.push(IneqRow::TemperatureCap { step, t_max });
            }
        }
        if let Some(bound) = spec.rate_bound {
            for step in 1..=n {
                ineq.push(IneqRow::RateUp { step, bound });
                ineq.push(IneqRow::RateDown { step, bound });
            }
        }
        if let Some(gamma) = spec.growth_bound {
            for step in 1..=n {
                ineq.push(IneqRow::Growth { step, gamma });
            }
        }
        self.eq = eq;
        self.ineq = ineq;
        self.n_pins = n_pins;
    }

    fn rebuilt(mut self, f: impl FnOnce(&mut OcpSpec)) -> Result<Self> {
        f(&mut self.spec);
        self.spec.validate()?;
        self.make_rows();
        Ok(self)
    }

    /// Adds T_AT(j) ≤ T_max for j = 1..N+1.
    pub fn add_temperature_cap(self, t_max: f64) -> Result<Self> {
        self.rebuilt(|s| s.t_max = Some(t_max))
    }

    /// Adds |μ(j+1) − μ(j)| ≤ Δμ.
    pub fn add_rate_bound(self, delta_mu: f64) -> Result<Self> {
        self.rebuilt(|s| s.rate_bound = Some(delta_mu))
    }

    /// Adds μ(j+1) ≤ (1+Γ)μ(j).
    pub fn add_growth_bound(self, gamma_mu: f64) -> Result<Self> {
        self.rebuilt(|s| s.growth_bound = Some(gamma_mu))
    }

    /// Pins s(j) = value over the last `len` steps of the horizon.
    pub fn add_savings_tail(self, len: usize, value: f64) -> Result<Self> {
        self.rebuilt(|s| s.savings_tail = if len == 0 { None } else { Some((len, value)) })
    }

    /// Pins μ(1) = μ0.
    pub fn fix_first_mitigation(self) -> Result<Self> {
        self.rebuilt(|s| s.fix_mu1 = true)
    }

    // ---- layout -----------------------------------------------------------

    pub fn spec(&self) -> &OcpSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParameterSet {
        &self.spec.params
    }

    pub fn horizon(&self) -> usize {
        self.spec.horizon
    }

    pub fn eq_rows(&self) -> &[EqRow] {
        &self.eq
    }

    pub fn ineq_rows(&self) -> &[IneqRow] {
        &self.ineq
    }

    pub fn num_pins(&self) -> usize {
        self.n_pins
    }

    /// Index of x_comp(step) in the decision vector.
    pub fn state_index(&self, step: usize, comp: usize) -> usize {
        (step - 1) * STAGE + comp
    }

    /// Index of w_m(step) in the decision vector.
    pub fn input_index(&self, step: usize, m: usize) -> usize {
        (step - 1) * STAGE + DIM + m
    }

    pub fn dynamics_row(&self, step: usize, comp: usize) -> usize {
        self.n_pins + (step - 1) * DIM + comp
    }

    /// Row whose multiplier is the costate of x_comp(step), for E and C.
    pub fn costate_row(&self, step: usize, comp: usize) -> usize {
        if step >= 2 {
            return self.dynamics_row(step - 1, comp);
        }
        self.eq
            .iter()
            .position(|r| match (*r, comp) {
                (EqRow::Pin { comp: c, .. }, _) => c == comp,
                (EqRow::EmissionsFormula, E) | (EqRow::ConsumptionFormula, C) => true,
                _ => false,
            })
            .expect("every E and C component at step 1 has a row")
    }

    pub fn eq_row_tag(&self, r: usize) -> RowTag {
        match self.eq[r] {
            EqRow::Pin { comp, .. } => RowTag { step: 1, comp },
            EqRow::EmissionsFormula => RowTag { step: 1, comp: E },
            EqRow::ConsumptionFormula => RowTag { step: 1, comp: C },
            EqRow::Dynamics { step, comp } => RowTag {
                step: step + 1,
                comp,
            },
            EqRow::Fix { step, comp, .. } => RowTag { step, comp },
        }
    }

    pub fn states(&self, x: &[f64]) -> Vec<AugmentedState> {
        (1..=self.horizon() + 1)
            .map(|j| {
                let o = self.state_index(j, 0);
                std::array::from_fn(|k| x[o + k])
            })
            .collect()
    }

    pub fn inputs(&self, x: &[f64]) -> Vec<Input> {
        (1..=self.horizon())
            .map(|j| {
                let o = self.input_index(j, 0);
                [x[o], x[o + 1]]
            })
            .collect()
    }

    /// Packs states and inputs into a decision vector.
    pub fn pack(&self, states: &[AugmentedState], inputs: &[Input]) -> Vec<f64> {
        let n = self.horizon();
        let mut v = Vec::with_capacity(STAGE * n + DIM);
        for j in 0..n {
            v.extend_from_slice(&states[j]);
            v.extend_from_slice(&inputs[j]);
        }
        v.extend_from_slice(&states[n]);
        v
    }

    /// Decision vector of the rollout from the problem's x(1) data and the
    /// given first-step controls and inputs.
    pub fn rollout_point(&self, mu1: f64, s1: f64, inputs: &[Input]) -> Result<Vec<f64>> {
        let x1 = match &self.spec.initial {
            InitialCondition::Free => initial_augmented_state(&self.spec.params, mu1, s1)?,
            InitialCondition::Pinned(x) => *x,
        };
        let states = rollout(&self.spec.params, self.spec.rho, &x1, inputs)?;
        Ok(self.pack(&states, inputs))
    }

    fn objective_coeff(&self) -> (f64, f64) {
        if self.spec.scaled_objective {
            (self.spec.params.scale1, self.spec.params.scale2)
        } else {
            (1.0, 0.0)
        }
    }

    /// Plain-text residual listing, one equality row per line.
    pub fn residual_dump(&self, x: &[f64]) -> Result<String> {
        let c = self.constraints(x)?;
        let mut s = String::new();
        for (r, v) in c.iter().take(self.eq.len()).enumerate() {
            let tag = self.eq_row_tag(r);
            let _ = writeln!(
                s,
                "eq step={} comp={} residual={:e}",
                tag.step,
                tag.comp + 1,
                v
            );
        }
        Ok(s)
    }

    // ---- stage evaluation -------------------------------------------------

    fn stage_input(&self, x: &[f64], step: usize) -> [f64; STAGE] {
        let o = self.state_index(step, 0);
        std::array::from_fn(|k| x[o + k])
    }

    fn first_state(&self, x: &[f64]) -> [f64; DIM] {
        std::array::from_fn(|k| x[k])
    }

    fn stage_eval<S: Scalar>(&self, v: &[S; STAGE]) -> Result<[S; DIM]> {
        let xs: [S; DIM] = std::array::from_fn(|k| v[k]);
        let ws = [v[DIM], v[DIM + 1]];
        augmented_step(&self.spec.params, self.spec.rho, &xs, &ws)
    }

    fn formulas<S: Scalar>(&self, x: &[S; DIM]) -> [S; 2] {
        [
            emissions_state(&self.spec.params, x),
            consumption_state(&self.spec.params, x),
        ]
    }

    fn ineq_value(&self, row: &IneqRow, x: &[f64]) -> f64 {
        let mu = |j: usize| x[self.state_index(j, MU)];
        match *row {
            IneqRow::TemperatureCap { step, t_max } => x[self.state_index(step, T_AT)] - t_max,
            IneqRow::RateUp { step, bound } => mu(step + 1) - mu(step) - bound,
            IneqRow::RateDown { step, bound } => mu(step) - mu(step + 1) - bound,
            IneqRow::Growth { step, gamma } => mu(step + 1) - (1.0 + gamma) * mu(step),
        }
    }

    fn ineq_gradient(&self, row: &IneqRow) -> Vec<(usize, f64)> {
        let mu = |j: usize| self.state_index(j, MU);
        match *row {
            IneqRow::TemperatureCap { step, .. } => vec![(self.state_index(step, T_AT), 1.0)],
            IneqRow::RateUp { step, .. } => vec![(mu(step + 1), 1.0), (mu(step), -1.0)],
            IneqRow::RateDown { step, .. } => vec![(mu(step), 1.0), (mu(step + 1), -1.0)],
            IneqRow::Growth { step, gamma } => {
                vec![(mu(step + 1), 1.0), (mu(step), -(1.0 + gamma))]
            }
        }
    }

    fn formula_row(&self) -> Option<usize> {
        self.eq.iter().position(|r| *r == EqRow::EmissionsFormula)
    }
}

fn tape_vars<'t, const N: usize>(tape: &'t Tape, v: &[f64; N]) -> [Var<'t>; N] {
    std::array::from_fn(|k| tape.var(v[k]))
}

/// Lower-triangle Hessian entries of a weighted sum of Taylor outputs,
/// mapped to global indices `offset + local`.
fn push_hessian<const N: usize, const H: usize>(
    out: &mut Triplets,
    offset: usize,
    outputs: &[Taylor2<N, H>],
    weights: &[f64],
) {
    for a in 0..N {
        for b in a..N {
            let k = Taylor2::<N, H>::index(a, b);
            let v: f64 = outputs
                .iter()
                .zip(weights)
                .map(|(o, w)| o.hess[k] * w)
                .sum();
            out.push((offset + b, offset + a, v));
        }
    }
}

impl Problem for NlpProblem {
    fn num_vars(&self) -> usize {
        STAGE * self.horizon() + DIM
    }

    fn num_eq(&self) -> usize {
        self.eq.len()
    }

    fn num_ineq(&self) -> usize {
        self.ineq.len()
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.num_vars();
        let mut lo = vec![f64::NEG_INFINITY; n];
        let mut hi = vec![f64::INFINITY; n];
        for j in 1..=self.horizon() + 1 {
            for comp in [M_AT, M_UP, M_LO, K, L, C] {
                lo[self.state_index(j, comp)] = POSITIVE_FLOOR * self.scale[comp];
            }
        }
        if self.spec.initial == InitialCondition::Free {
            for comp in [MU, SAVINGS] {
                lo[self.state_index(1, comp)] = 0.0;
                hi[self.state_index(1, comp)] = 1.0;
            }
        }
        for j in 1..=self.horizon() {
            for m in 0..NU {
                lo[self.input_index(j, m)] = 0.0;
                hi[self.input_index(j, m)] = 1.0;
            }
        }
        (lo, hi)
    }

    fn initial_point(&self) -> Vec<f64> {
        self.guess.clone()
    }

    fn objective(&self, x: &[f64]) -> Result<f64> {
        let (a, b) = self.objective_coeff();
        Ok(b + a * x[self.state_index(self.horizon() + 1, W)])
    }

    fn objective_gradient(&self, _x: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.num_vars()];
        g[self.state_index(self.horizon() + 1, W)] = self.objective_coeff().0;
        Ok(g)
    }

    fn constraints(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut c = Vec::with_capacity(self.eq.len() + self.ineq.len());
        let x1 = self.first_state(x);
        let formulas = self.formulas(&x1);
        let mut stage_cache: Option<(usize, [f64; DIM])> = None;
        for row in &self.eq {
            let v = match *row {
                EqRow::Pin { comp, value } => value - x1[comp],
                EqRow::EmissionsFormula => formulas[0] - x1[E],
                EqRow::ConsumptionFormula => formulas[1] - x1[C],
                EqRow::Dynamics { step, comp } => {
                    let f = match stage_cache {
                        Some((s, f)) if s == step => f,
                        _ => {
                            let f = self
                                .stage_eval(&self.stage_input(x, step))
                                .map_err(|e| with_step(e, step))?;
                            stage_cache = Some((step, f));
                            f
                        }
                    };
                    f[comp] - x[self.state_index(step + 1, comp)]
                }
                EqRow::Fix { step, comp, value } => value - x[self.state_index(step, comp)],
            };
            c.push(v);
        }
        for row in &self.ineq {
            c.push(self.ineq_value(row, x));
        }
        Ok(c)
    }

    fn jacobian(&self, x: &[f64]) -> Result<Triplets> {
        let mut t = Triplets::with_capacity(self.eq.len() * STAGE + 3 * self.ineq.len());
        for (r, row) in self.eq.iter().enumerate() {
            match *row {
                EqRow::Pin { comp, .. } => t.push((r, comp, -1.0)),
                EqRow::Fix { step, comp, .. } => t.push((r, self.state_index(step, comp), -1.0)),
                EqRow::EmissionsFormula | EqRow::ConsumptionFormula | EqRow::Dynamics { .. } => {}
            }
        }
        if let Some(r0) = self.formula_row() {
            let tape = Tape::with_capacity(256);
            let v = tape_vars(&tape, &self.first_state(x));
            let out = self.formulas(&v);
            for (o, comp) in [(0, E), (1, C)] {
                let adj = tape.gradient(out[o]);
                for k in 0..DIM {
                    t.push((r0 + o, k, adj[v[k].index()]));
                }
                t.push((r0 + o, comp, -1.0));
            }
        }
        for step in 1..=self.horizon() {
            let tape = Tape::with_capacity(1024);
            let v = tape_vars(&tape, &self.stage_input(x, step));
            let out = self.stage_eval(&v).map_err(|e| with_step(e, step))?;
            let base = self.state_index(step, 0);
            for comp in 0..DIM {
                let r = self.dynamics_row(step, comp);
                let adj = if out[comp].is_active() {
                    tape.gradient(out[comp])
                } else {
                    Vec::new()
                };
                for k in 0..STAGE {
                    let d = adj.get(v[k].index()).copied().unwrap_or(0.0);
                    t.push((r, base + k, d));
                }
                t.push((r, self.state_index(step + 1, comp), -1.0));
            }
        }
        let me = self.eq.len();
        for (r, row) in self.ineq.iter().enumerate() {
            for (c, v) in self.ineq_gradient(row) {
                t.push((me + r, c, v));
            }
        }
        Ok(t)
    }

    fn lagrangian_hessian(&self, x: &[f64], _sigma: f64, y: &[f64]) -> Result<Triplets> {
        let mut h = Triplets::with_capacity(self.horizon() * STAGE_H + DIM_H);
        if let Some(r0) = self.formula_row() {
            let v: [Taylor2<DIM, DIM_H>; DIM] =
                std::array::from_fn(|k| Taylor2::variable(x[k], k));
            let out = self.formulas(&v);
            push_hessian(&mut h, 0, &out, &y[r0..r0 + 2]);
        }
        for step in 1..=self.horizon() {
            let input = self.stage_input(x, step);
            let v: [Taylor2<STAGE, STAGE_H>; STAGE] =
                std::array::from_fn(|k| Taylor2::variable(input[k], k));
            let out = self.stage_eval(&v).map_err(|e| with_step(e, step))?;
            let r = self.dynamics_row(step, 0);
            push_hessian(&mut h, self.state_index(step, 0), &out, &y[r..r + DIM]);
        }
        Ok(h)
    }

    /// One reverse sweep per stage seeded with the multipliers.
    fn lagrangian_gradient(&self, x: &[f64], sigma: f64, y: &[f64]) -> Result<Vec<f64>> {
        let mut g = self.objective_gradient(x)?;
        for v in g.iter_mut() {
            *v *= sigma;
        }
        for (r, row) in self.eq.iter().enumerate() {
            match *row {
                EqRow::Pin { comp, .. } => g[comp] -= y[r],
                EqRow::EmissionsFormula => g[E] -= y[r],
                EqRow::ConsumptionFormula => g[C] -= y[r],
                EqRow::Dynamics { step, comp } => g[self.state_index(step + 1, comp)] -= y[r],
                EqRow::Fix { step, comp, .. } => g[self.state_index(step, comp)] -= y[r],
            }
        }
        if let Some(r0) = self.formula_row() {
            let tape = Tape::with_capacity(256);
            let v = tape_vars(&tape, &self.first_state(x));
            let out = self.formulas(&v);
            let adj = tape.adjoints(&[(out[0], y[r0]), (out[1], y[r0 + 1])]);
            for k in 0..DIM {
                g[k] += adj[v[k].index()];
            }
        }
        for step in 1..=self.horizon() {
            let tape = Tape::with_capacity(1024);
            let v = tape_vars(&tape, &self.stage_input(x, step));
            let out = self.stage_eval(&v).map_err(|e| with_step(e, step))?;
            let r = self.dynamics_row(step, 0);
            let seeds: Vec<(Var<'_>, f64)> = (0..DIM).map(|k| (out[k], y[r + k])).collect();
            let adj = tape.adjoints(&seeds);
            let base = self.state_index(step, 0);
            for k in 0..STAGE {
                g[base + k] += adj[v[k].index()];
            }
        }
        let me = self.eq.len();
        for (r, row) in self.ineq.iter().enumerate() {
            for (c, v) in self.ineq_gradient(row) {
                g[c] += v * y[me + r];
            }
        }
        Ok(g)
    }

    fn var_keys(&self) -> Vec<OrderKey> {
        let mut keys = Vec::with_capacity(self.num_vars());
        for step in 1..=self.horizon() {
            for k in 0..STAGE {
                keys.push(OrderKey::var(step, k));
            }
        }
        for k in 0..DIM {
            keys.push(OrderKey::var(self.horizon() + 1, k));
        }
        keys
    }

    fn row_keys(&self) -> Vec<OrderKey> {
        let mut keys = Vec::with_capacity(self.eq.len() + self.ineq.len());
        for (r, row) in self.eq.iter().enumerate() {
            keys.push(match *row {
                EqRow::Pin { .. } | EqRow::EmissionsFormula | EqRow::ConsumptionFormula => {
                    OrderKey::row(0, r)
                }
                EqRow::Dynamics { step, comp } => OrderKey::row(step, 100 + comp),
                EqRow::Fix { step, .. } => OrderKey::row(step, 200 + r),
            });
        }
        for (r, row) in self.ineq.iter().enumerate() {
            keys.push(match *row {
                IneqRow::TemperatureCap { step, .. } => OrderKey::row(step, 300 + r),
                IneqRow::RateUp { step, .. } | IneqRow::RateDown { step, .. } => {
                    OrderKey::row(step, 400 + r)
                }
                IneqRow::Growth { step, .. } => OrderKey::row(step, 500 + r),
            });
        }
        keys
    }

    fn scaling(&self) -> Scaling {
        let mut var = vec![1.0; self.num_vars()];
        for j in 1..=self.horizon() + 1 {
            for k in 0..DIM {
                var[self.state_index(j, k)] = self.scale[k];
            }
        }
        let mut row = Vec::with_capacity(self.eq.len() + self.ineq.len());
        for r in &self.eq {
            let comp = match *r {
                EqRow::Pin { comp, .. } => comp,
                EqRow::EmissionsFormula => E,
                EqRow::ConsumptionFormula => C,
                EqRow::Dynamics { comp, .. } => comp,
                EqRow::Fix { comp, .. } => comp,
            };
            row.push(1.0 / self.scale[comp]);
        }
        for r in &self.ineq {
            let comp = match r {
                IneqRow::TemperatureCap { .. } => T_AT,
                _ => MU,
            };
            row.push(1.0 / self.scale[comp]);
        }
        Scaling {
            var,
            row,
            objective: 1.0 / (self.objective_coeff().0 * self.scale[W]),
        }
    }
}

fn with_step(e: Error, step: usize) -> Error {
    match e {
        Error::Domain { what, detail } => Error::Domain {
            what,
            detail: format!("{detail} (step {step})"),
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::welfare_objective;
    use crate::nlp::{check_gradient, Problem};
    use crate::params::{load_parameter_set, Vintage};

    fn p16() -> ParameterSet {
        load_parameter_set(Vintage::Dice2016R)
    }

    #[test]
    fn one_step_matches_golden_values() {
        let p = p16();
        let x1 = initial_augmented_state(&p, 0.03, 0.25).unwrap();
        let x2 = augmented_step(&p, p.rho, &x1, &[0.03, 0.25]).unwrap();
        assert!((x2[T_AT] - 0.988661).abs() < 1e-5);
        assert!((x2[T_LO] - 0.02788).abs() < 1e-5);
        assert!((x2[M_AT] - 891.32234).abs() < 1e-4);
        assert!((x2[M_UP] - 471.2891).abs() < 1e-4);
        assert!((x2[M_LO] - 1740.67069).abs() < 1e-4);
        assert!((x2[K] - 262.926189).abs() < 1e-4);
        assert!((x2[L] - 7853.0402).abs() < 1e-3);
        assert!((x2[A] - 5.5357143).abs() < 1e-6);
        assert!((x2[SIGMA] - 0.32468228).abs() < 1e-7);
        assert_eq!(x2[TIME], 2.0);
        assert!((x1[E] / p.delta - 38.340385).abs() < 1e-5);
    }

    #[test]
    fn layout_counts() {
        let spec = OcpSpec::new(p16(), 10);
        let prob = build_ocp1(&spec).unwrap();
        assert_eq!(prob.num_vars(), 17 * 11 + 2 * 10);
        assert_eq!(prob.num_eq(), 17 * 10 + 15);
        assert_eq!(prob.num_ineq(), 0);
        let x1 = initial_augmented_state(&spec.params, 0.03, 0.25).unwrap();
        let prob2 = build_ocp2(&spec, &x1).unwrap();
        assert_eq!(prob2.num_eq(), 17 * 10 + 17);
        let prob = prob.fix_first_mitigation().unwrap().add_temperature_cap(3.0).unwrap();
        assert_eq!(prob.num_eq(), 17 * 10 + 16);
        assert_eq!(prob.num_ineq(), 11);
        let prob = prob.add_rate_bound(0.1).unwrap().add_growth_bound(0.5).unwrap();
        assert_eq!(prob.num_ineq(), 11 + 20 + 10);
    }

    #[test]
    fn rollout_point_is_feasible_and_objective_matches_welfare() {
        let p = p16();
        let n = 30;
        let spec = OcpSpec::new(p.clone(), n);
        let prob = build_ocp1(&spec).unwrap();
        let inputs: Vec<Input> = (0..n).map(|j| [0.05 + 0.02 * j as f64, 0.22]).collect();
        let x = prob.rollout_point(0.03, 0.24, &inputs).unwrap();
        let c = prob.constraints(&x).unwrap();
        let scale = prob.scaling();
        for (r, (v, s)) in c.iter().zip(&scale.row).enumerate() {
            assert!((v * s).abs() <= 1e-10, "row {r}: {v}");
        }
        let states = prob.states(&x);
        let cons: Vec<f64> = states[..n].iter().map(|s| s[C] / p.delta).collect();
        let pop: Vec<f64> = states[..n].iter().map(|s| s[L]).collect();
        let w = welfare_objective(&cons, &pop, p.alpha, p.rho, p.delta, 1.0, 0.0).unwrap();
        let obj = prob.objective(&x).unwrap();
        assert!((obj - w).abs() <= 1e-10 * w.abs(), "{obj} vs {w}");
    }

    #[test]
    fn derivatives_agree_with_finite_differences() {
        let spec = OcpSpec::new(p16(), 6);
        let prob = build_ocp1(&spec).unwrap().add_temperature_cap(2.5).unwrap();
        let x = prob.initial_point();
        assert!(check_gradient(&prob, &x, 1e-6).unwrap() <= 1e-6);
    }

    #[test]
    fn vjp_gradient_matches_jacobian_route() {
        let spec = OcpSpec::new(p16(), 4);
        let prob = build_ocp1(&spec)
            .unwrap()
            .fix_first_mitigation()
            .unwrap()
            .add_rate_bound(0.2)
            .unwrap();
        let x = prob.initial_point();
        let m = prob.num_eq() + prob.num_ineq();
        let y: Vec<f64> = (0..m).map(|i| (i as f64 * 0.37).sin()).collect();
        let fast = prob.lagrangian_gradient(&x, 0.7, &y).unwrap();
        let mut slow: Vec<f64> = prob.objective_gradient(&x).unwrap().iter().map(|g| 0.7 * g).collect();
        for (r, c, v) in prob.jacobian(&x).unwrap() {
            slow[c] += v * y[r];
        }
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn costate_rows() {
        let spec = OcpSpec::new(p16(), 5);
        let prob = build_ocp1(&spec).unwrap();
        assert_eq!(prob.eq_rows()[prob.costate_row(1, E)], EqRow::EmissionsFormula);
        assert_eq!(prob.eq_rows()[prob.costate_row(1, C)], EqRow::ConsumptionFormula);
        assert_eq!(
            prob.eq_rows()[prob.costate_row(3, C)],
            EqRow::Dynamics { step: 2, comp: C }
        );
        assert_eq!(prob.eq_row_tag(prob.costate_row(3, C)), RowTag { step: 3, comp: C });
    }

    #[test]
    fn residual_dump_format() {
        let spec = OcpSpec::new(p16(), 2);
        let prob = build_ocp1(&spec).unwrap();
        let dump = prob.residual_dump(&prob.initial_point()).unwrap();
        let lines: Vec<&str> = dump.lines().collect();
        assert_eq!(lines.len(), prob.num_eq());
        assert!(lines[0].starts_with("eq step=1 comp=1 residual="));
        assert!(lines.last().unwrap().starts_with("eq step=3 comp=17 residual="));
    }

    #[test]
    fn options_are_validated() {
        let mut spec = OcpSpec::new(p16(), 5);
        spec.rate_bound = Some(0.1);
        assert!(matches!(build_ocp1(&spec), Err(Error::Options(_))));
        spec.fix_mu1 = true;
        assert!(build_ocp1(&spec).is_ok());
        spec.savings_tail = Some((6, 0.25));
        assert!(build_ocp1(&spec).is_err());
        spec.savings_tail = Some((2, 0.25));
        let prob = build_ocp1(&spec).unwrap();
        assert_eq!(prob.num_eq(), 17 * 5 + 15 + 1 + 2);
    }
}
