//! Point evaluation and finite-difference derivative audits.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scaled::ScaledProblem;
use super::{Problem, Triplets};
use crate::error::{Error, Result};

const MIN_SAMPLE: usize = 50;

/// Everything the solver sees at one point, in the caller's units.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub objective: f64,
    pub eq_residuals: Vec<f64>,
    pub ineq_values: Vec<f64>,
    pub gradient: Vec<f64>,
    jacobian: Triplets,
    n: usize,
}

impl Evaluation {
    /// `J·v`.
    pub fn jacobian_product(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.eq_residuals.len() + self.ineq_values.len()];
        for &(r, c, a) in &self.jacobian {
            out[r] += a * v[c];
        }
        out
    }

    /// `Jᵀ·w`.
    pub fn jacobian_transpose_product(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for &(r, c, a) in &self.jacobian {
            out[c] += a * w[r];
        }
        out
    }
}

pub fn evaluate(problem: &dyn Problem, x: &[f64]) -> Result<Evaluation> {
    if x.len() != problem.num_vars() {
        return Err(Error::Precondition(format!(
            "point has {} entries, problem has {} variables",
            x.len(),
            problem.num_vars()
        )));
    }
    let c = problem.constraints(x)?;
    let me = problem.num_eq();
    Ok(Evaluation {
        objective: problem.objective(x)?,
        eq_residuals: c[..me].to_vec(),
        ineq_values: c[me..].to_vec(),
        gradient: problem.objective_gradient(x)?,
        jacobian: problem.jacobian(x)?,
        n: x.len(),
    })
}

/// Largest relative error between the Lagrangian gradient assembled from
/// [`Problem::objective_gradient`] and [`Problem::jacobian`] and central
/// differences, with random multipliers, over a random coordinate sample.
/// Everything is measured in the problem's scaled space.
pub fn check_gradient(problem: &dyn Problem, x: &[f64], h: f64) -> Result<f64> {
    check_gradient_with(problem, x, h, 0x5eed, &|_| {})
}

/// [`check_gradient`] with an explicit seed and a hook that may alter the
/// analytic gradient before comparison.
pub fn check_gradient_with(
    problem: &dyn Problem,
    x: &[f64],
    h: f64,
    seed: u64,
    tamper: &dyn Fn(&mut [f64]),
) -> Result<f64> {
    let sp = ScaledProblem::new(problem);
    let xs = sp.from_inner(x);
    let n = xs.len();
    let m = sp.num_eq() + sp.num_ineq();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let mut analytic = sp.objective_gradient(&xs)?;
    for (r, c, v) in sp.jacobian(&xs)? {
        analytic[c] += v * y[r];
    }
    tamper(&mut analytic);

    let lag = |p: &[f64]| -> Result<f64> {
        let c = sp.constraints(p)?;
        Ok(sp.objective(p)? + c.iter().zip(&y).map(|(c, y)| c * y).sum::<f64>())
    };
    let coords: Vec<usize> = if n <= MIN_SAMPLE {
        (0..n).collect()
    } else {
        let k = MIN_SAMPLE.max(n / 10).min(n);
        let mut v = sample(&mut rng, n, k).into_vec();
        v.sort_unstable();
        v
    };
    let mut worst = 0.0f64;
    let mut p = xs.clone();
    for i in coords {
        p[i] = xs[i] + h;
        let up = lag(&p)?;
        p[i] = xs[i] - h;
        let down = lag(&p)?;
        p[i] = xs[i];
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((analytic[i] - fd).abs() / (1.0 + analytic[i].abs()));
    }
    Ok(worst)
}
