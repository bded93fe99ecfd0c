use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::market::Projector;
use crate::model::paths::gaussian_increments;
use crate::model::rng::{domain, pair_index, stream};
use crate::model::{Market, TimeGrid};

/// Invertible recombinations `Q_k` of the traded assets, one per grid interval.
#[derive(Debug, Clone)]
pub struct ReplacementSpec {
    pub q: Vec<DMatrix<f64>>,
    pub cond_cap: f64,
}

fn condition_number(q: &DMatrix<f64>) -> f64 {
    let sv = q.clone().svd(false, false).singular_values;
    let hi = sv.iter().copied().fold(0.0, f64::max);
    let lo = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

impl ReplacementSpec {
    pub fn new(q: Vec<DMatrix<f64>>, cond_cap: f64) -> Result<Self> {
        for (k, m) in q.iter().enumerate() {
            if !m.is_square() {
                return Err(Error::DimensionMismatch(format!("Q at step {k} is not square")));
            }
            let c = condition_number(m);
            if !(c <= cond_cap) {
                return Err(Error::PreconditionViolated(format!("Q at step {k} has condition number {c:.3e} above {cond_cap}")));
            }
        }
        Ok(Self { q, cond_cap })
    }

    pub fn constant(q: DMatrix<f64>, steps: usize, cond_cap: f64) -> Result<Self> {
        Self::new(vec![q; steps], cond_cap)
    }
}

/// `I + scale U` with `U` uniform on `[-1, 1]`, redrawn until its condition number is at most `cap`.
pub fn random_well_conditioned<R: Rng>(n: usize, scale: f64, cap: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    const ATTEMPTS: usize = 1000;
    for _ in 0..ATTEMPTS {
        let q = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } + scale * rng.gen_range(-1.0..=1.0));
        if condition_number(&q) <= cap {
            return Ok(q);
        }
    }
    Err(Error::IllConditionedQ { attempts: ATTEMPTS })
}

/// Largest discrepancies between the original and the recombined market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub trials: usize,
    pub theta_max: f64,
    pub wealth_max: f64,
    pub max_condition: f64,
}

/// Market price of risk from `(Q sigma, Q mu)` against the one from
/// `(sigma, mu)`, and wealth from `pi_tilde` in the recombined market against
/// `pi = Q^T pi_tilde` in the original one. `mu` is `[k * n + c]`, `dw0` is
/// `[k * d0 + c]` and `pi_tilde` is `[k * n + c]`. Returns the sup discrepancies.
pub fn replacement_invariance(
    market: &Market,
    grid: &TimeGrid,
    mu: &[f64],
    spec: &ReplacementSpec,
    dw0: &[f64],
    pi_tilde: &[f64],
) -> Result<(f64, f64)> {
    let (n, d0, steps) = (market.spec.n, market.spec.d0, grid.steps);
    if spec.q.len() != steps || mu.len() != steps * n || pi_tilde.len() != steps * n || dw0.len() != steps * d0 {
        return Err(Error::DimensionMismatch("replacement inputs must cover every grid step".into()));
    }
    let dt = grid.dt();
    let (mut theta_max, mut wealth_max): (f64, f64) = (0.0, 0.0);
    let (mut x, mut x_tilde) = (0.0, 0.0);
    for k in 0..steps {
        let proj = market.at_time(grid.t(k));
        let q = &spec.q[k];
        let sigma = proj.sigma();
        let mu_k = DVector::from_column_slice(&mu[k * n..(k + 1) * n]);
        let q_sigma = q * sigma;
        let q_mu = q * &mu_k;
        let tilde = Projector::new(q_sigma.clone())?;
        let th = proj.theta_from_mu(mu_k.as_slice());
        let th_tilde = tilde.theta_from_mu(q_mu.as_slice());
        for (a, b) in th.iter().zip(&th_tilde) {
            theta_max = theta_max.max((a - b).abs());
        }
        let dw = DVector::from_column_slice(&dw0[k * d0..(k + 1) * d0]);
        let pt = DVector::from_column_slice(&pi_tilde[k * n..(k + 1) * n]);
        let pi = q.transpose() * &pt;
        x += pi.dot(&(&mu_k * dt + sigma * &dw));
        x_tilde += pt.dot(&(&q_mu * dt + &q_sigma * &dw));
        wealth_max = wealth_max.max((x - x_tilde).abs());
    }
    Ok((theta_max, wealth_max))
}

/// `trials` independent draws of `(Q, pi_tilde, W0)`; `mu` is shared.
pub fn invariance_sweep(
    market: &Market,
    grid: &TimeGrid,
    mu: &[f64],
    trials: usize,
    scale: f64,
    cond_cap: f64,
    seed: u64,
) -> Result<InvarianceReport> {
    let (n, d0, steps) = (market.spec.n, market.spec.d0, grid.steps);
    let rows = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream(seed, domain::REPLACEMENT, t as u64);
            let q = (0..steps)
                .map(|_| random_well_conditioned(n, scale, cond_cap, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let cond = q.iter().map(condition_number).fold(0.0, f64::max);
            let spec = ReplacementSpec::new(q, cond_cap)?;
            let mut srng = stream(seed, domain::STRATEGY, t as u64);
            let pi_tilde: Vec<f64> = (0..steps * n).map(|_| srng.gen_range(-2.0..=2.0)).collect();
            let dw0 = gaussian_increments(seed, domain::REPLACEMENT, pair_index(t, 1), steps, d0, grid.dt());
            let (th, w) = replacement_invariance(market, grid, mu, &spec, &dw0, &pi_tilde)?;
            Ok((th, w, cond))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(InvarianceReport {
        trials,
        theta_max: rows.iter().fold(0.0, |a, r| a.max(r.0)),
        wealth_max: rows.iter().fold(0.0, |a, r| a.max(r.1)),
        max_condition: rows.iter().fold(0.0, |a, r| a.max(r.2)),
    })
}
