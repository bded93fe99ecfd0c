use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::riccati::RiccatiSolution;
use crate::error::{Error, Result};
use crate::model::paths::simulate_common_path;
use crate::model::{FactorSpec, Market, PathBundle, TimeGrid};

/// Closed-form equilibrium along simulated common paths.
///
/// `y0` is `(n_common, steps + 1)`; `z0` and `theta` are `(n_common, steps, d0)`;
/// `mu` is `(n_common, steps, n)`.
#[derive(Debug, Clone)]
pub struct EquilibriumPath {
    pub n_common: usize,
    pub steps: usize,
    pub d0: usize,
    pub n: usize,
    pub y0: Vec<f64>,
    pub z0: Vec<f64>,
    pub theta: Vec<f64>,
    pub mu: Vec<f64>,
}

/// Idiosyncratic Cole-Hopf branch for `G1 = kappa (W1_T)_1`, one row per sample.
#[derive(Debug, Clone)]
pub struct IdioBranch {
    pub steps: usize,
    pub d: usize,
    pub kappa: f64,
    pub y1: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MartingaleCheck {
    pub paths: usize,
    pub mean: f64,
    pub std_error: f64,
    pub z_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FubiniReport {
    pub steps: usize,
    pub paths: usize,
    pub sup_discrepancy: f64,
    pub mean_abs_discrepancy: f64,
}

fn check_grid(bundle: &PathBundle, riccati: &RiccatiSolution) -> Result<()> {
    if !bundle.grid.same_as(&riccati.grid) {
        return Err(Error::GridMismatch(format!(
            "paths use {} steps on [0, {}], Riccati coefficients {} steps on [0, {}]",
            bundle.grid.steps, bundle.grid.horizon, riccati.grid.steps, riccati.grid.horizon
        )));
    }
    Ok(())
}

/// Evaluates `y0 = A x^2 + B x + C + I`, `z0 = (2 A x + B) delta`,
/// `theta = -(2 A x + B) Pi(delta)` and `mu = sigma theta` on every path.
pub fn equilibrium_path(
    bundle: &PathBundle,
    riccati: &RiccatiSolution,
    market: &Market,
    spec: &FactorSpec,
) -> Result<EquilibriumPath> {
    check_grid(bundle, riccati)?;
    let d0 = bundle.d0;
    if spec.delta.len() != d0 || market.spec.d0 != d0 {
        return Err(Error::DimensionMismatch("delta, market and paths disagree on d0".into()));
    }
    let steps = bundle.grid.steps;
    let n = market.spec.n;
    let mut out = EquilibriumPath {
        n_common: bundle.n_common,
        steps,
        d0,
        n,
        y0: Vec::with_capacity(bundle.n_common * (steps + 1)),
        z0: Vec::with_capacity(bundle.n_common * steps * d0),
        theta: Vec::with_capacity(bundle.n_common * steps * d0),
        mu: Vec::with_capacity(bundle.n_common * steps * n),
    };
    let pis: Vec<(Vec<f64>, Vec<f64>)> = (0..steps)
        .map(|k| {
            let pr = market.at_time(bundle.grid.t(k));
            let pd = pr.parallel(&spec.delta);
            let sd = pr.mu_from_theta(&pd);
            (pd, sd)
        })
        .collect();
    for m in 0..bundle.n_common {
        for k in 0..=steps {
            let x = bundle.x_at(m, k);
            out.y0.push(riccati.value(k, x) + bundle.integral_at(m, k));
        }
        for (k, (pd, sd)) in pis.iter().enumerate() {
            let c = riccati.slope(k, bundle.x_at(m, k));
            out.z0.extend(spec.delta.iter().map(|v| c * v));
            out.theta.extend(pd.iter().map(|v| -c * v));
            out.mu.extend(sd.iter().map(|v| -c * v));
        }
    }
    Ok(out)
}

impl EquilibriumPath {
    pub fn theta_at(&self, m: usize, k: usize) -> &[f64] {
        let i = (m * self.steps + k) * self.d0;
        &self.theta[i..i + self.d0]
    }

    pub fn z0_at(&self, m: usize, k: usize) -> &[f64] {
        let i = (m * self.steps + k) * self.d0;
        &self.z0[i..i + self.d0]
    }

    pub fn mu_at(&self, m: usize, k: usize) -> &[f64] {
        let i = (m * self.steps + k) * self.n;
        &self.mu[i..i + self.n]
    }

    pub fn y0_at(&self, m: usize, k: usize) -> f64 {
        self.y0[m * (self.steps + 1) + k]
    }

    /// Count of `(path, step, stock)` triples where `sign(mu^k) != -sign(sigma^k z0)`.
    pub fn sign_law_violations(&self, market: &Market, grid: &TimeGrid) -> usize {
        let mut bad = 0;
        for m in 0..self.n_common {
            for k in 0..self.steps {
                let sz = market.at_time(grid.t(k)).mu_from_theta(self.z0_at(m, k));
                for (mu, s) in self.mu_at(m, k).iter().zip(&sz) {
                    if sign(*mu) != -sign(*s) {
                        bad += 1;
                    }
                }
            }
        }
        bad
    }
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// `y1_t = kappa (W1_t)_1 + kappa^2 (T - t) / 2`; the integrand is `kappa e_1`.
pub fn cole_hopf_idio(bundle: &PathBundle, kappa: f64) -> IdioBranch {
    let steps = bundle.grid.steps;
    let horizon = bundle.grid.horizon;
    let mut y1 = Vec::with_capacity(bundle.samples() * (steps + 1));
    for s in 0..bundle.samples() {
        for k in 0..=steps {
            y1.push(kappa * bundle.wi_at(s, k) + 0.5 * kappa * kappa * (horizon - bundle.grid.t(k)));
        }
    }
    IdioBranch { steps, d: bundle.d, kappa, y1 }
}

impl IdioBranch {
    pub fn y1_at(&self, s: usize, k: usize) -> f64 {
        self.y1[s * (self.steps + 1) + k]
    }

    pub fn z1(&self) -> Vec<f64> {
        let mut z = vec![0.0; self.d];
        z[0] = self.kappa;
        z
    }
}

/// Monte Carlo mean of `exp(y0_T - y0_0)` over freshly simulated paths,
/// which is one for the exact solution. Paths are generated on the fly.
pub fn cole_hopf_martingale(
    spec: &FactorSpec,
    riccati: &RiccatiSolution,
    paths: usize,
    seed: u64,
) -> Result<MartingaleCheck> {
    spec.validate()?;
    if paths < 2 {
        return Err(Error::InvalidParameter("need at least two paths".into()));
    }
    let grid = riccati.grid;
    let y00 = riccati.value(0, spec.x0);
    let (s1, s2) = (0..paths)
        .into_par_iter()
        .with_min_len(256)
        .map(|m| {
            let p = simulate_common_path(spec, &grid, seed, m);
            let r = (p.integral[grid.steps] - y00).exp();
            (r, r * r)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0.0, 0.0), |acc, v| (acc.0 + v.0, acc.1 + v.1));
    let nf = paths as f64;
    let mean = s1 / nf;
    let var = (s2 / nf - mean * mean) * nf / (nf - 1.0);
    let std_error = (var.max(0.0) / nf).sqrt();
    // A deterministic factor makes every ratio exactly one.
    let z_score = if std_error > 0.0 {
        (mean - 1.0) / std_error
    } else if mean == 1.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(MartingaleCheck { paths, mean, std_error, z_score })
}

/// Pathwise check of the stochastic Fubini identity for `a = 0`:
///
/// `sum_t B(t) delta dW_t` against `b sum_t (sum_{s<t} e^{alpha (t - s)} delta dW_s) dt`.
pub fn fubini_malliavin_check(bundle: &PathBundle, riccati: &RiccatiSolution, spec: &FactorSpec) -> Result<FubiniReport> {
    if spec.a != 0.0 {
        return Err(Error::PreconditionViolated(format!(
            "stochastic Fubini check needs a = 0, got {}",
            spec.a
        )));
    }
    check_grid(bundle, riccati)?;
    let steps = bundle.grid.steps;
    let dt = bundle.grid.dt();
    let decay = (spec.alpha * dt).exp();
    let per_path: Vec<f64> = (0..bundle.n_common)
        .map(|m| {
            let mut lhs = 0.0;
            let mut rhs = 0.0;
            // inner = sum_{s < t} e^{alpha (t - s)} delta dW_s, updated recursively.
            let mut inner = 0.0;
            for k in 0..steps {
                rhs += inner * dt;
                let dw: f64 = spec.delta.iter().zip(bundle.dw0_at(m, k)).map(|(d, w)| d * w).sum();
                lhs += riccati.b[k] * dw;
                inner = (inner + dw) * decay;
            }
            (lhs - spec.b * rhs).abs()
        })
        .collect();
    Ok(FubiniReport {
        steps,
        paths: bundle.n_common,
        sup_discrepancy: per_path.iter().copied().fold(0.0, f64::max),
        mean_abs_discrepancy: per_path.iter().sum::<f64>() / per_path.len() as f64,
    })
}
