use serde::{Deserialize, Serialize};

use super::solver::{BsdeSolution, ThetaPath};
use crate::error::{Error, Result};
use crate::model::{Market, PathBundle};

/// Strategy along every sample: `p` is `(samples, steps, d0)`, `pi` is `(samples, steps, n)`.
#[derive(Debug, Clone)]
pub struct Strategy {
    pub samples: usize,
    pub steps: usize,
    pub d0: usize,
    pub n: usize,
    pub p: Vec<f64>,
    pub pi: Vec<f64>,
}

impl Strategy {
    pub fn p_at(&self, s: usize, k: usize) -> &[f64] {
        let i = (s * self.steps + k) * self.d0;
        &self.p[i..i + self.d0]
    }

    pub fn pi_at(&self, s: usize, k: usize) -> &[f64] {
        let i = (s * self.steps + k) * self.n;
        &self.pi[i..i + self.n]
    }
}

/// Alternative strategies compared against the optimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    /// Adds a constant amount (in units of wealth per stock) to `pi`.
    Shift(Vec<f64>),
    /// Multiplies `p` by a constant.
    Scale(f64),
}

impl Perturbation {
    pub fn label(&self) -> String {
        match self {
            Perturbation::Shift(v) => format!("shift{v:?}"),
            Perturbation::Scale(c) => format!("scale({c})"),
        }
    }
}

/// Drift of `R^p_t = -exp(-gamma (xi + X^p_t) + y_t)` aggregated over the
/// horizon, in units of `|R|`, and the expected terminal utility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftEstimate {
    pub label: String,
    pub drift: f64,
    pub std_error: f64,
    pub z_score: f64,
    pub utility: f64,
    /// `U(p*) - U(p)` with common random numbers, zero for the optimum itself.
    pub utility_gap: f64,
    pub utility_gap_se: f64,
    pub tail: TailDiagnostics,
}

/// Tail of `exp(-gamma X_T)` over the samples. Uniform integrability has no
/// finite-sample test; heavy tails show up as a few samples carrying most of the mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailDiagnostics {
    pub mean: f64,
    pub max: f64,
    /// Largest sample over the sum.
    pub max_share: f64,
    /// Share of the sum carried by the largest 1% of samples.
    pub top_percent_share: f64,
    /// `(sum e)^2 / (n sum e^2)`, one for constant samples.
    pub ess_fraction: f64,
}

impl TailDiagnostics {
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len();
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let sum: f64 = sorted.iter().sum();
        let sq: f64 = sorted.iter().map(|v| v * v).sum();
        let top = n.div_ceil(100);
        Self {
            mean: sum / n as f64,
            max: sorted.first().copied().unwrap_or(0.0),
            max_share: sorted.first().map_or(0.0, |m| m / sum),
            top_percent_share: sorted[..top].iter().sum::<f64>() / sum,
            ess_fraction: sum * sum / (n as f64 * sq),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRReport {
    pub optimal: DriftEstimate,
    pub perturbed: Vec<DriftEstimate>,
}

impl ConditionRReport {
    /// Optimal drift indistinguishable from zero; every perturbation has a
    /// significantly negative drift and lower utility.
    pub fn passes(&self) -> bool {
        self.optimal.z_score.abs() < 3.0
            && self.perturbed.iter().all(|p| p.z_score < -2.0 && p.utility < self.optimal.utility)
    }
}

/// `p* = (z0_par + theta) / gamma` and `pi* = (sigma sigma^T)^{-1} sigma p*^T`.
pub fn optimal_strategy(
    sol: &BsdeSolution,
    bundle: &PathBundle,
    market: &Market,
    theta: &ThetaPath,
    gamma: f64,
) -> Result<Strategy> {
    if !(gamma > 0.0) {
        return Err(Error::NonpositiveGamma(gamma));
    }
    let (steps, d0, n) = (sol.steps, sol.d0, market.spec.n);
    let mut p = Vec::with_capacity(sol.samples * steps * d0);
    let mut pi = Vec::with_capacity(sol.samples * steps * n);
    for s in 0..sol.samples {
        let m = bundle.common_of(s);
        for k in 0..steps {
            let pr = market.at_time(bundle.grid.t(k));
            let par = pr.parallel(sol.z0_at(s, k));
            let ps: Vec<f64> = par.iter().zip(theta.at(m, k)).map(|(z, t)| (z + t) / gamma).collect();
            pi.extend(pr.pi_from_p(&ps));
            p.extend(ps);
        }
    }
    Ok(Strategy { samples: sol.samples, steps, d0, n, p, pi })
}

fn apply(p: &[f64], pert: Option<&Perturbation>, market: &Market, t: f64) -> Vec<f64> {
    match pert {
        None => p.to_vec(),
        Some(Perturbation::Scale(c)) => p.iter().map(|v| c * v).collect(),
        Some(Perturbation::Shift(dpi)) => {
            let dp = market.at_time(t).p_from_pi(dpi);
            p.iter().zip(&dp).map(|(a, b)| a + b).collect()
        }
    }
}

struct PathStats {
    drift: Vec<f64>,
    terminal: Vec<f64>,
    wealth_exp: Vec<f64>,
}

fn simulate(
    sol: &BsdeSolution,
    bundle: &PathBundle,
    market: &Market,
    theta: &ThetaPath,
    strat: &Strategy,
    gamma: f64,
    xi: f64,
    pert: Option<&Perturbation>,
) -> PathStats {
    let dt = bundle.grid.dt();
    let mut drift = Vec::with_capacity(sol.samples);
    let mut terminal = Vec::with_capacity(sol.samples);
    let mut wealth_exp = Vec::with_capacity(sol.samples);
    for s in 0..sol.samples {
        let m = bundle.common_of(s);
        let mut wealth = xi;
        let mut acc = 0.0;
        for k in 0..sol.steps {
            let p = apply(strat.p_at(s, k), pert, market, bundle.grid.t(k));
            let th = theta.at(m, k);
            let gain: f64 = p.iter().zip(bundle.dw0_at(m, k)).zip(th).map(|((a, w), t)| a * (w + t * dt)).sum();
            let dy = sol.y_at(s, k + 1) - sol.y_at(s, k);
            acc += 1.0 - (-gamma * gain + dy).exp();
            wealth += gain;
        }
        drift.push(acc);
        terminal.push(-(-gamma * wealth + sol.y_at(s, sol.steps)).exp());
        wealth_exp.push((-gamma * (wealth - xi)).exp());
    }
    PathStats { drift, terminal, wealth_exp }
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Checks that `R^{p*}` is a martingale and each perturbation a strict supermartingale.
pub fn verify_condition_r(
    sol: &BsdeSolution,
    bundle: &PathBundle,
    market: &Market,
    theta: &ThetaPath,
    gamma: f64,
    xi: f64,
    perturbations: &[Perturbation],
) -> Result<ConditionRReport> {
    if sol.samples < 2 {
        return Err(Error::InvalidParameter("need at least two samples".into()));
    }
    let strat = optimal_strategy(sol, bundle, market, theta, gamma)?;
    let base = simulate(sol, bundle, market, theta, &strat, gamma, xi, None);
    let summarize = |label: String, st: &PathStats| {
        let (drift, se) = mean_se(&st.drift);
        let (utility, _) = mean_se(&st.terminal);
        let gaps: Vec<f64> = base.terminal.iter().zip(&st.terminal).map(|(a, b)| a - b).collect();
        let (gap, gap_se) = mean_se(&gaps);
        DriftEstimate {
            label,
            drift,
            std_error: se,
            z_score: if se > 0.0 { drift / se } else { 0.0 },
            utility,
            utility_gap: gap,
            utility_gap_se: gap_se,
            tail: TailDiagnostics::from_samples(&st.wealth_exp),
        }
    };
    let optimal = summarize("optimal".into(), &base);
    let perturbed = perturbations
        .iter()
        .map(|pert| {
            let st = simulate(sol, bundle, market, theta, &strat, gamma, xi, Some(pert));
            summarize(pert.label(), &st)
        })
        .collect();
    Ok(ConditionRReport { optimal, perturbed })
}
