//! Finite populations trading against the mean-field price of risk: per-agent
//! strategies, the per-capita clearing residual and its decay in `N`, and
//! invariance of the equilibrium under a change of traded portfolios.

pub mod maps;
pub mod replacement;
pub mod residual;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use maps::{AgentState, SolutionMaps};
pub use replacement::{invariance_sweep, random_well_conditioned, replacement_invariance, InvarianceReport, ReplacementSpec};
pub use residual::{batched_mean, order_free_sum, per_capita_square, rate_fit};

use crate::error::{Error, Result};
use crate::model::market::norm_sq;
use crate::model::paths::{gaussian_increments, simulate_common_path};
use crate::model::rng::{domain, pair_index, stream};
use crate::model::{AgentParams, FactorSpec, GammaDistribution, Market, TimeGrid};

/// Distribution of agent characteristics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub gamma: GammaDistribution,
    #[serde(default)]
    pub xi_mean: f64,
    #[serde(default)]
    pub xi_std: f64,
}

/// First `n` agents attached to common path `m`. Each agent's draws are keyed
/// by `(seed, m, i)`, so smaller populations are prefixes of larger ones.
pub fn build_population(n: usize, spec: &PopulationSpec, seed: u64, m: usize) -> Result<Vec<AgentParams>> {
    if n == 0 {
        return Err(Error::InvalidParameter("population needs at least one agent".into()));
    }
    spec.gamma.validate()?;
    Ok((0..n)
        .map(|i| {
            let mut rng = stream(seed, domain::AGENT_TYPES, pair_index(m, i));
            let ty = spec.gamma.sample_type(&mut rng);
            let z: f64 = rng.sample(StandardNormal);
            AgentParams { gamma: spec.gamma.atoms[ty], xi: spec.xi_mean + spec.xi_std * z, type_index: ty }
        })
        .collect())
}

/// Everything needed to evaluate agents' strategies on fresh paths.
pub struct ClearingSetup<'a> {
    pub maps: &'a SolutionMaps,
    pub market: &'a Market,
    pub factor: &'a FactorSpec,
    pub grid: TimeGrid,
    pub population: &'a PopulationSpec,
    pub seed: u64,
}

/// Strategies of a population on one common path.
#[derive(Debug, Clone)]
pub struct PathStrategies {
    pub agents: Vec<AgentParams>,
    pub steps: usize,
    pub d0: usize,
    pub n: usize,
    /// `theta_mfg`, `[k * d0 + c]`.
    pub theta: Vec<f64>,
    /// `p`, `[(i * steps + k) * d0 + c]`.
    pub p: Vec<f64>,
    /// `pi`, `[(i * steps + k) * n + c]`.
    pub pi: Vec<f64>,
    /// `sup |Z0_par|` over agents and steps.
    pub hedge_scale: f64,
}

impl PathStrategies {
    pub fn pi_of(&self, i: usize) -> &[f64] {
        &self.pi[i * self.steps * self.n..(i + 1) * self.steps * self.n]
    }

    pub fn p_sup(&self) -> f64 {
        self.p.iter().fold(0.0, |a, v| a.max(v.abs()))
    }
}

impl ClearingSetup<'_> {
    fn check(&self) -> Result<()> {
        if self.maps.types() != self.population.gamma.atoms.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} solution maps for {} risk-aversion types",
                self.maps.types(),
                self.population.gamma.atoms.len()
            )));
        }
        if self.maps.steps != self.grid.steps {
            return Err(Error::GridMismatch("solution maps and grid disagree on steps".into()));
        }
        Ok(())
    }

    /// `p^i = Z^{i,0}_par - (gamma_hat / gamma^i) E-bar[Z0_par]` and the
    /// corresponding `pi^i` for `n_agents` agents on common path `m`. `E-bar`
    /// integrates the type maps over the idiosyncratic Gaussian and the type weights.
    pub fn agent_strategies(&self, m: usize, n_agents: usize) -> Result<PathStrategies> {
        self.check()?;
        let agents = build_population(n_agents, self.population, self.seed, m)?;
        let grid = &self.grid;
        let steps = grid.steps;
        let (d0, d, n) = (self.maps.d0, self.maps.d, self.market.spec.n);
        let dist = &self.population.gamma;
        let gh = dist.gamma_hat();
        let cp = simulate_common_path(self.factor, grid, self.seed, m);
        let mut w0 = vec![0.0; steps + 1];
        for k in 0..steps {
            w0[k + 1] = w0[k] + cp.dw0[k * d0];
        }
        let mut theta = Vec::with_capacity(steps * d0);
        for k in 0..steps {
            let st = AgentState { x: cp.x[k], integral: cp.integral[k], w_idio: 0.0, w_common: w0[k] };
            let proj = self.market.at_time(grid.t(k));
            let mut ebar = vec![0.0; d0];
            for (ty, w) in dist.weights.iter().enumerate() {
                let z = self.maps.idio_mean(k, ty, &st, grid.t(k));
                for (e, v) in ebar.iter_mut().zip(proj.parallel(&z[..d0])) {
                    *e += w * v;
                }
            }
            theta.extend(ebar.iter().map(|e| -gh * e));
        }
        let mut p = Vec::with_capacity(n_agents * steps * d0);
        let mut pi = Vec::with_capacity(n_agents * steps * n);
        let mut hedge_scale: f64 = 0.0;
        for (i, a) in agents.iter().enumerate() {
            let dwi = gaussian_increments(self.seed, domain::AGENT_NOISE, pair_index(m, i), steps, d, grid.dt());
            let mut wi = 0.0;
            for k in 0..steps {
                let st = AgentState { x: cp.x[k], integral: cp.integral[k], w_idio: wi, w_common: w0[k] };
                let proj = self.market.at_time(grid.t(k));
                let z = self.maps.integrand(k, a.type_index, &st);
                let par = proj.parallel(&z[..d0]);
                hedge_scale = hedge_scale.max(norm_sq(&par).sqrt());
                let pk: Vec<f64> = par.iter().zip(&theta[k * d0..(k + 1) * d0]).map(|(z, t)| z + t / a.gamma).collect();
                pi.extend(proj.pi_from_p(&pk));
                p.extend(pk);
                wi += dwi[k * d];
            }
        }
        Ok(PathStrategies { agents, steps, d0, n, theta, p, pi, hedge_scale })
    }
}

/// `(eps_N, std error)` of the first `n_agents` agents over the given paths.
pub fn clearing_residual(paths: &[PathStrategies], n_agents: usize, dt: f64, batches: usize) -> Result<(f64, f64)> {
    let values = paths
        .iter()
        .map(|ps| {
            if n_agents == 0 || n_agents > ps.agents.len() {
                return Err(Error::InvalidParameter(format!("{n_agents} agents requested, {} available", ps.agents.len())));
            }
            let pis: Vec<&[f64]> = (0..n_agents).map(|i| ps.pi_of(i)).collect();
            Ok(per_capita_square(&pis, ps.steps, ps.n, dt))
        })
        .collect::<Result<Vec<_>>>()?;
    batched_mean(&values, batches)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClearingSettings {
    pub ns: Vec<usize>,
    pub m0: usize,
    pub batches: usize,
    /// Relative tolerance for exact clearing, in units of the hedging demand.
    pub tolerance: f64,
}

impl Default for ClearingSettings {
    fn default() -> Self {
        Self { ns: vec![10, 30, 100, 300, 1000], m0: 200, batches: 20, tolerance: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClearingReport {
    pub ns: Vec<usize>,
    pub eps: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// `N eps_N`.
    pub scaled: Vec<f64>,
    /// Fitted `d log eps / d log N`, absent when some residual vanishes.
    pub slope: Option<f64>,
    /// `4 (1 + gamma_hat^2 / gamma_min^2) BMO |(sigma sigma^T)^{-1}|`.
    pub bound_const: f64,
    /// `N eps_N <= 1.25 bound_const` for every `N`.
    pub bound_ok: bool,
    /// `eps_N` non-increasing up to two combined standard errors.
    pub monotone_ok: bool,
    /// `sup |p^i|` over agents, steps and paths.
    pub p_sup: f64,
    /// `sup |Z0_par|`, the scale of hedging demand.
    pub hedge_scale: f64,
    /// `tolerance * hedge_scale`.
    pub p_tolerance: f64,
    /// Largest residual compatible with `|p| <= p_tolerance`.
    pub eps_tolerance: f64,
}

impl ClearingReport {
    /// Every agent's position is below tolerance and every residual is zero at that tolerance.
    pub fn exact_clearing(&self) -> bool {
        self.p_sup < self.p_tolerance && self.eps.iter().all(|e| *e <= self.eps_tolerance)
    }

    pub fn slope_in(&self, lo: f64, hi: f64) -> bool {
        self.slope.is_some_and(|s| s >= lo && s <= hi)
    }
}

/// Residuals for every population size on `m0` common paths, streaming one path at a time.
pub fn clearing_experiment(setup: &ClearingSetup, settings: &ClearingSettings, bmo: f64) -> Result<ClearingReport> {
    setup.check()?;
    let ns = &settings.ns;
    if ns.is_empty() || ns.windows(2).any(|w| w[1] <= w[0]) || ns[0] == 0 {
        return Err(Error::InvalidParameter("population sizes must be positive and strictly increasing".into()));
    }
    let n_max = *ns.last().unwrap_or(&1);
    let dt = setup.grid.dt();
    let rows = (0..settings.m0)
        .into_par_iter()
        .map(|m| {
            let ps = setup.agent_strategies(m, n_max)?;
            let values: Vec<f64> = ns
                .iter()
                .map(|&n| {
                    let pis: Vec<&[f64]> = (0..n).map(|i| ps.pi_of(i)).collect();
                    per_capita_square(&pis, ps.steps, ps.n, dt)
                })
                .collect();
            Ok((values, ps.p_sup(), ps.hedge_scale))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut eps = Vec::with_capacity(ns.len());
    let mut std_errors = Vec::with_capacity(ns.len());
    for j in 0..ns.len() {
        let col: Vec<f64> = rows.iter().map(|r| r.0[j]).collect();
        let (e, se) = batched_mean(&col, settings.batches)?;
        eps.push(e);
        std_errors.push(se);
    }
    let p_sup = rows.iter().fold(0.0, |a: f64, r| a.max(r.1));
    let hedge_scale = rows.iter().fold(0.0, |a: f64, r| a.max(r.2));
    let dist = &setup.population.gamma;
    let (gh, gmin) = (dist.gamma_hat(), dist.gamma_min());
    let inv_gram = setup.market.inverse_gram_bound();
    let bound_const = 4.0 * (1.0 + gh * gh / (gmin * gmin)) * bmo * inv_gram;
    let scaled: Vec<f64> = ns.iter().zip(&eps).map(|(n, e)| *n as f64 * e).collect();
    let bound_ok = scaled.iter().all(|v| *v <= 1.25 * bound_const);
    let monotone_ok = (1..ns.len()).all(|j| {
        eps[j] <= eps[j - 1] + 2.0 * (std_errors[j] * std_errors[j] + std_errors[j - 1] * std_errors[j - 1]).sqrt()
    });
    let slope = if eps.iter().all(|e| *e > 0.0) && ns.len() >= 4 { rate_fit(ns, &eps).ok() } else { None };
    let p_tolerance = settings.tolerance * hedge_scale;
    let eps_tolerance = setup.grid.horizon * p_tolerance * p_tolerance * inv_gram;
    Ok(ClearingReport {
        ns: ns.clone(),
        eps,
        std_errors,
        scaled,
        slope,
        bound_const,
        bound_ok,
        monotone_ok,
        p_sup,
        hedge_scale,
        p_tolerance,
        eps_tolerance,
    })
}
