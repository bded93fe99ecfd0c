use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::estimator::ConditionalExpectation;
use crate::eqg::EquilibriumPath;
use crate::error::{Error, Result};
use crate::model::market::norm_sq;
use crate::model::{Market, PathBundle};

/// Numerical settings shared by the backward solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub picard_max: usize,
    pub picard_tol: f64,
    /// Integrand entries are clipped to `[-clip, clip]` inside the driver.
    pub clip: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { picard_max: 20, picard_tol: 1e-4, clip: 50.0 }
    }
}

/// Market price of risk per common path and step, or one deterministic row per step.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaPath {
    pub rows: usize,
    pub steps: usize,
    pub d0: usize,
    pub values: Vec<f64>,
}

impl ThetaPath {
    pub fn deterministic(steps: usize, theta: &[f64]) -> Self {
        let values = (0..steps).flat_map(|_| theta.iter().copied()).collect();
        Self { rows: 1, steps, d0: theta.len(), values }
    }

    pub fn zeros(steps: usize, d0: usize) -> Self {
        Self { rows: 1, steps, d0, values: vec![0.0; steps * d0] }
    }

    pub fn from_equilibrium(eq: &EquilibriumPath) -> Self {
        Self { rows: eq.n_common, steps: eq.steps, d0: eq.d0, values: eq.theta.clone() }
    }

    pub fn per_path(rows: usize, steps: usize, d0: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * steps * d0 {
            return Err(Error::DimensionMismatch("theta values do not match the layout".into()));
        }
        Ok(Self { rows, steps, d0, values })
    }

    pub fn at(&self, m: usize, k: usize) -> &[f64] {
        let r = if self.rows == 1 { 0 } else { m };
        let i = (r * self.steps + k) * self.d0;
        &self.values[i..i + self.d0]
    }

    pub fn is_deterministic(&self) -> bool {
        self.rows == 1
    }

    fn check(&self, bundle: &PathBundle) -> Result<()> {
        if self.steps != bundle.grid.steps || self.d0 != bundle.d0 || (self.rows != 1 && self.rows != bundle.n_common) {
            return Err(Error::DimensionMismatch(format!(
                "theta is {} x {} x {}, paths are {} x {} x {}",
                self.rows, self.steps, self.d0, bundle.n_common, bundle.grid.steps, bundle.d0
            )));
        }
        Ok(())
    }
}

/// Solution of a backward equation on a sample set.
///
/// `y` is `(samples, steps + 1)`, `z0` is `(samples, steps, d0)`, `z1` is `(samples, steps, d)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BsdeSolution {
    pub samples: usize,
    pub steps: usize,
    pub d0: usize,
    pub d: usize,
    pub y: Vec<f64>,
    pub z0: Vec<f64>,
    pub z1: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub changes: Vec<f64>,
    pub clip_count: usize,
}

impl BsdeSolution {
    fn empty(samples: usize, steps: usize, d0: usize, d: usize) -> Self {
        Self {
            samples,
            steps,
            d0,
            d,
            y: vec![0.0; samples * (steps + 1)],
            z0: vec![0.0; samples * steps * d0],
            z1: vec![0.0; samples * steps * d],
            iterations: 0,
            converged: false,
            changes: Vec::new(),
            clip_count: 0,
        }
    }

    pub fn y_at(&self, s: usize, k: usize) -> f64 {
        self.y[s * (self.steps + 1) + k]
    }

    pub fn z0_at(&self, s: usize, k: usize) -> &[f64] {
        let i = (s * self.steps + k) * self.d0;
        &self.z0[i..i + self.d0]
    }

    pub fn z1_at(&self, s: usize, k: usize) -> &[f64] {
        let i = (s * self.steps + k) * self.d;
        &self.z1[i..i + self.d]
    }

    /// Mean of the initial value over samples.
    pub fn y0_mean(&self) -> f64 {
        (0..self.samples).map(|s| self.y_at(s, 0)).sum::<f64>() / self.samples as f64
    }

    pub fn y_sup(&self) -> f64 {
        self.y.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Parallel part of `z0` at `(s, k)`.
    pub fn z0_par(&self, market: &Market, t: f64, s: usize, k: usize) -> Vec<f64> {
        market.at_time(t).parallel(self.z0_at(s, k))
    }
}

/// Change between two iterates: max of the sup change of `y` at time zero
/// and the relative L2 change of the integrands (with a floor of 1e-8).
pub(crate) fn iterate_change(new: &BsdeSolution, old: &BsdeSolution) -> f64 {
    let dy = (0..new.samples).map(|s| (new.y_at(s, 0) - old.y_at(s, 0)).abs()).fold(0.0, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for (a, b) in new.z0.iter().chain(&new.z1).zip(old.z0.iter().chain(&old.z1)) {
        num += (a - b) * (a - b);
        den += a * a;
    }
    dy.max(num.sqrt() / den.sqrt().max(1e-8))
}

pub(crate) fn clip(v: &[f64], bound: f64, clipped: &mut usize) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            if x.abs() > bound {
                *clipped += 1;
                x.signum() * bound
            } else {
                x
            }
        })
        .collect()
}

/// One linear backward pass `y_k = E[y_{k+1} | F_k] + driver_k dt` with
/// integrands from the one-step residual. `driver` is `(samples, steps)`.
///
/// At the initial step the conditional mean is taken of
/// `G + sum_j driver_j dt - sum_j z_j dW_j` instead of `y_1`: the stochastic
/// integral has zero mean and removes most of the sampling noise of `G`.
pub fn backward_pass<E: ConditionalExpectation + ?Sized>(
    est: &E,
    bundle: &PathBundle,
    terminal: &[f64],
    driver: &[f64],
) -> Result<BsdeSolution> {
    let n = bundle.samples();
    let steps = bundle.grid.steps;
    if terminal.len() != n || driver.len() != n * steps || est.samples() != n {
        return Err(Error::DimensionMismatch("terminal, driver and estimator must match the sample count".into()));
    }
    let (d0, d) = (bundle.d0, bundle.d);
    let coords = d0 + d;
    let dt = bundle.grid.dt();
    let mut sol = BsdeSolution::empty(n, steps, d0, d);
    let mut next: Vec<f64> = terminal.to_vec();
    // G + sum_{j > k} (driver_j dt - z_j dW_j)
    let mut controlled: Vec<f64> = terminal.to_vec();
    for s in 0..n {
        sol.y[s * (steps + 1) + steps] = next[s];
    }
    for k in (0..steps).rev() {
        let mean = est.expect(k, &next)?;
        let resid: Vec<f64> = next.iter().zip(&mean).map(|(a, b)| a - b).collect();
        let z = est.integrands(k, &resid)?;
        for s in 0..n {
            let zs = &z[s * coords..(s + 1) * coords];
            let m = bundle.common_of(s);
            let hedge: f64 = zs[..d0].iter().zip(bundle.dw0_at(m, k)).map(|(a, b)| a * b).sum::<f64>()
                + zs[d0..].iter().zip(bundle.dwi_at(s, k)).map(|(a, b)| a * b).sum::<f64>();
            controlled[s] += driver[s * steps + k] * dt - hedge;
            sol.z0[(s * steps + k) * d0..(s * steps + k + 1) * d0].copy_from_slice(&zs[..d0]);
            sol.z1[(s * steps + k) * d..(s * steps + k + 1) * d].copy_from_slice(&zs[d0..]);
            next[s] = mean[s] + driver[s * steps + k] * dt;
        }
        if k == 0 {
            next = est.expect(0, &controlled)?;
        }
        for s in 0..n {
            sol.y[s * (steps + 1) + k] = next[s];
        }
    }
    Ok(sol)
}

/// Normalized single-agent driver
/// `-z0_par theta - |theta|^2 / 2 + (|z0_perp|^2 + |z1|^2) / 2`.
fn agent_driver(
    prev: &BsdeSolution,
    bundle: &PathBundle,
    market: &Market,
    theta: &ThetaPath,
    clip_bound: f64,
) -> (Vec<f64>, usize) {
    let steps = bundle.grid.steps;
    let rows: Vec<(Vec<f64>, usize)> = (0..bundle.samples())
        .into_par_iter()
        .map(|s| {
            let m = bundle.common_of(s);
            let mut clipped = 0;
            let out = (0..steps)
                .map(|k| {
                    let th = theta.at(m, k);
                    let z0 = clip(prev.z0_at(s, k), clip_bound, &mut clipped);
                    let z1 = clip(prev.z1_at(s, k), clip_bound, &mut clipped);
                    let (par, perp) = market.at_time(bundle.grid.t(k)).split(&z0);
                    let cross: f64 = par.iter().zip(th).map(|(a, b)| a * b).sum();
                    -cross - 0.5 * norm_sq(th) + 0.5 * (norm_sq(&perp) + norm_sq(&z1))
                })
                .collect();
            (out, clipped)
        })
        .collect();
    let clipped = rows.iter().map(|r| r.1).sum();
    (rows.into_iter().flat_map(|r| r.0).collect(), clipped)
}

/// Picard loop shared by the solvers: `pass` maps the previous iterate to the next.
pub(crate) fn picard<F>(first: BsdeSolution, settings: &SolverSettings, mut pass: F) -> Result<BsdeSolution>
where
    F: FnMut(&BsdeSolution) -> Result<(BsdeSolution, usize)>,
{
    let mut prev = first;
    let mut changes = Vec::new();
    let mut increases = 0;
    for it in 1..=settings.picard_max.max(1) {
        let (mut next, clipped) = pass(&prev)?;
        let change = iterate_change(&next, &prev);
        if let Some(&last) = changes.last() {
            if change > last {
                increases += 1;
                if increases >= 3 {
                    return Err(Error::PicardDiverged { iteration: it, change });
                }
            } else {
                increases = 0;
            }
        }
        changes.push(change);
        next.iterations = it;
        next.clip_count = clipped;
        next.changes = changes.clone();
        let done = change < settings.picard_tol && it > 1;
        prev = next;
        if done {
            prev.converged = true;
            break;
        }
    }
    Ok(prev)
}

/// Solves the normalized single-agent equation (`y = gamma Y`) with terminal
/// value `terminal` (`G = gamma F`) against the market price of risk `theta`.
pub fn solve_agent_bsde<E: ConditionalExpectation + ?Sized>(
    est: &E,
    bundle: &PathBundle,
    market: &Market,
    theta: &ThetaPath,
    terminal: &[f64],
    settings: &SolverSettings,
) -> Result<BsdeSolution> {
    theta.check(bundle)?;
    let first = BsdeSolution::empty(bundle.samples(), bundle.grid.steps, bundle.d0, bundle.d);
    picard(first, settings, |prev| {
        let (driver, clipped) = agent_driver(prev, bundle, market, theta, settings.clip);
        Ok((backward_pass(est, bundle, terminal, &driver)?, clipped))
    })
}

/// Result of the measure-changed solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasureChangeSolution {
    pub solution: BsdeSolution,
    pub ess: f64,
    pub terminal_weight_mean: f64,
}

/// Solves the same equation under `dQ/dP = E(-int theta dW0)`, where the
/// driver loses the cross term. Conditional `Q`-expectations are `P`-expectations
/// of one-step density ratios times the target.
pub fn solve_under_q<E: ConditionalExpectation + ?Sized>(
    est: &E,
    bundle: &PathBundle,
    market: &Market,
    theta: &ThetaPath,
    terminal: &[f64],
    settings: &SolverSettings,
) -> Result<MeasureChangeSolution> {
    theta.check(bundle)?;
    let n = bundle.samples();
    let steps = bundle.grid.steps;
    let (d0, d) = (bundle.d0, bundle.d);
    let dt = bundle.grid.dt();
    // One-step density ratios and shifted increments.
    let mut ratio = vec![0.0; n * steps];
    let mut log_weight = vec![0.0; n];
    for s in 0..n {
        let m = bundle.common_of(s);
        for k in 0..steps {
            let th = theta.at(m, k);
            let lr = -th.iter().zip(bundle.dw0_at(m, k)).map(|(a, b)| a * b).sum::<f64>() - 0.5 * norm_sq(th) * dt;
            ratio[s * steps + k] = lr.exp();
            log_weight[s] += lr;
        }
    }
    let w: Vec<f64> = log_weight.iter().map(|v| v.exp()).collect();
    let sw: f64 = w.iter().sum();
    let sw2: f64 = w.iter().map(|v| v * v).sum();
    let ess = sw * sw / sw2;
    let required = n as f64 / 100.0;
    if !(ess >= required) {
        return Err(Error::WeightDegenerate { ess, required });
    }
    let first = BsdeSolution::empty(n, steps, d0, d);
    let solution = picard(first, settings, |prev| {
        let mut clipped = 0;
        let mut sol = BsdeSolution::empty(n, steps, d0, d);
        let mut next = terminal.to_vec();
        for s in 0..n {
            sol.y[s * (steps + 1) + steps] = next[s];
        }
        for k in (0..steps).rev() {
            let t = bundle.grid.t(k);
            let proj = market.at_time(t);
            let mean_p = est.expect(k, &next)?;
            let tilt: Vec<f64> = (0..n).map(|s| ratio[s * steps + k] * (next[s] - mean_p[s])).collect();
            let corr = est.expect(k, &tilt)?;
            let mean_q: Vec<f64> = mean_p.iter().zip(&corr).map(|(a, b)| a + b).collect();
            let weighted: Vec<f64> = (0..n).map(|s| ratio[s * steps + k] * (next[s] - mean_q[s]) / dt).collect();
            for c in 0..d0 {
                let target: Vec<f64> = (0..n)
                    .map(|s| {
                        let m = bundle.common_of(s);
                        weighted[s] * (bundle.dw0_at(m, k)[c] + theta.at(m, k)[c] * dt)
                    })
                    .collect();
                let zc = est.expect(k, &target)?;
                for s in 0..n {
                    sol.z0[(s * steps + k) * d0 + c] = zc[s];
                }
            }
            for c in 0..d {
                let target: Vec<f64> = (0..n).map(|s| weighted[s] * bundle.dwi_at(s, k)[c]).collect();
                let zc = est.expect(k, &target)?;
                for s in 0..n {
                    sol.z1[(s * steps + k) * d + c] = zc[s];
                }
            }
            for s in 0..n {
                let th = theta.at(bundle.common_of(s), k);
                let z0 = clip(prev.z0_at(s, k), settings.clip, &mut clipped);
                let z1 = clip(prev.z1_at(s, k), settings.clip, &mut clipped);
                let (_, perp) = proj.split(&z0);
                let f = -0.5 * norm_sq(th) + 0.5 * (norm_sq(&perp) + norm_sq(&z1));
                next[s] = mean_q[s] + f * dt;
                sol.y[s * (steps + 1) + k] = next[s];
            }
        }
        Ok((sol, clipped))
    })?;
    Ok(MeasureChangeSolution { solution, ess, terminal_weight_mean: sw / n as f64 })
}

/// `sup_{k, s} E[sum_{j >= k} |Z_j|^2 dt | F_k]` for the chosen integrands.
pub fn bmo_proxy<E: ConditionalExpectation + ?Sized>(
    est: &E,
    sol: &BsdeSolution,
    dt: f64,
    include_idio: bool,
) -> Result<f64> {
    let n = sol.samples;
    let mut q = vec![0.0; n];
    let mut sup: f64 = 0.0;
    for k in (0..sol.steps).rev() {
        let cond = est.expect(k, &q)?;
        for s in 0..n {
            let mut e = norm_sq(sol.z0_at(s, k));
            if include_idio {
                e += norm_sq(sol.z1_at(s, k));
            }
            q[s] = e * dt + cond[s];
            sup = sup.max(q[s]);
        }
    }
    Ok(sup)
}

/// `log E[exp(G)]`, computed stably.
pub fn cole_hopf_oracle(terminal: &[f64]) -> f64 {
    let mx = terminal.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = terminal.iter().map(|g| (g - mx).exp()).sum();
    mx + (s / terminal.len() as f64).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsde::basis::BasisSpec;
    use crate::bsde::estimator::RegressionEstimator;
    use crate::model::{simulate_paths, FactorSpec, MarketSpec, SigmaSpec, TimeGrid};

    fn market() -> Market {
        Market::new(MarketSpec {
            n: 1,
            d0: 1,
            d: 1,
            sigma: SigmaSpec::Constant(vec![vec![1.0]]),
            lambda_lo: 0.5,
            lambda_hi: 2.0,
            horizon: 1.0,
        })
        .unwrap()
    }

    fn bundle(m: usize) -> PathBundle {
        let spec = FactorSpec { alpha: -0.5, beta: 0.0, delta: vec![0.5], x0: 0.0, a: 0.0, b: 0.0, kappa: 0.0 };
        simulate_paths(&TimeGrid::new(1.0, 10).unwrap(), &spec, 1, m, 1, 21).unwrap()
    }

    #[test]
    fn zero_terminal_and_theta_gives_zero() {
        let b = bundle(500);
        let est = RegressionEstimator::new(&b, BasisSpec::default(), &[0], 1e-8).unwrap();
        let sol = solve_agent_bsde(&est, &b, &market(), &ThetaPath::zeros(10, 1), &vec![0.0; 500], &SolverSettings::default())
            .unwrap();
        assert!(sol.y.iter().chain(&sol.z0).chain(&sol.z1).all(|v| *v == 0.0));
        assert!(sol.converged);
    }

    #[test]
    fn constant_theta_adds_deterministic_drift() {
        // y = G - |theta|^2 (T - t) / 2 with G = 0.
        let b = bundle(500);
        let est = RegressionEstimator::new(&b, BasisSpec::default(), &[0], 1e-8).unwrap();
        let theta = ThetaPath::deterministic(10, &[0.4]);
        let sol = solve_agent_bsde(&est, &b, &market(), &theta, &vec![0.0; 500], &SolverSettings::default()).unwrap();
        assert!((sol.y_at(3, 0) + 0.08).abs() < 1e-12, "{}", sol.y_at(3, 0));
    }

    #[test]
    fn oracle_of_constant_is_itself() {
        assert!((cole_hopf_oracle(&[0.3; 10]) - 0.3).abs() < 1e-15);
        assert!((cole_hopf_oracle(&[0.0, 2f64.ln()]) - 1.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn theta_layout_is_checked() {
        let b = bundle(500);
        let est = RegressionEstimator::new(&b, BasisSpec::default(), &[0], 1e-8).unwrap();
        let theta = ThetaPath::zeros(9, 1);
        assert!(solve_agent_bsde(&est, &b, &market(), &theta, &vec![0.0; 500], &SolverSettings::default()).is_err());
    }
}
