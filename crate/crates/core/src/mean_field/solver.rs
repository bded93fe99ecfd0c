use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bsde::solver::{backward_pass, clip, iterate_change};
use crate::bsde::{BsdeSolution, ConditionalExpectation, ThetaPath};
use crate::error::{Error, Result};
use crate::model::market::{dot, norm_sq};
use crate::model::{Market, PathBundle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldSettings {
    pub iters: usize,
    pub tol: f64,
    pub clip: f64,
}

impl Default for MeanFieldSettings {
    fn default() -> Self {
        Self { iters: 10, tol: 1e-4, clip: 50.0 }
    }
}

/// Particle cloud for the mean-field equation in original units `(Y, Z)`.
///
/// Particle slot `j` of every common path has risk aversion `gammas[j]` and
/// weight `weights[j]` in the conditional mean over the cloud, so the same
/// population is used on every path.
pub struct MeanFieldProblem<'a> {
    pub bundle: &'a PathBundle,
    pub market: &'a Market,
    pub gammas: Vec<f64>,
    /// Slot weights, normalized to sum to one.
    pub weights: Vec<f64>,
    /// Terminal liability `F` per sample.
    pub terminal: Vec<f64>,
    pub settings: MeanFieldSettings,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanFieldSolution {
    pub solution: BsdeSolution,
    /// `E-bar[Z0_par]` per common path and step, `(n_common, steps, d0)`.
    pub ebar: Vec<f64>,
    /// `theta = -gamma_hat E-bar[Z0_par]`.
    pub theta: Vec<f64>,
    pub gamma_hat: f64,
    pub iterations: usize,
    pub converged: bool,
    pub changes: Vec<f64>,
    /// `|Z^{j+1} - Z^j| / |Z^j - Z^{j-1}|` in cloud L2, from the second iteration on.
    pub ratios: Vec<f64>,
    pub clip_count: usize,
}

impl MeanFieldSolution {
    pub fn theta_path(&self, n_common: usize) -> ThetaPath {
        let d0 = self.solution.d0;
        ThetaPath { rows: n_common, steps: self.solution.steps, d0, values: self.theta.clone() }
    }

    pub fn theta_at(&self, m: usize, k: usize) -> &[f64] {
        let d0 = self.solution.d0;
        let i = (m * self.solution.steps + k) * d0;
        &self.theta[i..i + d0]
    }
}

impl<'a> MeanFieldProblem<'a> {
    /// Problem with equally weighted slots.
    pub fn new(
        bundle: &'a PathBundle,
        market: &'a Market,
        gammas: Vec<f64>,
        terminal: Vec<f64>,
        settings: MeanFieldSettings,
    ) -> Self {
        let weights = vec![1.0 / bundle.particles as f64; bundle.particles];
        Self { bundle, market, gammas, weights, terminal, settings }
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Self {
        self.weights = weights;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.bundle;
        if self.weights.len() != b.particles {
            return Err(Error::DimensionMismatch(format!("{} weights for {} particle slots", self.weights.len(), b.particles)));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter("slot weights must be nonnegative and sum to one".into()));
        }
        if self.gammas.len() != b.particles {
            return Err(Error::DimensionMismatch(format!(
                "{} risk aversions for {} particle slots",
                self.gammas.len(),
                b.particles
            )));
        }
        if let Some(&g) = self.gammas.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
            return Err(Error::NonpositiveGamma(g));
        }
        if self.terminal.len() != b.samples() {
            return Err(Error::DimensionMismatch("one terminal value per sample required".into()));
        }
        if self.market.spec.d0 != b.d0 {
            return Err(Error::DimensionMismatch("market and paths disagree on d0".into()));
        }
        Ok(())
    }

    /// Weighted harmonic mean of the slot risk aversions.
    pub fn gamma_hat(&self) -> f64 {
        1.0 / self.gammas.iter().zip(&self.weights).map(|(g, w)| w / g).sum::<f64>()
    }

    fn gamma_of(&self, s: usize) -> f64 {
        self.gammas[s % self.bundle.particles]
    }
}

/// Weighted mean of `Z0_par` over the particles of each common path,
/// `(n_common, steps, d0)`.
pub fn cloud_mean(sol: &BsdeSolution, bundle: &PathBundle, market: &Market, weights: &[f64]) -> Vec<f64> {
    let (steps, d0, k_p) = (sol.steps, sol.d0, bundle.particles);
    (0..bundle.n_common)
        .into_par_iter()
        .flat_map_iter(|m| {
            let mut out = vec![0.0; steps * d0];
            for k in 0..steps {
                let pr = market.at_time(bundle.grid.t(k));
                for (j, w) in weights.iter().enumerate() {
                    let par = pr.parallel(sol.z0_at(m * k_p + j, k));
                    for c in 0..d0 {
                        out[k * d0 + c] += w * par[c];
                    }
                }
            }
            out
        })
        .collect()
}

/// Mean-field driver
/// `gamma_hat Z_par E-bar - gamma_hat^2 |E-bar|^2 / (2 gamma) + gamma (|Z_perp|^2 + |Z1|^2) / 2`
/// evaluated at the frozen input.
fn mean_field_driver(problem: &MeanFieldProblem, z_in: &BsdeSolution, ebar: &[f64]) -> (Vec<f64>, usize) {
    let b = problem.bundle;
    let (steps, d0) = (b.grid.steps, b.d0);
    let gh = problem.gamma_hat();
    let clip_bound = problem.settings.clip;
    let rows: Vec<(Vec<f64>, usize)> = (0..b.samples())
        .into_par_iter()
        .map(|s| {
            let m = b.common_of(s);
            let g = problem.gamma_of(s);
            let mut clipped = 0;
            let out = (0..steps)
                .map(|k| {
                    let e = &ebar[(m * steps + k) * d0..(m * steps + k + 1) * d0];
                    let z0 = clip(z_in.z0_at(s, k), clip_bound, &mut clipped);
                    let z1 = clip(z_in.z1_at(s, k), clip_bound, &mut clipped);
                    let (par, perp) = problem.market.at_time(b.grid.t(k)).split(&z0);
                    gh * dot(&par, e) - gh * gh / (2.0 * g) * norm_sq(e) + 0.5 * g * (norm_sq(&perp) + norm_sq(&z1))
                })
                .collect();
            (out, clipped)
        })
        .collect();
    let clipped = rows.iter().map(|r| r.1).sum();
    (rows.into_iter().flat_map(|r| r.0).collect(), clipped)
}

/// One application of the solution map: the linear backward equation with the
/// driver (including the conditional mean) frozen at `z_in`.
pub fn gamma_map<E: ConditionalExpectation + ?Sized>(
    problem: &MeanFieldProblem,
    est: &E,
    z_in: &BsdeSolution,
) -> Result<BsdeSolution> {
    problem.validate()?;
    let ebar = cloud_mean(z_in, problem.bundle, problem.market, &problem.weights);
    let (driver, clipped) = mean_field_driver(problem, z_in, &ebar);
    let mut out = backward_pass(est, problem.bundle, &problem.terminal, &driver)?;
    out.clip_count = clipped;
    Ok(out)
}

fn z_distance(a: &BsdeSolution, b: &BsdeSolution) -> f64 {
    a.z0.iter()
        .chain(&a.z1)
        .zip(b.z0.iter().chain(&b.z1))
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Picard iteration of [`gamma_map`] from `Z = 0`, stopped once the change
/// of `(y0, Z)` falls below `tol`.
pub fn solve_mean_field<E: ConditionalExpectation + ?Sized>(
    problem: &MeanFieldProblem,
    est: &E,
) -> Result<MeanFieldSolution> {
    problem.validate()?;
    let b = problem.bundle;
    let zero = BsdeSolution {
        samples: b.samples(),
        steps: b.grid.steps,
        d0: b.d0,
        d: b.d,
        y: vec![0.0; b.samples() * (b.grid.steps + 1)],
        z0: vec![0.0; b.samples() * b.grid.steps * b.d0],
        z1: vec![0.0; b.samples() * b.grid.steps * b.d],
        iterations: 0,
        converged: false,
        changes: Vec::new(),
        clip_count: 0,
    };
    let mut prev = zero;
    let mut changes = Vec::new();
    let mut steps_z = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut clipped = 0;
    for it in 1..=problem.settings.iters.max(1) {
        let next = gamma_map(problem, est, &prev)?;
        clipped = next.clip_count;
        changes.push(iterate_change(&next, &prev));
        steps_z.push(z_distance(&next, &prev));
        prev = next;
        iterations = it;
        if changes[it - 1] < problem.settings.tol {
            converged = true;
            break;
        }
    }
    let ratios = steps_z.windows(2).map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 }).collect();
    let ebar = cloud_mean(&prev, b, problem.market, &problem.weights);
    let gh = problem.gamma_hat();
    let theta = ebar.iter().map(|v| -gh * v).collect();
    prev.iterations = iterations;
    prev.converged = converged;
    prev.changes = changes.clone();
    let sol = MeanFieldSolution {
        solution: prev,
        ebar,
        theta,
        gamma_hat: gh,
        iterations,
        converged,
        changes: changes.clone(),
        ratios,
        clip_count: clipped,
    };
    if !converged {
        return Err(Error::NotConverged {
            iterations,
            last_change: *changes.last().unwrap_or(&f64::NAN),
            best: Box::new(sol),
        });
    }
    Ok(sol)
}
