use serde::Serialize;
use serde_json::json;

use super::config::ScenarioConfig;
use super::output::{Cell, OutputDir};
use crate::bsde::{
    bmo_proxy, solve_agent_bsde, solve_under_q, verify_condition_r, BasisSpec, RegressionEstimator, ThetaPath,
};
use crate::clearing::{clearing_experiment, ClearingReport, ClearingSetup, SolutionMaps};
use crate::eqg::{
    cole_hopf_martingale, equilibrium_path, fubini_malliavin_check, riccati_closed_form, riccati_ode,
    EquilibriumPath, RiccatiSolution,
};
use crate::error::{Error, Result};
use crate::mean_field::{smallness_report, solve_mean_field, type_cloud, MeanFieldProblem, MeanFieldSolution};
use crate::model::{simulate_paths, Market, PathBundle, TimeGrid};
use crate::scenario::Liability;

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Riccati,
    Equilibrium,
    Bsde,
    MfSolve,
    Clearing,
    Invariance,
}

impl Stage {
    pub const ALL: [Stage; 6] =
        [Stage::Riccati, Stage::Equilibrium, Stage::Bsde, Stage::MfSolve, Stage::Clearing, Stage::Invariance];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Riccati => "riccati",
            Stage::Equilibrium => "equilibrium",
            Stage::Bsde => "bsde",
            Stage::MfSolve => "mf-solve",
            Stage::Clearing => "clearing",
            Stage::Invariance => "invariance",
        }
    }
}

/// A time series per path: `values[(p * times.len() + k) * width + c]`.
#[derive(Debug, Clone)]
pub struct PathSeries {
    pub times: Vec<f64>,
    pub paths: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

/// In-memory stage results used by later stages and by the plot emitter.
#[derive(Default)]
pub struct StageOutputs {
    pub riccati: Option<RiccatiSolution>,
    pub equilibrium: Option<(PathBundle, EquilibriumPath)>,
    pub theta: Option<PathSeries>,
    pub mu: Option<PathSeries>,
    pub mf: Option<MfArtifacts>,
    pub clearing: Option<ClearingReport>,
}

pub struct MfArtifacts {
    pub maps: SolutionMaps,
    pub bmo: f64,
    pub ratios: Vec<f64>,
    pub converged: bool,
}

/// Runs stages against one configuration, reusing earlier results.
pub struct Pipeline<'a> {
    pub config: &'a ScenarioConfig,
    pub market: Market,
    pub grid: TimeGrid,
    pub outputs: StageOutputs,
}

fn float_row(vals: impl IntoIterator<Item = f64>) -> Vec<Cell> {
    vals.into_iter().map(Cell::Float).collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

impl<'a> Pipeline<'a> {
    pub fn new(config: &'a ScenarioConfig) -> Result<Self> {
        Ok(Self { config, market: Market::new(config.market.clone())?, grid: config.time_grid()?, outputs: StageOutputs::default() })
    }

    pub fn run(&mut self, stage: Stage, out: &mut OutputDir) -> Result<bool> {
        match stage {
            Stage::Riccati => self.riccati(out),
            Stage::Equilibrium => self.equilibrium(out),
            Stage::Bsde => self.bsde(out),
            Stage::MfSolve => self.mf_solve(out),
            Stage::Clearing => self.clearing(out),
            Stage::Invariance => self.invariance(out),
        }
    }

    fn liability(&self) -> Liability {
        self.config.eqg.liability
    }

    fn basis(&self, explicit: &Option<BasisSpec>) -> BasisSpec {
        explicit.clone().unwrap_or_else(|| self.liability().basis())
    }

    /// Normalized closed-form initial value `A x0^2 + B x0 + C + kappa^2 T / 2` of the additive liability.
    fn closed_y0(&mut self) -> Result<f64> {
        let f = &self.config.eqg.factor;
        let (x0, kappa, horizon) = (f.x0, f.kappa, self.grid.horizon);
        Ok(self.ensure_riccati()?.value(0, x0) + 0.5 * kappa * kappa * horizon)
    }

    fn ensure_riccati(&mut self) -> Result<&RiccatiSolution> {
        if self.outputs.riccati.is_none() {
            self.outputs.riccati = Some(riccati_closed_form(&self.config.eqg.factor, &self.grid)?);
        }
        Ok(self.outputs.riccati.as_ref().expect("set above"))
    }

    fn ensure_equilibrium(&mut self) -> Result<()> {
        if self.outputs.equilibrium.is_none() {
            let cfg = self.config;
            let ric = self.ensure_riccati()?.clone();
            let bundle = simulate_paths(&self.grid, &cfg.eqg.factor, cfg.market.d, cfg.bsde.paths, 1, cfg.seed)?;
            let eq = equilibrium_path(&bundle, &ric, &self.market, &cfg.eqg.factor)?;
            self.outputs.equilibrium = Some((bundle, eq));
        }
        Ok(())
    }

    fn riccati(&mut self, out: &mut OutputDir) -> Result<bool> {
        let cfg = &self.config.eqg;
        let spec = &cfg.factor;
        let closed = riccati_closed_form(spec, &self.grid)?;
        let ode = riccati_ode(spec, &self.grid, cfg.riccati_substeps)?;
        let sup_diff = closed.max_abs_diff(&ode);
        let times = self.grid.times();
        let rows: Vec<Vec<Cell>> = (0..times.len())
            .map(|k| float_row([times[k], closed.a[k], closed.b[k], closed.c[k], ode.a[k], ode.b[k], ode.c[k]]))
            .collect();
        out.write_csv("riccati.csv", &["t", "A", "B", "C", "A_ode", "B_ode", "C_ode"], &rows)?;
        let mut passed = sup_diff < cfg.riccati_tolerance;
        let linear = if spec.a == 0.0 {
            let horizon = self.grid.horizon;
            let analytic = |t: f64| {
                let tau = horizon - t;
                if spec.alpha == 0.0 {
                    spec.b * tau
                } else {
                    spec.b / spec.alpha * ((spec.alpha * tau).exp() - 1.0)
                }
            };
            let b_err = times.iter().zip(&closed.b).map(|(t, b)| (b - analytic(*t)).abs()).fold(0.0, f64::max);
            let a_max = closed.a.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
            passed &= b_err < 1e-10 && a_max == 0.0;
            Some(json!({ "b_max_error": b_err, "a_max_abs": a_max }))
        } else {
            None
        };
        out.write_json(
            "riccati.json",
            &json!({
                "rho_plus": closed.rho_plus,
                "rho_minus": closed.rho_minus,
                "sup_diff_closed_vs_rk4": sup_diff,
                "tolerance": cfg.riccati_tolerance,
                "rk4_substeps": cfg.riccati_substeps,
                "linear_case": linear,
                "passed": passed,
            }),
        )?;
        self.outputs.riccati = Some(closed);
        Ok(passed)
    }

    fn equilibrium(&mut self, out: &mut OutputDir) -> Result<bool> {
        self.ensure_equilibrium()?;
        let cfg = self.config;
        let grid = self.grid;
        let (bundle, eq) = self.outputs.equilibrium.as_ref().expect("ensured");
        let violations = eq.sign_law_violations(&self.market, &grid);

        let mg_grid = TimeGrid::new(grid.horizon, cfg.eqg.martingale_steps)?;
        let mg_ric = riccati_closed_form(&cfg.eqg.factor, &mg_grid)?;
        let mg = cole_hopf_martingale(&cfg.eqg.factor, &mg_ric, cfg.eqg.martingale_paths, cfg.seed)?;

        let fubini = self.fubini_sequence()?;
        let reductions: Vec<f64> = fubini.windows(2).map(|w| w[0].1 / w[1].1).collect();
        let fubini_ok = fubini.windows(2).all(|w| 3.0 * w[1].1 <= w[0].1);

        let plot_paths = cfg.eqg.plot_paths.min(bundle.n_common);
        let times: Vec<f64> = (0..grid.steps).map(|k| grid.t(k)).collect();
        let (d0, n) = (eq.d0, eq.n);
        let theta = PathSeries {
            times: times.clone(),
            paths: plot_paths,
            width: d0,
            values: (0..plot_paths).flat_map(|m| (0..grid.steps).flat_map(move |k| eq.theta_at(m, k).to_vec())).collect(),
        };
        let mu = PathSeries {
            times,
            paths: plot_paths,
            width: n,
            values: (0..plot_paths).flat_map(|m| (0..grid.steps).flat_map(move |k| eq.mu_at(m, k).to_vec())).collect(),
        };
        write_series(out, "equilibrium_theta.csv", "theta", &theta)?;
        write_series(out, "equilibrium_mu.csv", "mu", &mu)?;

        let passed = violations == 0 && mg.z_score.abs() < 3.0 && fubini_ok;
        out.write_json(
            "equilibrium.json",
            &json!({
                "paths": bundle.n_common,
                "sign_law_violations": violations,
                "martingale": mg,
                "martingale_steps": cfg.eqg.martingale_steps,
                "fubini": fubini.iter().map(|(s, d)| json!({ "steps": s, "mean_abs_discrepancy": d })).collect::<Vec<_>>(),
                "fubini_reductions": reductions,
                "passed": passed,
            }),
        )?;
        self.outputs.theta = Some(theta);
        self.outputs.mu = Some(mu);
        Ok(passed)
    }

    /// Mean pathwise Fubini discrepancy with `a = 0` on each configured grid,
    /// all grids coarsened from the finest one so the Brownian paths coincide.
    fn fubini_sequence(&self) -> Result<Vec<(usize, f64)>> {
        let cfg = self.config;
        let mut spec = cfg.eqg.factor.clone();
        spec.a = 0.0;
        let steps = &cfg.eqg.fubini_steps;
        let finest = steps.iter().copied().max().unwrap_or(0);
        if finest == 0 {
            return Ok(Vec::new());
        }
        let fine_grid = TimeGrid::new(self.grid.horizon, finest)?;
        let fine = simulate_paths(&fine_grid, &spec, 1, cfg.eqg.fubini_paths, 1, cfg.seed)?;
        steps
            .iter()
            .map(|&s| {
                if s == 0 || finest % s != 0 {
                    return Err(Error::Config(format!("Fubini grid {s} does not divide {finest}")));
                }
                let b = fine.coarsen(&spec, finest / s)?;
                let ric = riccati_closed_form(&spec, &b.grid)?;
                Ok((s, fubini_malliavin_check(&b, &ric, &spec)?.mean_abs_discrepancy))
            })
            .collect()
    }

    fn bsde(&mut self, out: &mut OutputDir) -> Result<bool> {
        self.ensure_equilibrium()?;
        let y0_closed = self.closed_y0()?;
        let cfg = self.config;
        let bc = &cfg.bsde;
        let spec = &cfg.eqg.factor;
        let liability = self.liability();
        let gamma = cfg.population.gamma.gamma_hat();
        let (bundle, eq) = self.outputs.equilibrium.as_ref().expect("ensured");
        let steps = self.grid.steps;
        let terminal: Vec<f64> =
            liability.terminal(spec, bundle, &[gamma]).into_iter().map(|f| gamma * f).collect();
        let est = RegressionEstimator::new(bundle, self.basis(&bc.basis), &[0], bc.ridge)?;
        let theta = ThetaPath::from_equilibrium(eq);
        let sol = solve_agent_bsde(&est, bundle, &self.market, &theta, &terminal, &bc.settings)?;
        let under_q = solve_under_q(&est, bundle, &self.market, &theta, &terminal, &bc.settings)?;
        let report = verify_condition_r(&sol, bundle, &self.market, &theta, gamma, bc.xi, &bc.perturbations)?;

        let y0 = sol.y0_mean();
        let y0_rel = rel(y0, y0_closed);
        let (mut num, mut den) = (0.0, 0.0);
        for s in 0..sol.samples {
            for k in 0..steps {
                for (a, b) in sol.z0_at(s, k).iter().zip(eq.z0_at(s, k)) {
                    num += (a - b) * (a - b);
                    den += b * b;
                }
            }
        }
        let z0_rms = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
        let measure_rel = rel(under_q.solution.y0_mean(), y0);
        let additive = liability == Liability::Additive;
        // The closed form and the measure-change comparison refer to the additive liability.
        let closed_ok = !additive
            || (y0_rel < bc.y0_tolerance && z0_rms < bc.z0_tolerance && measure_rel < bc.measure_tolerance);
        let passed = sol.converged && sol.clip_count == 0 && under_q.solution.clip_count == 0 && closed_ok && report.passes();

        let kappa = spec.kappa;
        let rows: Vec<Vec<Cell>> = (0..=steps)
            .map(|k| {
                let t = self.grid.t(k);
                let num: f64 = (0..sol.samples).map(|s| sol.y_at(s, k)).sum::<f64>() / sol.samples as f64;
                let closed: f64 = (0..eq.n_common).map(|m| eq.y0_at(m, k)).sum::<f64>() / eq.n_common as f64
                    + 0.5 * kappa * kappa * (self.grid.horizon - t);
                float_row([t, num, closed])
            })
            .collect();
        out.write_csv("bsde_y.csv", &["t", "y_mean", "y_closed_mean"], &rows)?;
        out.write_json(
            "bsde.json",
            &json!({
                "gamma": gamma,
                "paths": bundle.n_common,
                "iterations": sol.iterations,
                "converged": sol.converged,
                "clip_count": sol.clip_count + under_q.solution.clip_count,
                "y0": y0,
                "y0_closed": if additive { Some(y0_closed) } else { None },
                "y0_relative_error": y0_rel,
                "z0_rms_relative_error": z0_rms,
                "y0_under_q": under_q.solution.y0_mean(),
                "measure_change_relative_difference": measure_rel,
                "importance_ess": under_q.ess,
                "condition_r": report,
                "condition_r_passed": report.passes(),
                "passed": passed,
            }),
        )?;
        Ok(passed)
    }

    fn mf_solve(&mut self, out: &mut OutputDir) -> Result<bool> {
        let y0_closed = self.closed_y0()?;
        let cfg = self.config;
        let mc = &cfg.mf;
        let spec = &cfg.eqg.factor;
        let dist = &cfg.population.gamma;
        let liability = self.liability();
        let base = simulate_paths(&self.grid, spec, cfg.market.d, mc.common_paths, mc.idio_per_type, cfg.seed)?;
        let cloud = type_cloud(&base, dist)?;
        drop(base);
        let b = &cloud.bundle;
        let est = RegressionEstimator::new(b, self.basis(&mc.basis), &cloud.types, mc.ridge)?;
        let terminal = liability.terminal(spec, b, &cloud.gammas);
        let problem = MeanFieldProblem::new(b, &self.market, cloud.gammas.clone(), terminal, mc.settings.clone())
            .with_weights(cloud.weights.clone());
        let sol: MeanFieldSolution = match solve_mean_field(&problem, &est) {
            Ok(s) => s,
            Err(Error::NotConverged { best, .. }) => *best,
            Err(e) => return Err(e),
        };
        let bmo = bmo_proxy(&est, &sol.solution, self.grid.dt(), true)?;
        let horizon = self.grid.horizon;
        let diag = smallness_report(
            liability.bound(spec, dist.gamma_min(), horizon),
            dist.gamma_min(),
            dist.gamma_max(),
            dist.gamma_hat(),
            mc.lipschitz,
        )?
        .with_run(sol.ratios.clone(), sol.solution.y_sup(), bmo);

        let types = dist.atoms.len();
        let per_type: Vec<f64> = (0..types)
            .map(|l| {
                let slots: Vec<usize> = (0..b.samples()).filter(|s| cloud.types[s % b.particles] == l).collect();
                slots.iter().map(|s| sol.solution.y_at(*s, 0)).sum::<f64>() / slots.len() as f64
            })
            .collect();
        let additive = liability == Liability::Additive;
        let errors: Vec<f64> = per_type.iter().zip(&dist.atoms).map(|(y, g)| rel(y * g, y0_closed)).collect();
        let closed_ok = !additive || errors.iter().all(|e| *e < mc.y0_tolerance);
        let contraction_ok = !diag.smallness_ok || (diag.contracting() && diag.stable());
        let passed = sol.converged && sol.iterations <= mc.settings.iters && sol.clip_count == 0 && closed_ok && contraction_ok;

        let rows: Vec<Vec<Cell>> = sol
            .changes
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let ratio = if i >= 1 { sol.ratios.get(i - 1).copied().unwrap_or(f64::NAN) } else { f64::NAN };
                vec![Cell::Int(i as i64 + 1), Cell::Float(*c), Cell::Float(ratio)]
            })
            .collect();
        out.write_csv("mf_iterations.csv", &["iteration", "change", "ratio"], &rows)?;
        #[derive(Serialize)]
        struct TypeRow {
            gamma: f64,
            y0: f64,
            y0_closed: Option<f64>,
            relative_error: Option<f64>,
        }
        let type_rows: Vec<TypeRow> = per_type
            .iter()
            .zip(&dist.atoms)
            .zip(&errors)
            .map(|((y, g), e)| TypeRow {
                gamma: *g,
                y0: *y,
                y0_closed: additive.then(|| y0_closed / g),
                relative_error: additive.then_some(*e),
            })
            .collect();
        out.write_json(
            "mf.json",
            &json!({
                "common_paths": mc.common_paths,
                "particles_per_path": b.particles,
                "iterations": sol.iterations,
                "converged": sol.converged,
                "changes": sol.changes,
                "ratios": sol.ratios,
                "gamma_hat": sol.gamma_hat,
                "clip_count": sol.clip_count,
                "types": type_rows,
                "diagnostics": diag,
                "contracting": diag.contracting(),
                "stable": diag.stable(),
                "passed": passed,
            }),
        )?;
        let maps = SolutionMaps::fit(&est, &sol.solution)?;
        self.outputs.mf = Some(MfArtifacts { maps, bmo, ratios: sol.ratios.clone(), converged: sol.converged });
        Ok(passed)
    }

    fn clearing(&mut self, out: &mut OutputDir) -> Result<bool> {
        // The agents' strategies come from the mean-field solution, whose outputs are written as well.
        if self.outputs.mf.is_none() {
            self.mf_solve(out)?;
        }
        let cfg = self.config;
        let mf = self.outputs.mf.as_ref().ok_or_else(|| Error::MissingStageOutput("mf-solve".into()))?;
        let setup = ClearingSetup {
            maps: &mf.maps,
            market: &self.market,
            factor: &cfg.eqg.factor,
            grid: self.grid,
            population: &cfg.population,
            seed: cfg.seed,
        };
        let report = clearing_experiment(&setup, &cfg.clearing.settings(), mf.bmo)?;
        let [lo, hi] = cfg.clearing.slope_range;
        let passed = match self.liability() {
            Liability::Additive => report.exact_clearing() && report.bound_ok,
            Liability::CrossTerm { .. } => report.slope_in(lo, hi) && report.bound_ok,
        };
        let rows: Vec<Vec<Cell>> = (0..report.ns.len())
            .map(|j| {
                vec![
                    Cell::Int(report.ns[j] as i64),
                    Cell::Float(report.eps[j]),
                    Cell::Float(report.std_errors[j]),
                    Cell::Float(report.scaled[j]),
                ]
            })
            .collect();
        out.write_csv("clearing.csv", &["N", "eps", "std_error", "N_eps"], &rows)?;
        out.write_json(
            "clearing.json",
            &json!({
                "report": report,
                "exact_clearing": report.exact_clearing(),
                "slope_range": [lo, hi],
                "passed": passed,
            }),
        )?;
        self.outputs.clearing = Some(report);
        Ok(passed)
    }

    fn invariance(&mut self, out: &mut OutputDir) -> Result<bool> {
        self.ensure_equilibrium()?;
        let cfg = self.config;
        let ic = &cfg.invariance;
        let (_, eq) = self.outputs.equilibrium.as_ref().expect("ensured");
        let mu: Vec<f64> = (0..self.grid.steps).flat_map(|k| eq.mu_at(0, k).to_vec()).collect();
        let report = crate::clearing::invariance_sweep(&self.market, &self.grid, &mu, ic.trials, ic.scale, ic.cond_cap, cfg.seed)?;
        let passed = report.theta_max < ic.tolerance && report.wealth_max < ic.tolerance;
        out.write_json("invariance.json", &json!({ "report": report, "tolerance": ic.tolerance, "passed": passed }))?;
        Ok(passed)
    }
}

fn write_series(out: &mut OutputDir, name: &str, prefix: &str, s: &PathSeries) -> Result<()> {
    let mut header = vec!["path".to_string(), "t".to_string()];
    header.extend((1..=s.width).map(|c| format!("{prefix}_{c}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let steps = s.times.len();
    let rows: Vec<Vec<Cell>> = (0..s.paths)
        .flat_map(|p| {
            (0..steps).map(move |k| {
                let mut row = vec![Cell::Int(p as i64), Cell::Float(s.times[k])];
                let i = (p * steps + k) * s.width;
                row.extend(s.values[i..i + s.width].iter().map(|v| Cell::Float(*v)));
                row
            })
        })
        .collect();
    out.write_csv(name, &header, &rows)
}
