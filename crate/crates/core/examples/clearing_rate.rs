//! Clearing residual of finite populations playing the mean-field strategies.
//! With the additive liability the market clears exactly; the cross term
//! leaves a residual that decays like 1/N.

use mfg_equilibrium::bsde::{bmo_proxy, RegressionEstimator};
use mfg_equilibrium::clearing::{clearing_experiment, ClearingSettings, ClearingSetup, PopulationSpec, SolutionMaps};
use mfg_equilibrium::mean_field::{solve_mean_field, type_cloud, MeanFieldProblem, MeanFieldSettings};
use mfg_equilibrium::model::{simulate_paths, Market, TimeGrid};
use mfg_equilibrium::scenario::{default_factor, default_gamma, default_market, Liability};

fn main() -> mfg_equilibrium::Result<()> {
    let spec = default_factor();
    let market = Market::new(default_market())?;
    let grid = TimeGrid::new(1.0, 50)?;
    let population = PopulationSpec { gamma: default_gamma(), xi_mean: 0.0, xi_std: 0.0 };
    let base = simulate_paths(&grid, &spec, 1, 1000, 4, 7)?;
    let cloud = type_cloud(&base, &population.gamma)?;
    let b = &cloud.bundle;

    for liability in [Liability::Additive, Liability::CrossTerm { epsilon: 2.5e-4 }] {
        let est = RegressionEstimator::new(b, liability.basis(), &cloud.types, 1e-8)?;
        let terminal = liability.terminal(&spec, b, &cloud.gammas);
        let problem = MeanFieldProblem::new(b, &market, cloud.gammas.clone(), terminal, MeanFieldSettings::default())
            .with_weights(cloud.weights.clone());
        let sol = solve_mean_field(&problem, &est)?;
        let bmo = bmo_proxy(&est, &sol.solution, grid.dt(), true)?;
        let maps = SolutionMaps::fit(&est, &sol.solution)?;
        let setup = ClearingSetup { maps: &maps, market: &market, factor: &spec, grid, population: &population, seed: 7 };
        let settings = ClearingSettings { m0: 100, ..ClearingSettings::default() };
        let report = clearing_experiment(&setup, &settings, bmo)?;

        println!("{liability:?}");
        for j in 0..report.ns.len() {
            println!("  N = {:>5}  eps_N = {:.3e} +- {:.1e}  N eps_N = {:.3e}", report.ns[j], report.eps[j], report.std_errors[j], report.scaled[j]);
        }
        if report.exact_clearing() {
            println!("  clears exactly: sup |p| = {:.1e} below {:.1e}", report.p_sup, report.p_tolerance);
        } else if let Some(s) = report.slope {
            println!("  log-log slope {s:.3}, bound constant {:.3e}", report.bound_const);
        }
    }
    Ok(())
}
