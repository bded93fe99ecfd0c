//! Drift of the utility process under the optimal strategy and under
//! perturbed strategies: zero at the optimum, negative elsewhere.

use mfg_equilibrium::bsde::{
    optimal_strategy, solve_agent_bsde, verify_condition_r, Perturbation, RegressionEstimator, SolverSettings, ThetaPath,
};
use mfg_equilibrium::eqg::{equilibrium_path, riccati_closed_form};
use mfg_equilibrium::model::{simulate_paths, Market, TimeGrid};
use mfg_equilibrium::scenario::{default_factor, default_market, Liability};

fn main() -> mfg_equilibrium::Result<()> {
    let spec = default_factor();
    let market = Market::new(default_market())?;
    let grid = TimeGrid::new(1.0, 50)?;
    let gamma = 2.0;
    let ric = riccati_closed_form(&spec, &grid)?;
    let bundle = simulate_paths(&grid, &spec, 1, 4000, 1, 11)?;
    let eq = equilibrium_path(&bundle, &ric, &market, &spec)?;
    let terminal: Vec<f64> = Liability::Additive.terminal(&spec, &bundle, &[gamma]).iter().map(|f| gamma * f).collect();
    let est = RegressionEstimator::new(&bundle, Liability::Additive.basis(), &[0], 1e-8)?;
    let theta = ThetaPath::from_equilibrium(&eq);
    let sol = solve_agent_bsde(&est, &bundle, &market, &theta, &terminal, &SolverSettings::default())?;

    let strat = optimal_strategy(&sol, &bundle, &market, &theta, gamma)?;
    println!("optimal pi at t=0, path 0: {:.5?}", strat.pi_at(0, 0));

    let perturbations = [Perturbation::Shift(vec![0.5, 0.0]), Perturbation::Shift(vec![0.0, -0.5]), Perturbation::Shift(vec![-0.3, 0.3])];
    let report = verify_condition_r(&sol, &bundle, &market, &theta, gamma, 0.0, &perturbations)?;
    for d in std::iter::once(&report.optimal).chain(&report.perturbed) {
        println!(
            "{:<18} drift {:+.5} +- {:.5}  z {:+6.2}  utility {:.5}",
            d.label, d.drift, d.std_error, d.z_score, d.utility
        );
    }
    let tail = &report.optimal.tail;
    println!(
        "exp(-gamma X_T) under the optimum: mean {:.4}, max share {:.2e}, top 1% share {:.3}, ESS fraction {:.3}",
        tail.mean, tail.max_share, tail.top_percent_share, tail.ess_fraction
    );
    println!("passes: {}", report.passes());
    Ok(())
}
