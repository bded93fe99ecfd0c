//! Recombining the traded securities with a well-conditioned matrix leaves the
//! market price of risk and every achievable wealth path unchanged.

use mfg_equilibrium::clearing::{invariance_sweep, random_well_conditioned};
use mfg_equilibrium::eqg::{equilibrium_path, riccati_closed_form};
use mfg_equilibrium::model::rng::{domain, stream};
use mfg_equilibrium::model::{simulate_paths, Market, TimeGrid};
use mfg_equilibrium::scenario::{default_factor, default_market};

fn main() -> mfg_equilibrium::Result<()> {
    let spec = default_factor();
    let market = Market::new(default_market())?;
    let grid = TimeGrid::new(1.0, 50)?;
    let ric = riccati_closed_form(&spec, &grid)?;
    let bundle = simulate_paths(&grid, &spec, 1, 1, 1, 7)?;
    let eq = equilibrium_path(&bundle, &ric, &market, &spec)?;
    let mu: Vec<f64> = (0..grid.steps).flat_map(|k| eq.mu_at(0, k).to_vec()).collect();

    let q = random_well_conditioned(2, 0.3, 50.0, &mut stream(7, domain::REPLACEMENT, 0))?;
    println!("one replacement matrix:\n{q:.4}");

    let report = invariance_sweep(&market, &grid, &mu, 100, 0.3, 50.0, 7)?;
    println!("{} matrices, largest condition number {:.2}", report.trials, report.max_condition);
    println!("max theta discrepancy  {:.2e}", report.theta_max);
    println!("max wealth discrepancy {:.2e}", report.wealth_max);
    Ok(())
}
