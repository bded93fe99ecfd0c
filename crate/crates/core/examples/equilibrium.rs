//! Equilibrium market price of risk and excess returns along simulated
//! factor paths, with the sign law and the Cole-Hopf martingale check.

use mfg_equilibrium::eqg::{cole_hopf_martingale, equilibrium_path, riccati_closed_form};
use mfg_equilibrium::model::{simulate_paths, Market, TimeGrid};
use mfg_equilibrium::scenario::{default_factor, default_market};

fn main() -> mfg_equilibrium::Result<()> {
    let spec = default_factor();
    let market = Market::new(default_market())?;
    let grid = TimeGrid::new(1.0, 50)?;
    let ric = riccati_closed_form(&spec, &grid)?;
    let bundle = simulate_paths(&grid, &spec, 1, 2000, 1, 7)?;
    let eq = equilibrium_path(&bundle, &ric, &market, &spec)?;

    for k in [0, 25, 49] {
        println!(
            "t = {:.2}  x = {:+.4}  theta = {:+.5?}  mu = {:+.5?}",
            grid.t(k),
            bundle.x_at(0, k),
            eq.theta_at(0, k),
            eq.mu_at(0, k)
        );
    }
    println!("sign-law violations: {}", eq.sign_law_violations(&market, &grid));

    let mg = cole_hopf_martingale(&spec, &ric, 20_000, 7)?;
    println!("E[exp(y_T - y_0)] = {:.5} +- {:.5} (z = {:.2})", mg.mean, mg.std_error, mg.z_score);
    Ok(())
}
