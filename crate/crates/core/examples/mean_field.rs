//! Mean-field fixed point over a population with three risk-aversion types,
//! started from a zero integrand, with smallness and contraction diagnostics.

use mfg_equilibrium::bsde::{bmo_proxy, RegressionEstimator};
use mfg_equilibrium::eqg::riccati_closed_form;
use mfg_equilibrium::mean_field::{smallness_report, solve_mean_field, type_cloud, MeanFieldProblem, MeanFieldSettings};
use mfg_equilibrium::model::{simulate_paths, Market, TimeGrid};
use mfg_equilibrium::scenario::{default_factor, default_gamma, default_market, Liability};

fn main() -> mfg_equilibrium::Result<()> {
    let spec = default_factor();
    let dist = default_gamma();
    let market = Market::new(default_market())?;
    let grid = TimeGrid::new(1.0, 50)?;
    let liability = Liability::Additive;

    let base = simulate_paths(&grid, &spec, 1, 1500, 4, 7)?;
    let cloud = type_cloud(&base, &dist)?;
    let b = &cloud.bundle;
    let est = RegressionEstimator::new(b, liability.basis(), &cloud.types, 1e-8)?;
    let terminal = liability.terminal(&spec, b, &cloud.gammas);
    let problem = MeanFieldProblem::new(b, &market, cloud.gammas.clone(), terminal, MeanFieldSettings::default())
        .with_weights(cloud.weights.clone());
    let sol = solve_mean_field(&problem, &est)?;

    println!("gamma_hat = {:.4}, iterations = {}", sol.gamma_hat, sol.iterations);
    for (j, c) in sol.changes.iter().enumerate() {
        let ratio = j.checked_sub(1).and_then(|i| sol.ratios.get(i));
        println!("  iteration {:>2}: change {c:.3e}  ratio {}", j + 1, ratio.map_or("-".into(), |r| format!("{r:.3}")));
    }

    let closed = riccati_closed_form(&spec, &grid)?.value(0, spec.x0) + 0.5 * spec.kappa * spec.kappa;
    for (l, g) in dist.atoms.iter().enumerate() {
        let slots: Vec<usize> = (0..b.samples()).filter(|s| cloud.types[s % b.particles] == l).collect();
        let y0 = slots.iter().map(|s| sol.solution.y_at(*s, 0)).sum::<f64>() / slots.len() as f64;
        println!("type gamma = {g}: y0 = {y0:.5}, closed form {:.5}", closed / g);
    }
    println!("theta at t=0, path 0: {:.5?}", sol.theta_at(0, 0));

    let bmo = bmo_proxy(&est, &sol.solution, grid.dt(), true)?;
    let diag = smallness_report(liability.bound(&spec, dist.gamma_min(), 1.0), dist.gamma_min(), dist.gamma_max(), dist.gamma_hat(), None)?
        .with_run(sol.ratios.clone(), sol.solution.y_sup(), bmo);
    println!(
        "smallness: |F| <= {:.3} vs threshold {:.4} -> {}; contracting {}; stable {}",
        diag.f_inf,
        diag.threshold,
        diag.smallness_ok,
        diag.contracting(),
        diag.stable()
    );
    Ok(())
}
