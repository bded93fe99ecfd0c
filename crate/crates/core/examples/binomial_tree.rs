//! Mean-field solver on a three-step binomial tree against exhaustive
//! backward evaluation of the same equation.

use mfg_equilibrium::bsde::HistoryEstimator;
use mfg_equilibrium::mean_field::{binomial_tree_bundle, solve_mean_field, tree_groups, tree_oracle, MeanFieldProblem, MeanFieldSettings};
use mfg_equilibrium::model::{FactorSpec, Market, MarketSpec, SigmaSpec, TimeGrid};

fn main() -> mfg_equilibrium::Result<()> {
    let spec = FactorSpec { alpha: -0.5, beta: 0.0, delta: vec![0.5], x0: 0.0, a: 0.0, b: 0.0, kappa: 0.0 };
    let grid = TimeGrid::new(1.0, 3)?;
    let gammas = [1.0, 3.0];
    let market = Market::new(MarketSpec {
        n: 1,
        d0: 1,
        d: 1,
        sigma: SigmaSpec::Constant(vec![vec![0.7]]),
        lambda_lo: 0.1,
        lambda_hi: 1.0,
        horizon: 1.0,
    })?;
    let f = |l: usize, w0: f64, w1: f64| 0.3 * w0 * w0 / gammas[l] + 0.2 * w0 * w1 + 0.1 * w1;

    let bundle = binomial_tree_bundle(&grid, &spec, gammas.len())?;
    let groups = tree_groups(grid.steps, gammas.len());
    let terminal: Vec<f64> = (0..bundle.samples())
        .map(|s| f(groups[s % bundle.particles], bundle.w0_at(bundle.common_of(s), 3), bundle.wi_at(s, 3)))
        .collect();
    let est = HistoryEstimator::new(&bundle, &groups)?;
    let problem = MeanFieldProblem::new(
        &bundle,
        &market,
        groups.iter().map(|l| gammas[*l]).collect(),
        terminal,
        MeanFieldSettings { iters: 20, tol: 1e-13, clip: 50.0 },
    );
    let sol = solve_mean_field(&problem, &est)?;
    let oracle = tree_oracle(&grid, &gammas, f);

    println!("{} common histories x {} particles, {} iterations", bundle.n_common, bundle.particles, sol.iterations);
    for (l, g) in gammas.iter().enumerate() {
        let s = l * 8;
        println!("gamma = {g}: y0 solver {:.12}, exhaustive {:.12}", sol.solution.y_at(s, 0), oracle[0][l]);
    }
    Ok(())
}
