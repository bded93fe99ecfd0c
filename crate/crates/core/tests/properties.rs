use nalgebra::DMatrix;
use proptest::prelude::*;

use mfg_equilibrium::clearing::{build_population, order_free_sum, rate_fit, PopulationSpec};
use mfg_equilibrium::eqg::{riccati_closed_form, riccati_ode};
use mfg_equilibrium::model::{simulate_paths, FactorSpec, GammaDistribution, Projector, TimeGrid};
use mfg_equilibrium::runner::ScenarioConfig;
use mfg_equilibrium::scenario::{default_factor, Liability};

/// `n x d0` volatility with a dominant leading block, so it has full row rank.
fn sigma_strategy() -> impl Strategy<Value = DMatrix<f64>> {
    (1usize..=3, 0usize..=2).prop_flat_map(|(n, extra)| {
        let d0 = n + extra;
        prop::collection::vec(-0.3f64..0.3, n * d0).prop_map(move |noise| {
            DMatrix::from_fn(n, d0, |i, j| noise[i * d0 + j] + if i == j { 1.0 } else { 0.0 })
        })
    })
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_splits_orthogonally(sigma in sigma_strategy(), seed in 0u64..1000) {
        let d0 = sigma.ncols();
        let z: Vec<f64> = (0..d0).map(|j| ((seed as f64 + 1.0) * (j as f64 + 0.7)).sin()).collect();
        let p = Projector::new(sigma.clone()).unwrap();
        let (par, perp) = p.split(&z);
        let sum: Vec<f64> = par.iter().zip(&perp).map(|(a, b)| a + b).collect();
        prop_assert!(close(&sum, &z, 1e-14));
        let dot: f64 = par.iter().zip(&perp).map(|(a, b)| a * b).sum();
        prop_assert!(dot.abs() < 1e-12);
        // The complement is annihilated by sigma and the projection is idempotent.
        let s_perp = &sigma * nalgebra::DVector::from_column_slice(&perp);
        prop_assert!(s_perp.amax() < 1e-12);
        prop_assert!(close(&p.parallel(&par), &par, 1e-12));
    }

    #[test]
    fn price_of_risk_and_portfolio_maps_invert(sigma in sigma_strategy(), mu0 in -1.0f64..1.0) {
        let n = sigma.nrows();
        let p = Projector::new(sigma).unwrap();
        let mu: Vec<f64> = (0..n).map(|i| mu0 + 0.1 * i as f64).collect();
        let theta = p.theta_from_mu(&mu);
        prop_assert!(close(&p.mu_from_theta(&theta), &mu, 1e-12));
        prop_assert!(close(&p.parallel(&theta), &theta, 1e-12));
        let pi = p.pi_from_p(&theta);
        prop_assert!(close(&p.p_from_pi(&pi), &theta, 1e-12));
    }

    #[test]
    fn riccati_closed_form_matches_rk4(
        alpha in -2.0f64..1.0,
        a in -1.0f64..=0.0,
        b in -1.0f64..1.0,
        beta in -0.5f64..0.5,
        delta in 0.05f64..1.0,
    ) {
        let spec = FactorSpec { alpha, beta, delta: vec![delta], x0: 0.0, a, b, kappa: 0.0 };
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let closed = riccati_closed_form(&spec, &grid).unwrap();
        let ode = riccati_ode(&spec, &grid, 200).unwrap();
        prop_assert!(closed.max_abs_diff(&ode) < 1e-9);
        prop_assert!(closed.terminal_residuals().iter().all(|r| *r == 0.0));
        // a <= 0 keeps A nonpositive, so exp(y0) stays integrable.
        prop_assert!(closed.a.iter().all(|v| *v <= 1e-15));
    }

    #[test]
    fn residual_sum_ignores_order(mut values in prop::collection::vec(-1e3f64..1e3, 1..200), rot in 0usize..200) {
        let mut shuffled = values.clone();
        let r = rot % shuffled.len();
        shuffled.rotate_left(r);
        shuffled.reverse();
        prop_assert_eq!(order_free_sum(&mut values).to_bits(), order_free_sum(&mut shuffled).to_bits());
    }

    #[test]
    fn rate_fit_recovers_power_laws(slope in -2.0f64..-0.2, scale in 1e-6f64..1.0) {
        let ns = [10usize, 30, 100, 300, 1000];
        let eps: Vec<f64> = ns.iter().map(|n| scale * (*n as f64).powf(slope)).collect();
        prop_assert!((rate_fit(&ns, &eps).unwrap() - slope).abs() < 1e-10);
    }

    #[test]
    fn harmonic_mean_lies_between_extremes(atoms in prop::collection::vec(0.1f64..10.0, 1..5), raw in prop::collection::vec(0.1f64..1.0, 5)) {
        let w: Vec<f64> = raw[..atoms.len()].to_vec();
        let total: f64 = w.iter().sum();
        let dist = GammaDistribution { atoms, weights: w.iter().map(|v| v / total).collect() };
        let g = dist.gamma_hat();
        prop_assert!(g >= dist.gamma_min() * (1.0 - 1e-12) && g <= dist.gamma_max() * (1.0 + 1e-12));
    }

    #[test]
    fn smaller_populations_are_prefixes(seed in 0u64..10_000, m in 0usize..50, n in 1usize..40, extra in 1usize..40) {
        let spec = PopulationSpec {
            gamma: GammaDistribution { atoms: vec![1.0, 2.0, 4.0], weights: vec![0.25, 0.5, 0.25] },
            xi_mean: 0.0,
            xi_std: 1.0,
        };
        let small = build_population(n, &spec, seed, m).unwrap();
        let large = build_population(n + extra, &spec, seed, m).unwrap();
        prop_assert_eq!(&small[..], &large[..n]);
    }

    #[test]
    fn overrides_round_trip_through_json(seed in any::<u64>(), steps in 1usize..200) {
        let base = ScenarioConfig::default();
        let (cfg, record) = base
            .with_overrides(&[format!("seed={seed}"), format!("grid.steps={steps}")])
            .unwrap();
        prop_assert_eq!(cfg.seed, seed);
        prop_assert_eq!(cfg.grid.steps, steps);
        prop_assert_eq!(record.len(), 2);
        let back = ScenarioConfig::from_json(&cfg.to_json()).unwrap();
        prop_assert_eq!(back.hash(), cfg.hash());
        prop_assert_eq!(back, cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn additive_liability_scales_inversely_with_gamma(gamma in 0.2f64..8.0, seed in 0u64..1000) {
        let spec = default_factor();
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let b = simulate_paths(&grid, &spec, 1, 16, 2, seed).unwrap();
        let one = Liability::Additive.terminal(&spec, &b, &[1.0, 1.0]);
        let scaled = Liability::Additive.terminal(&spec, &b, &[gamma, gamma]);
        for (u, v) in one.iter().zip(&scaled) {
            prop_assert!((u / gamma - v).abs() <= 1e-12 * (1.0 + u.abs()));
        }
    }

    #[test]
    fn path_simulation_is_a_function_of_the_seed(seed in 0u64..1000) {
        let spec = default_factor();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let a = simulate_paths(&grid, &spec, 1, 8, 3, seed).unwrap();
        let b = simulate_paths(&grid, &spec, 1, 8, 3, seed).unwrap();
        let wide = simulate_paths(&grid, &spec, 1, 12, 3, seed).unwrap();
        for m in 0..8 {
            for k in 0..=10 {
                prop_assert_eq!(a.x_at(m, k).to_bits(), b.x_at(m, k).to_bits());
                // Common paths are keyed by index, so adding paths leaves existing ones unchanged.
                prop_assert_eq!(a.x_at(m, k).to_bits(), wide.x_at(m, k).to_bits());
            }
        }
    }
}
