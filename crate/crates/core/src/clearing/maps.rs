use crate::bsde::{BsdeSolution, ConditionalExpectation, IntegrandMap, PolyBasis, RegressionEstimator, StateVar};
use crate::error::{Error, Result};

/// Per-type integrand maps of a solved cloud: `Z_k = map[k][type](phi(state_k))`.
#[derive(Debug, Clone)]
pub struct SolutionMaps {
    pub basis: PolyBasis,
    pub steps: usize,
    pub d0: usize,
    pub d: usize,
    /// `maps[k][type]`.
    pub maps: Vec<Vec<IntegrandMap>>,
}

/// State of one agent at one step, in the variables of the regression basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub x: f64,
    pub integral: f64,
    pub w_idio: f64,
    pub w_common: f64,
}

impl SolutionMaps {
    /// Refits the integrands of `sol` at every step; regression groups are the types.
    pub fn fit(est: &RegressionEstimator, sol: &BsdeSolution) -> Result<Self> {
        if est.samples() != sol.samples {
            return Err(Error::DimensionMismatch("estimator and solution disagree on samples".into()));
        }
        let n = sol.samples;
        let mut maps = Vec::with_capacity(sol.steps);
        for k in 0..sol.steps {
            let next: Vec<f64> = (0..n).map(|s| sol.y_at(s, k + 1)).collect();
            let mean = est.expect(k, &next)?;
            let resid: Vec<f64> = next.iter().zip(&mean).map(|(a, b)| a - b).collect();
            maps.push(est.integrand_maps(k, &resid));
        }
        Ok(Self { basis: est.basis().clone(), steps: sol.steps, d0: sol.d0, d: sol.d, maps })
    }

    pub fn types(&self) -> usize {
        self.maps.first().map_or(0, Vec::len)
    }

    fn state_vec(&self, st: &AgentState) -> Vec<f64> {
        self.basis
            .spec
            .state
            .iter()
            .map(|v| match v {
                StateVar::Factor => st.x,
                StateVar::Integral => st.integral,
                StateVar::Idio => st.w_idio,
                StateVar::Common => st.w_common,
            })
            .collect()
    }

    /// `(Z0, Z1)` of an agent of type `ty` at step `k`.
    pub fn integrand(&self, k: usize, ty: usize, st: &AgentState) -> Vec<f64> {
        let phi = self.basis.eval_vec(&self.state_vec(st));
        let mut out = vec![0.0; self.d0 + self.d];
        self.maps[k][ty].eval(&phi, &mut out);
        out
    }

    /// Integrand averaged over the idiosyncratic coordinate `W1 ~ N(0, var)`.
    pub fn idio_mean(&self, k: usize, ty: usize, st: &AgentState, var: f64) -> Vec<f64> {
        let phi = self.basis.eval_idio_mean(&self.state_vec(st), var);
        let mut out = vec![0.0; self.d0 + self.d];
        self.maps[k][ty].eval(&phi, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsde::{backward_pass, BasisSpec};
    use crate::model::{simulate_paths, FactorSpec, TimeGrid};

    #[test]
    fn maps_reproduce_solver_integrands_and_idio_average() {
        let spec = FactorSpec { alpha: -0.5, beta: 0.0, delta: vec![0.5], x0: 0.1, a: 0.0, b: 0.3, kappa: 0.0 };
        let grid = TimeGrid::new(1.0, 5).unwrap();
        let b = simulate_paths(&grid, &spec, 1, 400, 2, 3).unwrap();
        let est = RegressionEstimator::new(&b, BasisSpec::default(), &[0, 1], 1e-8).unwrap();
        let terminal: Vec<f64> = (0..b.samples())
            .map(|s| (1.0 + (s % 2) as f64) * (b.x_at(b.common_of(s), 5) + 0.4 * b.wi_at(s, 5)))
            .collect();
        let sol = backward_pass(&est, &b, &terminal, &vec![0.0; b.samples() * 5]).unwrap();
        let maps = SolutionMaps::fit(&est, &sol).unwrap();
        assert_eq!(maps.types(), 2);
        for s in [0, 1, 77, 600] {
            let m = b.common_of(s);
            let st = AgentState { x: b.x_at(m, 2), integral: b.integral_at(m, 2), w_idio: b.wi_at(s, 2), w_common: 0.0 };
            let z = maps.integrand(2, s % 2, &st);
            assert!((z[0] - sol.z0_at(s, 2)[0]).abs() < 1e-12);
            assert!((z[1] - sol.z1_at(s, 2)[0]).abs() < 1e-12);
            // Three-point Gauss-Hermite is exact for quadratics in W1.
            let t = grid.t(2);
            let h = (3.0 * t).sqrt();
            let at = |w: f64| maps.integrand(2, s % 2, &AgentState { w_idio: w, ..st });
            let (lo, mid, hi) = (at(-h), at(0.0), at(h));
            let avg = maps.idio_mean(2, s % 2, &st, t);
            for c in 0..2 {
                let gh = (lo[c] + hi[c]) / 6.0 + 2.0 * mid[c] / 3.0;
                assert!((avg[c] - gh).abs() < 1e-12);
            }
        }
    }
}
