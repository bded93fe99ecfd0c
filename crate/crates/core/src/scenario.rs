//! Liability templates and the default market used by the examples and the runner.

use serde::{Deserialize, Serialize};

use crate::bsde::{BasisSpec, StateVar};
use crate::error::{Error, Result};
use crate::model::{FactorSpec, GammaDistribution, MarketSpec, PathBundle, SigmaSpec};

/// Terminal liability of an agent with risk aversion `gamma`, in currency.
///
/// `Additive`: `F = (int_0^T (a x^2 + b x) dt + kappa W1_T) / gamma`.
/// `CrossTerm`: the additive liability plus `epsilon (W0_T)_1 (W1_T)_1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[derive(Default)]
pub enum Liability {
    #[default]
    Additive,
    CrossTerm { epsilon: f64 },
}


impl Liability {
    pub fn validate(&self) -> Result<()> {
        match self {
            Liability::Additive => Ok(()),
            Liability::CrossTerm { epsilon } if epsilon.is_finite() => Ok(()),
            Liability::CrossTerm { epsilon } => Err(Error::InvalidParameter(format!("cross-term epsilon {epsilon}"))),
        }
    }

    pub fn epsilon(&self) -> f64 {
        match self {
            Liability::Additive => 0.0,
            Liability::CrossTerm { epsilon } => *epsilon,
        }
    }

    /// `F` from the terminal common integral and the first coordinates of `W0_T` and `W1_T`.
    pub fn value(&self, spec: &FactorSpec, gamma: f64, integral: f64, w0: f64, w1: f64) -> f64 {
        (integral + spec.kappa * w1) / gamma + self.epsilon() * w0 * w1
    }

    /// `F` for every sample of `bundle`; particle slot `j` has risk aversion `gammas[j]`.
    pub fn terminal(&self, spec: &FactorSpec, bundle: &PathBundle, gammas: &[f64]) -> Vec<f64> {
        let n = bundle.grid.steps;
        (0..bundle.samples())
            .map(|s| {
                let m = bundle.common_of(s);
                let g = gammas[s % bundle.particles];
                self.value(spec, g, bundle.integral_at(m, n), bundle.w0_at(m, n), bundle.wi_at(s, n))
            })
            .collect()
    }

    /// Regression basis. The cross term needs the common Brownian coordinate
    /// and its product with the idiosyncratic one; the additive liability
    /// separates into a common and an idiosyncratic part.
    pub fn basis(&self) -> BasisSpec {
        let mut b = BasisSpec::default();
        match self {
            Liability::Additive => b.mixed = false,
            Liability::CrossTerm { .. } => b.state.push(StateVar::Common),
        }
        b
    }

    /// Sup of `|epsilon (W0_T)_1 (W1_T)_1|` with both coordinates truncated at six standard deviations.
    pub fn cross_bound(&self, horizon: f64) -> f64 {
        36.0 * self.epsilon().abs() * horizon
    }

    /// Sup of `|F|` over the truncated factor range and `|W_T| <= 6 sqrt(T)`.
    pub fn bound(&self, spec: &FactorSpec, gamma_min: f64, horizon: f64) -> f64 {
        let common = spec.common_liability_bound(horizon) + spec.kappa.abs() * 6.0 * horizon.sqrt();
        common / gamma_min + self.cross_bound(horizon)
    }
}

/// Two stocks driven by three common noises.
pub fn default_market() -> MarketSpec {
    MarketSpec {
        n: 2,
        d0: 3,
        d: 1,
        sigma: SigmaSpec::Constant(vec![vec![0.4, 0.1, 0.0], vec![0.1, 0.3, 0.2]]),
        lambda_lo: 0.05,
        lambda_hi: 0.5,
        horizon: 1.0,
    }
}

pub fn default_factor() -> FactorSpec {
    FactorSpec { alpha: -0.5, beta: 0.1, delta: vec![0.6, 0.3, 0.4], x0: 0.2, a: -0.2, b: 0.8, kappa: 0.3 }
}

pub fn default_gamma() -> GammaDistribution {
    GammaDistribution { atoms: vec![1.0, 2.0, 4.0], weights: vec![0.25, 0.5, 0.25] }
}
