use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Finite-type distribution of risk aversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaDistribution {
    pub atoms: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Per-agent parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentParams {
    pub gamma: f64,
    pub xi: f64,
    /// Index of `gamma` among the atoms of the distribution it was drawn from.
    pub type_index: usize,
}

impl GammaDistribution {
    pub fn new(atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let d = Self { atoms, weights };
        d.validate()?;
        Ok(d)
    }

    pub fn point(gamma: f64) -> Result<Self> {
        Self::new(vec![gamma], vec![1.0])
    }

    pub fn validate(&self) -> Result<()> {
        if self.atoms.is_empty() || self.atoms.len() != self.weights.len() {
            return Err(Error::InvalidParameter(
                "gamma distribution needs matching non-empty atoms and weights".into(),
            ));
        }
        if let Some(&g) = self.atoms.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
            return Err(Error::NonpositiveGamma(g));
        }
        if self.weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidParameter("gamma weights must be positive".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("gamma weights sum to {total}, expected 1")));
        }
        Ok(())
    }

    /// Harmonic mean `1 / E[1 / gamma]`.
    pub fn gamma_hat(&self) -> f64 {
        1.0 / self.atoms.iter().zip(&self.weights).map(|(g, w)| w / g).sum::<f64>()
    }

    pub fn gamma_min(&self) -> f64 {
        self.atoms.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn gamma_max(&self) -> f64 {
        self.atoms.iter().copied().fold(0.0, f64::max)
    }

    /// Draws a type index with the distribution weights.
    pub fn sample_type<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        self.weights.len() - 1
    }

    /// Deterministic allocation of `k` particles to types in proportion to
    /// the weights. Every `k * weight` must be an integer.
    pub fn stratified_types(&self, k: usize) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(k);
        for (i, w) in self.weights.iter().enumerate() {
            let c = w * k as f64;
            if (c - c.round()).abs() > 1e-9 {
                return Err(Error::InvalidParameter(format!(
                    "particle count {k} times weight {w} is not an integer"
                )));
            }
            out.extend(std::iter::repeat_n(i, c.round() as usize));
        }
        if out.len() != k {
            return Err(Error::InvalidParameter(format!(
                "stratified allocation produced {} particles, expected {k}",
                out.len()
            )));
        }
        Ok(out)
    }
}

/// Harmonic mean of the agents' risk aversions.
pub fn gamma_hat(agents: &[AgentParams]) -> Result<f64> {
    if agents.is_empty() {
        return Err(Error::InvalidParameter("empty population".into()));
    }
    let mut s = 0.0;
    for a in agents {
        if !(a.gamma > 0.0 && a.gamma.is_finite()) {
            return Err(Error::NonpositiveGamma(a.gamma));
        }
        s += 1.0 / a.gamma;
    }
    Ok(agents.len() as f64 / s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agents(gs: &[f64]) -> Vec<AgentParams> {
        gs.iter().map(|&gamma| AgentParams { gamma, xi: 0.0, type_index: 0 }).collect()
    }

    #[test]
    fn harmonic_mean_of_point_mass() {
        assert!((gamma_hat(&agents(&[2.0, 2.0, 2.0])).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn harmonic_mean_of_one_and_three() {
        assert!((gamma_hat(&agents(&[1.0, 3.0])).unwrap() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn nonpositive_gamma_rejected() {
        assert!(matches!(gamma_hat(&agents(&[1.0, 0.0])), Err(Error::NonpositiveGamma(_))));
        assert!(GammaDistribution::new(vec![-1.0], vec![1.0]).is_err());
    }

    #[test]
    fn distribution_gamma_hat_matches_sample_formula() {
        let d = GammaDistribution::new(vec![1.0, 2.0, 4.0], vec![0.25, 0.5, 0.25]).unwrap();
        let types = d.stratified_types(8).unwrap();
        let sample: Vec<_> = types
            .iter()
            .map(|&i| AgentParams { gamma: d.atoms[i], xi: 0.0, type_index: i })
            .collect();
        assert!((gamma_hat(&sample).unwrap() - d.gamma_hat()).abs() < 1e-14);
        assert!(d.stratified_types(6).is_err());
    }
}
