use crate::error::Result;
use crate::model::{GammaDistribution, PathBundle};

/// Particle cloud with one replica of every idiosyncratic path per
/// risk-aversion type. Slot `l * replicas + i` has type `l`, weight
/// `w_l / replicas` and the idiosyncratic path of base slot `i`.
#[derive(Debug, Clone)]
pub struct TypeCloud {
    pub bundle: PathBundle,
    pub gammas: Vec<f64>,
    pub weights: Vec<f64>,
    /// Type of each slot, usable as regression groups.
    pub types: Vec<usize>,
}

pub fn type_cloud(base: &PathBundle, dist: &GammaDistribution) -> Result<TypeCloud> {
    dist.validate()?;
    let r = base.particles;
    let bundle = base.replicate_particles(dist.atoms.len())?;
    let types: Vec<usize> = (0..bundle.particles).map(|j| j / r).collect();
    let gammas = types.iter().map(|l| dist.atoms[*l]).collect();
    let total: f64 = dist.weights.iter().sum();
    let weights = types.iter().map(|l| dist.weights[*l] / total / r as f64).collect();
    Ok(TypeCloud { bundle, gammas, weights, types })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate_paths, FactorSpec, TimeGrid};

    #[test]
    fn cloud_layout_and_weights() {
        let spec = FactorSpec { alpha: -0.5, beta: 0.0, delta: vec![0.5], x0: 0.0, a: 0.0, b: 0.3, kappa: 0.0 };
        let base = simulate_paths(&TimeGrid::new(1.0, 3).unwrap(), &spec, 1, 2, 2, 4).unwrap();
        let dist = GammaDistribution::new(vec![1.0, 2.0, 4.0], vec![0.25, 0.5, 0.25]).unwrap();
        let c = type_cloud(&base, &dist).unwrap();
        assert_eq!(c.types, vec![0, 0, 1, 1, 2, 2]);
        assert_eq!(c.gammas, vec![1.0, 1.0, 2.0, 2.0, 4.0, 4.0]);
        assert!((c.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(c.weights[2], 0.25);
        assert_eq!(c.bundle.dwi_path(6 + 5), base.dwi_path(2 + 1));
    }
}
