use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallness and stability diagnostics of the mean-field fixed point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionDiagnostics {
    /// Bound on `|F|` used for the smallness test.
    pub f_inf: f64,
    /// `gamma_max / 2 + gamma_hat^2 / gamma_min`.
    pub c_gamma: f64,
    /// Lipschitz constant of the driver difference.
    #[serde(rename = "C_gamma")]
    pub lipschitz: f64,
    /// `R = 2 f_inf`.
    pub radius: f64,
    /// `1 / (48 C_gamma)`.
    pub threshold: f64,
    pub smallness_ok: bool,
    /// `576 C_gamma^2 R^2`, reported only.
    pub contraction_factor: f64,
    pub empirical_ratios: Vec<f64>,
    pub y_sup: Option<f64>,
    pub bmo: Option<f64>,
}

/// `max(gamma_hat, gamma_hat^2 / (2 gamma_min), gamma_max / 2)`.
pub fn default_lipschitz(gamma_min: f64, gamma_max: f64, gamma_hat: f64) -> f64 {
    gamma_hat.max(gamma_hat * gamma_hat / (2.0 * gamma_min)).max(gamma_max / 2.0)
}

/// Evaluates the smallness condition `f_inf < 1 / (48 C_gamma)`.
pub fn smallness_report(
    f_inf: f64,
    gamma_min: f64,
    gamma_max: f64,
    gamma_hat: f64,
    lipschitz_override: Option<f64>,
) -> Result<ContractionDiagnostics> {
    for g in [gamma_min, gamma_max, gamma_hat] {
        if !(g > 0.0 && g.is_finite()) {
            return Err(Error::NonpositiveGamma(g));
        }
    }
    if !(gamma_min <= gamma_hat && gamma_hat <= gamma_max) {
        return Err(Error::InvalidParameter("gamma_hat must lie between gamma_min and gamma_max".into()));
    }
    if !(f_inf >= 0.0 && f_inf.is_finite()) {
        return Err(Error::InvalidParameter(format!("liability bound {f_inf} must be finite and nonnegative")));
    }
    let lipschitz = match lipschitz_override {
        Some(c) if !(c > 0.0 && c.is_finite()) => {
            return Err(Error::InvalidParameter(format!("C_gamma override {c} must be positive")))
        }
        Some(c) => c,
        None => default_lipschitz(gamma_min, gamma_max, gamma_hat),
    };
    let radius = 2.0 * f_inf;
    let threshold = 1.0 / (48.0 * lipschitz);
    Ok(ContractionDiagnostics {
        f_inf,
        c_gamma: gamma_max / 2.0 + gamma_hat * gamma_hat / gamma_min,
        lipschitz,
        radius,
        threshold,
        smallness_ok: f_inf < threshold,
        contraction_factor: 576.0 * lipschitz * lipschitz * radius * radius,
        empirical_ratios: Vec::new(),
        y_sup: None,
        bmo: None,
    })
}

impl ContractionDiagnostics {
    pub fn with_run(mut self, ratios: Vec<f64>, y_sup: f64, bmo: f64) -> Self {
        self.empirical_ratios = ratios;
        self.y_sup = Some(y_sup);
        self.bmo = Some(bmo);
        self
    }

    /// Every recorded ratio (they start at the second iteration) is below one.
    pub fn contracting(&self) -> bool {
        self.empirical_ratios.iter().all(|r| *r < 1.0)
    }

    /// `sup |y| <= 1.1 R` and BMO proxy `<= 1.1 R^2`; vacuous without a run.
    pub fn stable(&self) -> bool {
        let y_ok = self.y_sup.is_none_or(|y| y <= 1.1 * self.radius);
        let b_ok = self.bmo.is_none_or(|b| b <= 1.1 * self.radius * self.radius);
        y_ok && b_ok
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_liability_is_small() {
        let d = smallness_report(0.0, 1.0, 4.0, 2.0, None).unwrap();
        assert!(d.smallness_ok);
        assert_eq!(d.radius, 0.0);
    }

    #[test]
    fn unit_risk_aversion_constants() {
        let d = smallness_report(0.01, 1.0, 1.0, 1.0, None).unwrap();
        assert_eq!(d.c_gamma, 1.5);
        assert_eq!(d.lipschitz, 1.0);
        assert_eq!(d.threshold, 1.0 / 48.0);
        assert!(d.smallness_ok);
        assert!(!smallness_report(0.03, 1.0, 1.0, 1.0, None).unwrap().smallness_ok);
    }

    #[test]
    fn override_and_validation() {
        let d = smallness_report(0.0, 1.0, 4.0, 16.0 / 9.0, Some(5.0)).unwrap();
        assert_eq!(d.lipschitz, 5.0);
        assert!(smallness_report(0.0, 1.0, 4.0, 16.0 / 9.0, Some(0.0)).is_err());
        assert!(smallness_report(0.0, 0.0, 4.0, 1.0, None).is_err());
        assert!(smallness_report(0.0, 2.0, 4.0, 1.0, None).is_err());
        assert!((default_lipschitz(1.0, 4.0, 16.0 / 9.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn ratio_and_stability_flags() {
        let d = smallness_report(0.001, 1.0, 1.0, 1.0, None).unwrap();
        let run = d.clone().with_run(vec![0.4, 0.2], 0.0015, 1e-7);
        assert!(run.contracting() && run.stable());
        assert!(!d.clone().with_run(vec![1.5, 0.2], 0.0, 0.0).contracting());
        assert!(!d.with_run(vec![0.5, 1.2], 0.01, 0.0).stable());
    }
}
