use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ornstein-Uhlenbeck factor `dx = (alpha x + beta) dt + delta dW0` together
/// with the running liability `I_t = int_0^t (a x^2 + b x) ds` and the
/// idiosyncratic liability loading `kappa`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub alpha: f64,
    pub beta: f64,
    pub delta: Vec<f64>,
    pub x0: f64,
    pub a: f64,
    pub b: f64,
    #[serde(default)]
    pub kappa: f64,
}

impl FactorSpec {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.x0, self.a, self.b, self.kappa];
        if all.iter().chain(&self.delta).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("factor parameters must be finite".into()));
        }
        if self.delta.is_empty() {
            return Err(Error::DimensionMismatch("delta must have d0 >= 1 entries".into()));
        }
        if self.a > 0.0 {
            return Err(Error::InvalidParameter(format!(
                "quadratic liability coefficient must satisfy a <= 0, got {}",
                self.a
            )));
        }
        Ok(())
    }

    pub fn delta_norm_sq(&self) -> f64 {
        self.delta.iter().map(|v| v * v).sum()
    }

    /// Liability rate `a x^2 + b x`.
    pub fn running(&self, x: f64) -> f64 {
        (self.a * x + self.b) * x
    }

    /// Euler-Maruyama step.
    pub fn step(&self, x: f64, dw0: &[f64], dt: f64) -> f64 {
        let noise: f64 = self.delta.iter().zip(dw0).map(|(d, w)| d * w).sum();
        x + (self.alpha * x + self.beta) * dt + noise
    }

    /// Standard deviation used to truncate the factor range: the stationary
    /// one when `alpha < 0`, otherwise the one at the horizon.
    pub fn truncation_std(&self, horizon: f64) -> f64 {
        let v = self.delta_norm_sq();
        if self.alpha < -1e-12 {
            (v / (-2.0 * self.alpha)).sqrt()
        } else if self.alpha.abs() <= 1e-12 {
            (v * horizon).sqrt()
        } else {
            (v * ((2.0 * self.alpha * horizon).exp() - 1.0) / (2.0 * self.alpha)).sqrt()
        }
    }

    /// Range `[lo, hi]` covering the factor up to six standard deviations,
    /// including the drift of the mean.
    pub fn truncated_range(&self, horizon: f64) -> (f64, f64) {
        let s = 6.0 * self.truncation_std(horizon);
        let mut lo = self.x0;
        let mut hi = self.x0;
        let n = 64;
        for i in 0..=n {
            let m = self.mean_at(horizon * i as f64 / n as f64);
            lo = lo.min(m);
            hi = hi.max(m);
        }
        (lo - s, hi + s)
    }

    pub fn mean_at(&self, t: f64) -> f64 {
        if self.alpha.abs() < 1e-12 {
            self.x0 + self.beta * t
        } else {
            let e = (self.alpha * t).exp();
            self.x0 * e + self.beta / self.alpha * (e - 1.0)
        }
    }

    /// Sup of `|int_0^T (a x^2 + b x) dt|` over the truncated factor range.
    pub fn common_liability_bound(&self, horizon: f64) -> f64 {
        let (lo, hi) = self.truncated_range(horizon);
        let mut m = self.running(lo).abs().max(self.running(hi).abs());
        if self.a != 0.0 {
            let vertex = -self.b / (2.0 * self.a);
            if vertex > lo && vertex < hi {
                m = m.max(self.running(vertex).abs());
            }
        }
        m * horizon
    }
}
