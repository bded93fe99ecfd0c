//! Coefficients `A, B, C` of the quadratic Cole-Hopf ansatz
//! `y = A(t) x^2 + B(t) x + C(t) + I_t`, solving
//!
//! ```text
//! A' + 2|delta|^2 A^2 + 2 alpha A + a = 0
//! B' + (alpha + 2|delta|^2 A) B + 2 beta A + b = 0
//! C' + |delta|^2 A + (beta + |delta|^2 B / 2) B = 0
//! ```
//! with `A(T) = B(T) = C(T) = 0`.

use serde::{Deserialize, Serialize};

use super::quadrature::cumulative_simpson;
use crate::error::{Error, Result};
use crate::model::{FactorSpec, TimeGrid};

/// Minimum number of quadrature intervals per unit of the time horizon.
const FINE_PER_UNIT: f64 = 2000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiccatiSolution {
    pub grid: TimeGrid,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub rho_plus: f64,
    pub rho_minus: f64,
}

#[derive(Debug, Clone, Copy)]
struct Coeffs {
    alpha: f64,
    beta: f64,
    v: f64,
    a: f64,
    b: f64,
}

impl Coeffs {
    fn from_spec(spec: &FactorSpec) -> Self {
        Self { alpha: spec.alpha, beta: spec.beta, v: spec.delta_norm_sq(), a: spec.a, b: spec.b }
    }

    fn rhs(&self, y: [f64; 3]) -> [f64; 3] {
        let [a, b, _] = y;
        [
            -(2.0 * self.v * a * a + 2.0 * self.alpha * a + self.a),
            -((self.alpha + 2.0 * self.v * a) * b + 2.0 * self.beta * a + self.b),
            -(self.v * a + (self.beta + 0.5 * self.v * b) * b),
        ]
    }
}

/// Roots `rho_pm = alpha +- sqrt(alpha^2 - 2 a |delta|^2)`.
pub fn riccati_roots(spec: &FactorSpec) -> Result<(f64, f64)> {
    let disc = spec.alpha * spec.alpha - 2.0 * spec.a * spec.delta_norm_sq();
    if disc < 0.0 {
        return Err(Error::ComplexRho { discriminant: disc });
    }
    let s = disc.sqrt();
    Ok((spec.alpha + s, spec.alpha - s))
}

/// Closed form of `A` at time to maturity `tau`.
///
/// Written as `-a r / (1 + rho_plus r)` with `r = (e^{-D tau} - 1) / D`,
/// `D = rho_plus - rho_minus`, which stays finite for large `D tau` and has
/// the series limit `r -> -tau` as `D -> 0`.
pub fn a_closed_form(a: f64, rho_plus: f64, rho_minus: f64, tau: f64) -> f64 {
    if a == 0.0 {
        return 0.0;
    }
    let d = rho_plus - rho_minus;
    let x = d * tau;
    let r = if x.abs() > 1e-8 {
        (-x).exp_m1() / d
    } else {
        -tau * (1.0 - x / 2.0 + x * x / 6.0)
    };
    -a * r / (1.0 + rho_plus * r)
}

fn validate_coefficients(spec: &FactorSpec) -> Result<(f64, f64)> {
    let roots = riccati_roots(spec)?;
    spec.validate()?;
    Ok(roots)
}

/// Closed-form `A` and quadrature of the integral representations of `B`
/// and `C` on a refinement of `grid`.
pub fn riccati_closed_form(spec: &FactorSpec, grid: &TimeGrid) -> Result<RiccatiSolution> {
    let (rho_plus, rho_minus) = validate_coefficients(spec)?;
    let co = Coeffs::from_spec(spec);
    let horizon = grid.horizon;
    let mut refine = ((FINE_PER_UNIT * horizon) / grid.steps as f64).ceil() as usize;
    refine = refine.max(2);
    if refine % 2 == 1 {
        refine += 1;
    }
    let n = grid.steps * refine;
    let h = horizon / n as f64;
    let s: Vec<f64> = (0..=n).map(|i| if i == n { horizon } else { i as f64 * h }).collect();
    let a: Vec<f64> = s.iter().map(|&t| a_closed_form(co.a, rho_plus, rho_minus, horizon - t)).collect();

    // Phi(s) = int_0^s (alpha + 2|delta|^2 A(u)) du
    let phi_rate: Vec<f64> = a.iter().map(|&av| co.alpha + 2.0 * co.v * av).collect();
    let phi = cumulative_simpson(&phi_rate, h);
    let h_int: Vec<f64> = (0..=n)
        .map(|i| phi[i].exp() * (2.0 * co.beta * a[i] + co.b))
        .collect();
    let h_cum = cumulative_simpson(&h_int, h);
    let b: Vec<f64> = (0..=n)
        .map(|i| if i == n { 0.0 } else { (-phi[i]).exp() * (h_cum[n] - h_cum[i]) })
        .collect();
    let c_rate: Vec<f64> = (0..=n)
        .map(|i| co.v * a[i] + (co.beta + 0.5 * co.v * b[i]) * b[i])
        .collect();
    let c_cum = cumulative_simpson(&c_rate, h);
    let pick = |v: &[f64]| (0..=grid.steps).map(|k| v[k * refine]).collect::<Vec<_>>();
    let c: Vec<f64> = (0..=grid.steps)
        .map(|k| if k == grid.steps { 0.0 } else { c_cum[n] - c_cum[k * refine] })
        .collect();
    Ok(RiccatiSolution { grid: *grid, a: pick(&a), b: pick(&b), c, rho_plus, rho_minus })
}

/// Backward RK4 integration of the three ODEs with `substeps` steps per grid interval.
pub fn riccati_ode(spec: &FactorSpec, grid: &TimeGrid, substeps: usize) -> Result<RiccatiSolution> {
    let (rho_plus, rho_minus) = validate_coefficients(spec)?;
    let co = Coeffs::from_spec(spec);
    let substeps = substeps.max(1);
    let h = -grid.dt() / substeps as f64;
    let mut y = [0.0; 3];
    let mut out = vec![[0.0; 3]; grid.steps + 1];
    out[grid.steps] = y;
    let add = |y: [f64; 3], k: [f64; 3], s: f64| [y[0] + s * k[0], y[1] + s * k[1], y[2] + s * k[2]];
    for k in (0..grid.steps).rev() {
        for _ in 0..substeps {
            let k1 = co.rhs(y);
            let k2 = co.rhs(add(y, k1, h / 2.0));
            let k3 = co.rhs(add(y, k2, h / 2.0));
            let k4 = co.rhs(add(y, k3, h));
            for i in 0..3 {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        out[k] = y;
    }
    Ok(RiccatiSolution {
        grid: *grid,
        a: out.iter().map(|v| v[0]).collect(),
        b: out.iter().map(|v| v[1]).collect(),
        c: out.iter().map(|v| v[2]).collect(),
        rho_plus,
        rho_minus,
    })
}

impl RiccatiSolution {
    /// `y0(t_k, x) = A x^2 + B x + C` (without the running integral).
    pub fn value(&self, k: usize, x: f64) -> f64 {
        (self.a[k] * x + self.b[k]) * x + self.c[k]
    }

    /// `2 A x + B`, the loading of the common integrand on `delta`.
    pub fn slope(&self, k: usize, x: f64) -> f64 {
        2.0 * self.a[k] * x + self.b[k]
    }

    pub fn max_abs_diff(&self, other: &RiccatiSolution) -> f64 {
        let d = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        d(&self.a, &other.a).max(d(&self.b, &other.b)).max(d(&self.c, &other.c))
    }

    /// Terminal values, all zero by construction.
    pub fn terminal_residuals(&self) -> [f64; 3] {
        let n = self.grid.steps;
        [self.a[n], self.b[n], self.c[n]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(alpha: f64, beta: f64, delta: f64, a: f64, b: f64) -> FactorSpec {
        FactorSpec { alpha, beta, delta: vec![delta], x0: 0.0, a, b, kappa: 0.0 }
    }

    #[test]
    fn linear_case_has_exponential_b() {
        let s = spec(-0.7, 0.2, 0.5, 0.0, 1.3);
        let grid = TimeGrid::new(2.0, 40).unwrap();
        let sol = riccati_closed_form(&s, &grid).unwrap();
        for k in 0..=40 {
            let tau = 2.0 - grid.t(k);
            let expected = 1.3 / -0.7 * ((-0.7 * tau).exp() - 1.0);
            assert_eq!(sol.a[k], 0.0);
            assert!((sol.b[k] - expected).abs() < 1e-11, "k={k}: {} vs {expected}", sol.b[k]);
        }
    }

    #[test]
    fn zero_drift_zero_quadratic_gives_linear_b() {
        let s = spec(0.0, 0.0, 0.5, 0.0, 1.0);
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let sol = riccati_closed_form(&s, &grid).unwrap();
        assert!((sol.b[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn a_without_noise_matches_linear_ode() {
        // With delta = 0 the A equation is linear: A = a (e^{2 alpha tau} - 1) / (2 alpha).
        let (alpha, a) = (-0.4, -0.9);
        let (rp, rm) = riccati_roots(&spec(alpha, 0.0, 0.0, a, 0.0)).unwrap();
        for tau in [0.1, 0.5, 1.0, 3.0] {
            let expected = a * ((2.0 * alpha * tau).exp() - 1.0) / (2.0 * alpha);
            assert!((a_closed_form(a, rp, rm, tau) - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn degenerate_roots_use_series_limit() {
        // alpha = 0, delta = 0: A = a tau.
        let (rp, rm) = riccati_roots(&spec(0.0, 0.0, 0.0, -0.3, 0.0)).unwrap();
        assert!((a_closed_form(-0.3, rp, rm, 2.0) + 0.6).abs() < 1e-15);
    }

    #[test]
    fn complex_roots_rejected_before_sign_check() {
        let s = spec(0.1, 0.0, 1.0, 0.5, 0.0);
        assert!(matches!(riccati_closed_form(&s, &TimeGrid::new(1.0, 4).unwrap()), Err(Error::ComplexRho { .. })));
        let s = spec(2.0, 0.0, 1.0, 0.5, 0.0);
        assert!(matches!(riccati_closed_form(&s, &TimeGrid::new(1.0, 4).unwrap()), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn closed_form_matches_rk4() {
        let s = spec(-0.5, 0.1, 0.78, -0.2, 0.8);
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let cf = riccati_closed_form(&s, &grid).unwrap();
        let ode = riccati_ode(&s, &grid, 200).unwrap();
        assert!(cf.max_abs_diff(&ode) < 1e-10, "diff {}", cf.max_abs_diff(&ode));
        assert_eq!(cf.terminal_residuals(), [0.0, 0.0, 0.0]);
    }
}
