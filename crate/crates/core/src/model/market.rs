//! Volatility matrix, orthogonal projection onto its row space and the
//! market price of risk.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative pivot threshold below which `sigma sigma^T` counts as singular.
const PIVOT_REL: f64 = 1e-12;

/// Volatility input: one matrix for the whole horizon, or a table of
/// matrices on a uniform partition of `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaSpec {
    Constant(Vec<Vec<f64>>),
    Table(Vec<Vec<Vec<f64>>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSpec {
    /// Number of stocks.
    pub n: usize,
    /// Dimension of the common noise.
    pub d0: usize,
    /// Dimension of the idiosyncratic noise.
    pub d: usize,
    pub sigma: SigmaSpec,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub pieces: usize,
}

/// Precomputed projection data for one constant piece of `sigma`.
#[derive(Debug, Clone)]
pub struct Projector {
    sigma: DMatrix<f64>,
    /// Lower Cholesky factor of `sigma sigma^T`.
    chol: DMatrix<f64>,
    /// `sigma^T (sigma sigma^T)^{-1} sigma`, symmetric d0 x d0.
    proj: DMatrix<f64>,
}

/// Validated market with one projector per constant piece of `sigma`.
#[derive(Debug, Clone)]
pub struct Market {
    pub spec: MarketSpec,
    pieces: Vec<Projector>,
}

fn to_matrix(rows: &[Vec<f64>], n: usize, d0: usize) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != d0) {
        return Err(Error::DimensionMismatch(format!(
            "sigma must be {n} x {d0}, got {} rows",
            rows.len()
        )));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("sigma has non-finite entries".into()));
    }
    Ok(DMatrix::from_fn(n, d0, |i, j| rows[i][j]))
}

/// Cholesky factor with a relative pivot check; fails with `SingularSigma`.
fn cholesky_lower(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > PIVOT_REL * scale) || scale == 0.0 {
            return Err(Error::SingularSigma(format!(
                "Cholesky pivot {diag:e} at column {j} (scale {scale:e})"
            )));
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

fn chol_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut y = b.clone();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

impl Projector {
    pub fn new(sigma: DMatrix<f64>) -> Result<Self> {
        let gram = &sigma * sigma.transpose();
        let chol = cholesky_lower(&gram)?;
        let d0 = sigma.ncols();
        let mut proj = DMatrix::<f64>::zeros(d0, d0);
        // Column j of the projector is sigma^T (sigma sigma^T)^{-1} sigma e_j.
        for j in 0..d0 {
            let rhs = sigma.column(j).clone_owned();
            let sol = chol_solve(&chol, &rhs);
            let col = sigma.transpose() * sol;
            proj.set_column(j, &col);
        }
        // Symmetrize away rounding so that z P is an exact orthogonal projection in floating point terms.
        let proj = (&proj + proj.transpose()) * 0.5;
        Ok(Self { sigma, chol, proj })
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.proj
    }

    /// Splits a row vector into its parts in the row space of sigma and its complement.
    pub fn split(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let par = self.parallel(z);
        let perp = z.iter().zip(&par).map(|(a, b)| a - b).collect();
        (par, perp)
    }

    pub fn parallel(&self, z: &[f64]) -> Vec<f64> {
        let d0 = self.proj.nrows();
        debug_assert_eq!(z.len(), d0);
        (0..d0)
            .map(|j| (0..d0).map(|i| z[i] * self.proj[(i, j)]).sum())
            .collect()
    }

    /// `theta = sigma^T (sigma sigma^T)^{-1} mu`.
    pub fn theta_from_mu(&self, mu: &[f64]) -> Vec<f64> {
        let rhs = DVector::from_column_slice(mu);
        let sol = chol_solve(&self.chol, &rhs);
        (self.sigma.transpose() * sol).iter().copied().collect()
    }

    /// `mu = sigma theta`.
    pub fn mu_from_theta(&self, theta: &[f64]) -> Vec<f64> {
        let t = DVector::from_column_slice(theta);
        (&self.sigma * t).iter().copied().collect()
    }

    /// Portfolio in shares of wealth per stock: `pi = (sigma sigma^T)^{-1} sigma p^T`.
    pub fn pi_from_p(&self, p: &[f64]) -> Vec<f64> {
        let sp = &self.sigma * DVector::from_column_slice(p);
        chol_solve(&self.chol, &sp).iter().copied().collect()
    }

    /// Inverse of `pi_from_p` on the row space: `p = pi^T sigma`.
    pub fn p_from_pi(&self, pi: &[f64]) -> Vec<f64> {
        (self.sigma.transpose() * DVector::from_column_slice(pi))
            .iter()
            .copied()
            .collect()
    }

    /// Largest eigenvalue of `(sigma sigma^T)^{-1}`.
    pub fn inverse_gram_norm(&self) -> f64 {
        let gram = &self.sigma * self.sigma.transpose();
        let eig = SymmetricEigen::new(gram).eigenvalues;
        1.0 / eig.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

impl MarketSpec {
    pub fn piece_matrices(&self) -> Result<Vec<DMatrix<f64>>> {
        match &self.sigma {
            SigmaSpec::Constant(rows) => Ok(vec![to_matrix(rows, self.n, self.d0)?]),
            SigmaSpec::Table(table) => {
                if table.is_empty() {
                    return Err(Error::DimensionMismatch("empty sigma table".into()));
                }
                table.iter().map(|rows| to_matrix(rows, self.n, self.d0)).collect()
            }
        }
    }
}

/// Checks dimensions and the ellipticity bounds `lambda_lo I <= sigma sigma^T <= lambda_hi I`.
pub fn validate_market(spec: &MarketSpec) -> Result<ValidationReport> {
    if spec.n == 0 || spec.d0 == 0 || spec.d == 0 {
        return Err(Error::DimensionMismatch("n, d0 and d must be positive".into()));
    }
    if spec.n > spec.d0 {
        return Err(Error::DimensionMismatch(format!(
            "need n <= d0, got n = {} and d0 = {}",
            spec.n, spec.d0
        )));
    }
    if !(spec.lambda_lo > 0.0 && spec.lambda_hi >= spec.lambda_lo) {
        return Err(Error::InvalidParameter(format!(
            "eigenvalue bounds must satisfy 0 < lo <= hi, got [{}, {}]",
            spec.lambda_lo, spec.lambda_hi
        )));
    }
    if !(spec.horizon > 0.0) {
        return Err(Error::InvalidParameter("horizon must be positive".into()));
    }
    let pieces = spec.piece_matrices()?;
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for s in &pieces {
        let eig = SymmetricEigen::new(s * s.transpose()).eigenvalues;
        let emin = eig.iter().copied().fold(f64::INFINITY, f64::min);
        let emax = eig.iter().copied().fold(0.0, f64::max);
        if emin < PIVOT_REL * emax.max(spec.lambda_hi) {
            return Err(Error::SingularSigma(format!("smallest eigenvalue {emin:e}")));
        }
        lo = lo.min(emin);
        hi = hi.max(emax);
    }
    if lo < spec.lambda_lo {
        return Err(Error::SingularSigma(format!(
            "smallest eigenvalue {lo:e} below the lower bound {:e}",
            spec.lambda_lo
        )));
    }
    if hi > spec.lambda_hi {
        return Err(Error::InvalidParameter(format!(
            "largest eigenvalue {hi:e} above the upper bound {:e}",
            spec.lambda_hi
        )));
    }
    Ok(ValidationReport { min_eigenvalue: lo, max_eigenvalue: hi, pieces: pieces.len() })
}

impl Market {
    pub fn new(spec: MarketSpec) -> Result<Self> {
        validate_market(&spec)?;
        let pieces = spec
            .piece_matrices()?
            .into_iter()
            .map(Projector::new)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { spec, pieces })
    }

    pub fn is_constant(&self) -> bool {
        self.pieces.len() == 1
    }

    /// Projector valid on the interval starting at time `t`.
    pub fn at_time(&self, t: f64) -> &Projector {
        let m = self.pieces.len();
        if m == 1 {
            return &self.pieces[0];
        }
        let idx = ((t / self.spec.horizon) * m as f64).floor().max(0.0) as usize;
        &self.pieces[idx.min(m - 1)]
    }

    /// Largest `|(sigma sigma^T)^{-1}|` over all pieces.
    pub fn inverse_gram_bound(&self) -> f64 {
        self.pieces.iter().map(Projector::inverse_gram_norm).fold(0.0, f64::max)
    }
}

/// Orthogonal decomposition of a row vector `z` along the row space of `sigma`.
pub fn project(z: &[f64], sigma: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let d0 = z.len();
    let m = to_matrix(sigma, sigma.len(), d0)?;
    Ok(Projector::new(m)?.split(z))
}

/// `theta = sigma^T (sigma sigma^T)^{-1} mu`.
pub fn risk_premium_from_mu(mu: &[f64], sigma: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = sigma.len();
    if mu.len() != n {
        return Err(Error::DimensionMismatch(format!("mu has {} entries, sigma has {n} rows", mu.len())));
    }
    let d0 = sigma.first().map_or(0, Vec::len);
    let m = to_matrix(sigma, n, d0)?;
    Ok(Projector::new(m)?.theta_from_mu(mu))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(sigma: Vec<Vec<f64>>) -> MarketSpec {
        let n = sigma.len();
        let d0 = sigma[0].len();
        MarketSpec {
            n,
            d0,
            d: 1,
            sigma: SigmaSpec::Constant(sigma),
            lambda_lo: 1e-3,
            lambda_hi: 10.0,
            horizon: 1.0,
        }
    }

    #[test]
    fn identity_sigma_projects_everything_in() {
        let (par, perp) = project(&[0.3, -0.4], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!((par[0] - 0.3).abs() < 1e-15 && (par[1] + 0.4).abs() < 1e-15);
        assert!(perp.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn single_row_sigma_keeps_first_coordinate() {
        let (par, perp) = project(&[1.0, 2.0], &[vec![1.0, 0.0]]).unwrap();
        assert_eq!(par, vec![1.0, 0.0]);
        assert_eq!(perp, vec![0.0, 2.0]);
    }

    #[test]
    fn theta_of_scalar_market() {
        let theta = risk_premium_from_mu(&[0.1], &[vec![0.2]]).unwrap();
        assert!((theta[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn rank_deficient_sigma_is_rejected() {
        let err = validate_market(&spec(vec![vec![1.0, 0.0], vec![0.0, 0.0]])).unwrap_err();
        assert!(matches!(err, Error::SingularSigma(_)), "{err}");
    }

    #[test]
    fn more_stocks_than_noises_is_rejected() {
        let s = spec(vec![vec![1.0], vec![2.0]]);
        assert!(matches!(validate_market(&s), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn pi_and_p_are_inverse_on_row_space() {
        let m = Market::new(spec(vec![vec![0.4, 0.1, 0.0], vec![0.1, 0.3, 0.2]])).unwrap();
        let pr = m.at_time(0.0);
        let pi = [0.7, -1.3];
        let back = pr.pi_from_p(&pr.p_from_pi(&pi));
        for (a, b) in pi.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sigma_table_selects_piece_by_time() {
        let mut s = spec(vec![vec![1.0]]);
        s.sigma = SigmaSpec::Table(vec![vec![vec![1.0]], vec![vec![2.0]]]);
        let m = Market::new(s).unwrap();
        assert_eq!(m.at_time(0.2).sigma()[(0, 0)], 1.0);
        assert_eq!(m.at_time(0.7).sigma()[(0, 0)], 2.0);
        assert_eq!(m.at_time(1.0).sigma()[(0, 0)], 2.0);
    }
}
