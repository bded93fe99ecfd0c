//! Conditional expectations on simulated samples.
//!
//! [`RegressionEstimator`] projects onto polynomial features of the state, one
//! least-squares fit per step and sample group. Integrands are estimated by a
//! joint regression of the one-step residual on `features x dW` together with
//! second-order Hermite terms of the increments, which absorbs the parts of the
//! residual orthogonal to the first-order chaos instead of leaving them as noise.
//!
//! [`HistoryEstimator`] averages over samples with identical increment
//! histories, which is exact on recombining-free trees.

use std::collections::HashMap;

use rayon::prelude::*;

use super::basis::{BasisSpec, PolyBasis};
use crate::error::{Error, Result};
use crate::model::PathBundle;

const CHUNK: usize = 512;
const REFINE: usize = 2;

pub trait ConditionalExpectation: Sync {
    fn samples(&self) -> usize;

    /// `E[target | F_step]` at every sample.
    fn expect(&self, step: usize, target: &[f64]) -> Result<Vec<f64>>;

    /// Integrands of `resid` (an `F_{step+1}` quantity with zero conditional
    /// mean) against the increments `(dW0, dW1)` over `[t_step, t_{step+1}]`,
    /// laid out as `[s * (d0 + d) + c]`.
    fn integrands(&self, step: usize, resid: &[f64]) -> Result<Vec<f64>>;
}

/// Least-squares fit with column scaling, ridge and dropping of redundant columns.
#[derive(Debug, Clone)]
struct Fit {
    p: usize,
    keep: Vec<usize>,
    scale: Vec<f64>,
    /// Lower Cholesky factor of the scaled, kept, ridged Gram matrix, row-major with stride `p`.
    chol: Vec<f64>,
    /// Scaled Gram matrix of the kept columns without ridge, `q x q`.
    gram: Vec<f64>,
}

impl Fit {
    fn build<F>(rows: &[usize], p: usize, ridge: f64, step: usize, row: F) -> Result<Fit>
    where
        F: Fn(usize, &mut [f64]) + Sync,
    {
        let partial: Vec<Vec<f64>> = rows
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut g = vec![0.0; p * p];
                let mut r = vec![0.0; p];
                for &s in chunk {
                    row(s, &mut r);
                    for i in 0..p {
                        let ri = r[i];
                        if ri == 0.0 {
                            continue;
                        }
                        let gi = &mut g[i * p..i * p + i + 1];
                        for (gij, rj) in gi.iter_mut().zip(&r[..=i]) {
                            *gij += ri * rj;
                        }
                    }
                }
                g
            })
            .collect();
        let mut gram = vec![0.0; p * p];
        for g in &partial {
            for (a, b) in gram.iter_mut().zip(g) {
                *a += b;
            }
        }
        let diag_max = (0..p).map(|i| gram[i * p + i]).fold(0.0, f64::max);
        let threshold = (10.0 * ridge).max(1e-10);
        let mut keep: Vec<usize> = Vec::new();
        let mut scale: Vec<f64> = Vec::new();
        let mut chol: Vec<f64> = Vec::new();
        for j in 0..p {
            let gjj = gram[j * p + j];
            if !(gjj > 1e-300 && gjj > 1e-24 * diag_max) {
                continue;
            }
            let sj = gjj.sqrt();
            let q = keep.len();
            // Row q of the factor: solve L[0..q, 0..q] l = C[keep, j].
            let mut l = vec![0.0; q];
            for a in 0..q {
                let i = keep[a];
                let cij = gram[j * p + i] / (scale[a] * sj);
                let mut v = cij;
                for b in 0..a {
                    v -= chol[a * p + b] * l[b];
                }
                l[a] = v / chol[a * p + a];
            }
            let pivot = 1.0 + ridge - l.iter().map(|v| v * v).sum::<f64>();
            if pivot < threshold {
                continue;
            }
            keep.push(j);
            scale.push(sj);
            let row_start = q * p;
            if chol.len() < row_start + p {
                chol.resize(row_start + p, 0.0);
            }
            chol[row_start..row_start + q].copy_from_slice(&l);
            chol[row_start + q] = pivot.sqrt();
        }
        if keep.is_empty() {
            return Err(Error::RegressionRankDeficient { step, detail: "no usable regressor".into() });
        }
        if rows.len() < keep.len() {
            return Err(Error::RegressionRankDeficient {
                step,
                detail: format!("{} samples for {} regressors", rows.len(), keep.len()),
            });
        }
        let q = keep.len();
        let mut kept_gram = vec![0.0; q * q];
        for a in 0..q {
            for b in 0..=a {
                let (i, j) = (keep[a], keep[b]);
                let v = gram[i * p + j] / (scale[a] * scale[b]);
                kept_gram[a * q + b] = v;
                kept_gram[b * q + a] = v;
            }
        }
        Ok(Fit { p, keep, scale, chol, gram: kept_gram })
    }

    fn chol_solve(&self, v: &mut [f64]) {
        let q = self.keep.len();
        let p = self.p;
        for i in 0..q {
            let mut s = v[i];
            for k in 0..i {
                s -= self.chol[i * p + k] * v[k];
            }
            v[i] = s / self.chol[i * p + i];
        }
        for i in (0..q).rev() {
            let mut s = v[i];
            for k in (i + 1)..q {
                s -= self.chol[k * p + i] * v[k];
            }
            v[i] = s / self.chol[i * p + i];
        }
    }

    /// Raw coefficients (zero for dropped columns) from `X^T target`.
    fn solve(&self, xty: &[f64]) -> Vec<f64> {
        let q = self.keep.len();
        let rhs: Vec<f64> = self.keep.iter().zip(&self.scale).map(|(&j, s)| xty[j] / s).collect();
        let mut v = rhs.clone();
        self.chol_solve(&mut v);
        // Refinement against the unridged Gram removes the ridge bias along well-determined directions.
        for _ in 0..REFINE {
            let mut r: Vec<f64> = (0..q)
                .map(|a| rhs[a] - self.gram[a * q..(a + 1) * q].iter().zip(&v).map(|(g, x)| g * x).sum::<f64>())
                .collect();
            self.chol_solve(&mut r);
            for (x, d) in v.iter_mut().zip(&r) {
                *x += d;
            }
        }
        let mut beta = vec![0.0; self.p];
        for ((&j, s), b) in self.keep.iter().zip(&self.scale).zip(&v) {
            beta[j] = b / s;
        }
        beta
    }

    fn kept(&self) -> usize {
        self.keep.len()
    }
}

/// Accumulates `X^T t` over `rows` in a thread-count independent order.
fn xty<F>(rows: &[usize], p: usize, target: &[f64], row: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let partial: Vec<Vec<f64>> = rows
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; p];
            let mut r = vec![0.0; p];
            for &s in chunk {
                row(s, &mut r);
                let t = target[s];
                for (a, v) in acc.iter_mut().zip(&r) {
                    *a += v * t;
                }
            }
            acc
        })
        .collect();
    let mut out = vec![0.0; p];
    for a in &partial {
        for (o, v) in out.iter_mut().zip(a) {
            *o += v;
        }
    }
    out
}

/// Fitted coefficients of the integrands at one step for one group.
#[derive(Debug, Clone)]
pub struct IntegrandMap {
    /// `coef[c * basis_len + i]` multiplies feature `i` in integrand coordinate `c`.
    pub coef: Vec<f64>,
    pub basis_len: usize,
    pub coords: usize,
}

impl IntegrandMap {
    pub fn eval(&self, features: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate().take(self.coords) {
            let row = &self.coef[c * self.basis_len..(c + 1) * self.basis_len];
            *o = row.iter().zip(features).map(|(a, b)| a * b).sum();
        }
    }
}

/// Polynomial regression estimator over a [`PathBundle`].
pub struct RegressionEstimator<'a> {
    bundle: &'a PathBundle,
    basis: PolyBasis,
    /// Group of each particle slot `s % particles`.
    particle_groups: Vec<usize>,
    members: Vec<Vec<usize>>,
    value_fits: Vec<Vec<Fit>>,
    joint_fits: Vec<Vec<Fit>>,
    coords: usize,
    pairs: Vec<(usize, usize)>,
    /// Features allowed in the common integrand; all of them unless the basis is separable.
    common_features: Vec<bool>,
}

impl<'a> RegressionEstimator<'a> {
    /// `particle_groups[j]` is the regression group of particle slot `j`;
    /// samples of different groups never share a fit.
    pub fn new(bundle: &'a PathBundle, basis: BasisSpec, particle_groups: &[usize], ridge: f64) -> Result<Self> {
        if particle_groups.len() != bundle.particles {
            return Err(Error::DimensionMismatch(format!(
                "{} group labels for {} particles",
                particle_groups.len(),
                bundle.particles
            )));
        }
        let basis = PolyBasis::new(basis);
        let common_features = (0..basis.len()).map(|i| basis.spec.mixed || !basis.involves_idio(i)).collect();
        let n_groups = particle_groups.iter().copied().max().unwrap_or(0) + 1;
        let mut members = vec![Vec::new(); n_groups];
        for s in 0..bundle.samples() {
            members[particle_groups[s % bundle.particles]].push(s);
        }
        let coords = bundle.d0 + bundle.d;
        let pairs: Vec<(usize, usize)> = (0..coords).flat_map(|a| (a..coords).map(move |b| (a, b))).collect();
        let mut est = Self {
            bundle,
            basis,
            particle_groups: particle_groups.to_vec(),
            members,
            value_fits: Vec::new(),
            joint_fits: Vec::new(),
            coords,
            pairs,
            common_features,
        };
        let joint_len = est.joint_len();
        for (g, rows) in est.members.iter().enumerate() {
            if rows.is_empty() {
                return Err(Error::InvalidParameter(format!("regression group {g} has no samples")));
            }
            if joint_len * 10 > rows.len() {
                return Err(Error::RegressionRankDeficient {
                    step: 0,
                    detail: format!(
                        "group {g}: {joint_len} regressors need at least {} samples, have {}",
                        joint_len * 10,
                        rows.len()
                    ),
                });
            }
        }
        let steps = bundle.grid.steps;
        let p = est.basis.len();
        let fits: Vec<(Vec<Fit>, Vec<Fit>)> = (0..steps)
            .into_par_iter()
            .map(|k| {
                let mut vf = Vec::with_capacity(n_groups);
                let mut jf = Vec::with_capacity(n_groups);
                for rows in &est.members {
                    vf.push(Fit::build(rows, p, ridge, k, |s, r| est.value_row(s, k, r))?);
                    jf.push(Fit::build(rows, joint_len, ridge, k, |s, r| est.joint_row(s, k, r))?);
                }
                Ok((vf, jf))
            })
            .collect::<Result<Vec<_>>>()?;
        for (vf, jf) in fits {
            est.value_fits.push(vf);
            est.joint_fits.push(jf);
        }
        Ok(est)
    }

    pub fn basis(&self) -> &PolyBasis {
        &self.basis
    }

    pub fn groups(&self) -> usize {
        self.members.len()
    }

    pub fn group_of(&self, s: usize) -> usize {
        self.particle_groups[s % self.bundle.particles]
    }

    fn joint_len(&self) -> usize {
        self.basis.len() * self.coords + self.pairs.len()
    }

    fn value_row(&self, s: usize, k: usize, r: &mut [f64]) {
        let st = self.basis.state_of(self.bundle, s, k);
        self.basis.eval(&st, r);
    }

    fn increments(&self, s: usize, k: usize, out: &mut [f64]) {
        let m = self.bundle.common_of(s);
        let d0 = self.bundle.d0;
        out[..d0].copy_from_slice(self.bundle.dw0_at(m, k));
        out[d0..].copy_from_slice(self.bundle.dwi_at(s, k));
    }

    fn joint_row(&self, s: usize, k: usize, r: &mut [f64]) {
        let p = self.basis.len();
        let mut phi = vec![0.0; p];
        self.value_row(s, k, &mut phi);
        let mut dw = vec![0.0; self.coords];
        self.increments(s, k, &mut dw);
        let dt = self.bundle.grid.dt();
        let d0 = self.bundle.d0;
        for c in 0..self.coords {
            for i in 0..p {
                r[c * p + i] = if c < d0 && !self.common_features[i] { 0.0 } else { phi[i] * dw[c] };
            }
        }
        let off = p * self.coords;
        for (q, &(a, b)) in self.pairs.iter().enumerate() {
            r[off + q] = dw[a] * dw[b] - if a == b { dt } else { 0.0 };
        }
    }

    /// Number of regressors kept at `step` for `group` in the value and joint fits.
    pub fn kept(&self, step: usize, group: usize) -> (usize, usize) {
        (self.value_fits[step][group].kept(), self.joint_fits[step][group].kept())
    }

    /// Integrand coefficients per group for the residual `resid` at `step`.
    pub fn integrand_maps(&self, step: usize, resid: &[f64]) -> Vec<IntegrandMap> {
        let p = self.basis.len();
        let jl = self.joint_len();
        self.members
            .iter()
            .enumerate()
            .map(|(g, rows)| {
                let b = xty(rows, jl, resid, |s, r| self.joint_row(s, step, r));
                // resid ~ sum_c z_c dW_c, so the coefficient of phi_i dW_c is z_c's loading on phi_i.
                let beta = self.joint_fits[step][g].solve(&b);
                IntegrandMap { coef: beta[..p * self.coords].to_vec(), basis_len: p, coords: self.coords }
            })
            .collect()
    }
}

impl ConditionalExpectation for RegressionEstimator<'_> {
    fn samples(&self) -> usize {
        self.bundle.samples()
    }

    fn expect(&self, step: usize, target: &[f64]) -> Result<Vec<f64>> {
        let p = self.basis.len();
        let mut out = vec![0.0; self.samples()];
        for (g, rows) in self.members.iter().enumerate() {
            let b = xty(rows, p, target, |s, r| self.value_row(s, step, r));
            let beta = self.value_fits[step][g].solve(&b);
            let vals: Vec<(usize, f64)> = rows
                .par_chunks(CHUNK)
                .flat_map_iter(|chunk| {
                    let mut r = vec![0.0; p];
                    chunk
                        .iter()
                        .map(|&s| {
                            self.value_row(s, step, &mut r);
                            (s, r.iter().zip(&beta).map(|(a, b)| a * b).sum())
                        })
                        .collect::<Vec<_>>()
                })
                .collect();
            for (s, v) in vals {
                out[s] = v;
            }
        }
        Ok(out)
    }

    fn integrands(&self, step: usize, resid: &[f64]) -> Result<Vec<f64>> {
        let p = self.basis.len();
        let coords = self.coords;
        let maps = self.integrand_maps(step, resid);
        let mut out = vec![0.0; self.samples() * coords];
        out.par_chunks_mut(coords).enumerate().for_each(|(s, o)| {
            let mut phi = vec![0.0; p];
            self.value_row(s, step, &mut phi);
            maps[self.group_of(s)].eval(&phi, o);
        });
        Ok(out)
    }
}

/// Exact conditional expectation by averaging over samples that share the
/// group label and the full increment history up to the current step.
pub struct HistoryEstimator<'a> {
    bundle: &'a PathBundle,
    /// `nodes[k][s]` is the node id of sample `s` at step `k`.
    nodes: Vec<Vec<usize>>,
    counts: Vec<Vec<usize>>,
}

impl<'a> HistoryEstimator<'a> {
    pub fn new(bundle: &'a PathBundle, particle_groups: &[usize]) -> Result<Self> {
        if particle_groups.len() != bundle.particles {
            return Err(Error::DimensionMismatch("one group label per particle slot required".into()));
        }
        let n = bundle.samples();
        let mut nodes = Vec::with_capacity(bundle.grid.steps);
        let mut current: Vec<usize> = (0..n).map(|s| particle_groups[s % bundle.particles]).collect();
        let relabel = |ids: &[usize]| -> (Vec<usize>, Vec<usize>) {
            let mut map = HashMap::new();
            let mut counts = Vec::new();
            let out = ids
                .iter()
                .map(|id| {
                    let next = map.len();
                    let v = *map.entry(*id).or_insert(next);
                    if v == counts.len() {
                        counts.push(0);
                    }
                    counts[v] += 1;
                    v
                })
                .collect();
            (out, counts)
        };
        let mut counts = Vec::new();
        for k in 0..bundle.grid.steps {
            let (ids, c) = relabel(&current);
            nodes.push(ids.clone());
            counts.push(c);
            let mut keys: HashMap<(usize, Vec<u64>), usize> = HashMap::new();
            current = (0..n)
                .map(|s| {
                    let m = bundle.common_of(s);
                    let bits: Vec<u64> = bundle
                        .dw0_at(m, k)
                        .iter()
                        .chain(bundle.dwi_at(s, k))
                        .map(|v| v.to_bits())
                        .collect();
                    let next = keys.len();
                    *keys.entry((ids[s], bits)).or_insert(next)
                })
                .collect();
        }
        Ok(Self { bundle, nodes, counts })
    }

    fn average(&self, step: usize, values: &[f64]) -> Vec<f64> {
        let ids = &self.nodes[step];
        let mut sums = vec![0.0; self.counts[step].len()];
        for (id, v) in ids.iter().zip(values) {
            sums[*id] += v;
        }
        ids.iter().map(|id| sums[*id] / self.counts[step][*id] as f64).collect()
    }
}

impl ConditionalExpectation for HistoryEstimator<'_> {
    fn samples(&self) -> usize {
        self.bundle.samples()
    }

    fn expect(&self, step: usize, target: &[f64]) -> Result<Vec<f64>> {
        Ok(self.average(step, target))
    }

    fn integrands(&self, step: usize, resid: &[f64]) -> Result<Vec<f64>> {
        let coords = self.bundle.d0 + self.bundle.d;
        let dt = self.bundle.grid.dt();
        let n = self.samples();
        let mut out = vec![0.0; n * coords];
        for c in 0..coords {
            let t: Vec<f64> = (0..n)
                .map(|s| {
                    let dw = if c < self.bundle.d0 {
                        self.bundle.dw0_at(self.bundle.common_of(s), step)[c]
                    } else {
                        self.bundle.dwi_at(s, step)[c - self.bundle.d0]
                    };
                    resid[s] * dw / dt
                })
                .collect();
            for (s, v) in self.average(step, &t).into_iter().enumerate() {
                out[s * coords + c] = v;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsde::basis::StateVar;
    use crate::model::{simulate_paths, FactorSpec, TimeGrid};

    fn bundle(m: usize, k: usize) -> PathBundle {
        let spec = FactorSpec { alpha: -0.5, beta: 0.1, delta: vec![0.6, 0.3], x0: 0.2, a: -0.2, b: 0.8, kappa: 0.3 };
        simulate_paths(&TimeGrid::new(1.0, 5).unwrap(), &spec, 1, m, k, 5).unwrap()
    }

    #[test]
    fn regression_reproduces_functions_in_the_span() {
        let b = bundle(2000, 1);
        let est = RegressionEstimator::new(&b, BasisSpec::default(), &[0], 1e-10).unwrap();
        let k = 3;
        let target: Vec<f64> = (0..b.samples())
            .map(|s| {
                let x = b.x_at(s, k);
                1.0 - 2.0 * x + 0.5 * x * x + 3.0 * b.wi_at(s, k)
            })
            .collect();
        let fitted = est.expect(k, &target).unwrap();
        let err = fitted.iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-8, "max error {err}");
    }

    #[test]
    fn step_zero_reduces_to_the_sample_mean() {
        let b = bundle(2000, 1);
        let est = RegressionEstimator::new(&b, BasisSpec::default(), &[0], 1e-8).unwrap();
        let target: Vec<f64> = (0..b.samples()).map(|s| b.x_at(s, 5)).collect();
        let fitted = est.expect(0, &target).unwrap();
        let mean = target.iter().sum::<f64>() / target.len() as f64;
        assert!((fitted[0] - mean).abs() < 1e-12);
        assert!(fitted.iter().all(|v| (v - fitted[0]).abs() < 1e-12));
        assert_eq!(est.kept(0, 0).0, 1);
    }

    #[test]
    fn joint_regression_recovers_state_dependent_integrands() {
        let b = bundle(3000, 1);
        let est = RegressionEstimator::new(&b, BasisSpec::default(), &[0], 1e-10).unwrap();
        let k = 2;
        // resid = (1 + x) dW0_1 - 0.4 dW1_1 + 0.7 ((dW0_2)^2 - dt)
        let dt = b.grid.dt();
        let resid: Vec<f64> = (0..b.samples())
            .map(|s| {
                let w0 = b.dw0_at(s, k);
                (1.0 + b.x_at(s, k)) * w0[0] - 0.4 * b.dwi_at(s, k)[0] + 0.7 * (w0[1] * w0[1] - dt)
            })
            .collect();
        let z = est.integrands(k, &resid).unwrap();
        for s in [0, 17, 999] {
            assert!((z[s * 3] - (1.0 + b.x_at(s, k))).abs() < 1e-8);
            assert!(z[s * 3 + 1].abs() < 1e-8);
            assert!((z[s * 3 + 2] + 0.4).abs() < 1e-8);
        }
    }

    #[test]
    fn groups_are_fitted_separately() {
        let b = bundle(1500, 2);
        let est = RegressionEstimator::new(&b, BasisSpec::default(), &[0, 1], 1e-10).unwrap();
        let target: Vec<f64> = (0..b.samples()).map(|s| if s % 2 == 0 { 1.0 } else { -2.0 }).collect();
        let fitted = est.expect(3, &target).unwrap();
        assert!((fitted[0] - 1.0).abs() < 1e-12 && (fitted[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_samples_per_regressor_is_an_error() {
        let b = bundle(100, 1);
        let spec = BasisSpec { degree: 2, state: vec![StateVar::Factor, StateVar::Integral, StateVar::Idio], mixed: true };
        assert!(matches!(
            RegressionEstimator::new(&b, spec, &[0], 1e-8),
            Err(Error::RegressionRankDeficient { .. })
        ));
    }
}
