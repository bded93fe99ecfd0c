//! Binomial noise trees for exact small-scale checks of the mean-field scheme.

use crate::error::{Error, Result};
use crate::model::{FactorSpec, PathBundle, TimeGrid};

/// Every common and idiosyncratic `+-sqrt(dt)` history of a scalar two-noise
/// model. Common path `m` and idiosyncratic index `i` encode their histories
/// in binary, the first step in the highest bit; particle slot `j` is
/// `type * 2^steps + i`.
pub fn binomial_tree_bundle(grid: &TimeGrid, spec: &FactorSpec, types: usize) -> Result<PathBundle> {
    if spec.delta.len() != 1 {
        return Err(Error::DimensionMismatch("the tree has one common noise".into()));
    }
    if grid.steps > 10 || types == 0 {
        return Err(Error::InvalidParameter("trees need 1..=10 steps and at least one type".into()));
    }
    let n = grid.steps;
    let leaves = 1usize << n;
    let h = grid.dt().sqrt();
    let inc = |path: usize, k: usize| if (path >> (n - 1 - k)) & 1 == 1 { h } else { -h };
    let dw0: Vec<f64> = (0..leaves).flat_map(|m| (0..n).map(move |k| inc(m, k))).collect();
    let mut dwi = Vec::with_capacity(leaves * types * leaves * n);
    for _m in 0..leaves {
        for _l in 0..types {
            for i in 0..leaves {
                dwi.extend((0..n).map(|k| inc(i, k)));
            }
        }
    }
    PathBundle::from_increments(grid, spec, 1, leaves, types * leaves, dw0, dwi)
}

/// Particle groups of [`binomial_tree_bundle`]: slot `j` belongs to type `j / 2^steps`.
pub fn tree_groups(steps: usize, types: usize) -> Vec<usize> {
    (0..types << steps).map(|j| j >> steps).collect()
}

/// Exhaustive backward evaluation of the explicit mean-field scheme on the
/// tree with scalar `sigma`. `terminal(type, w0_T, w1_T)` gives `F`, and the
/// driver is evaluated at the integrands of the same step. Returns
/// `y[k][(c * types + l) * 2^k + i]` for common prefix `c` and idiosyncratic
/// prefix `i` of length `k`.
pub fn tree_oracle<F>(grid: &TimeGrid, gammas: &[f64], terminal: F) -> Vec<Vec<f64>>
where
    F: Fn(usize, f64, f64) -> f64,
{
    let n = grid.steps;
    let types = gammas.len();
    let dt = grid.dt();
    let h = dt.sqrt();
    let gh = types as f64 / gammas.iter().map(|g| 1.0 / g).sum::<f64>();
    let walk = |bits: usize, len: usize| -> f64 {
        (0..len).map(|j| if (bits >> (len - 1 - j)) & 1 == 1 { h } else { -h }).sum()
    };
    let leaves = 1usize << n;
    let mut levels = vec![Vec::new(); n + 1];
    levels[n] = (0..leaves)
        .flat_map(|c| (0..types).flat_map(move |l| (0..leaves).map(move |i| (c, l, i))))
        .map(|(c, l, i)| terminal(l, walk(c, n), walk(i, n)))
        .collect();
    for k in (0..n).rev() {
        let w = 1usize << k;
        let child = &levels[k + 1];
        let at = |c: usize, l: usize, i: usize| child[(c * types + l) * (2 * w) + i];
        let mut z0 = vec![0.0; w * types * w];
        let mut z1 = vec![0.0; w * types * w];
        let mut mean = vec![0.0; w * types * w];
        for c in 0..w {
            for l in 0..types {
                for i in 0..w {
                    let (mut m, mut a0, mut a1) = (0.0, 0.0, 0.0);
                    for cb in 0..2 {
                        for ib in 0..2 {
                            let v = at(2 * c + cb, l, 2 * i + ib);
                            let s0 = if cb == 1 { h } else { -h };
                            let s1 = if ib == 1 { h } else { -h };
                            m += v / 4.0;
                            a0 += v * s0 / (4.0 * dt);
                            a1 += v * s1 / (4.0 * dt);
                        }
                    }
                    let idx = (c * types + l) * w + i;
                    mean[idx] = m;
                    z0[idx] = a0;
                    z1[idx] = a1;
                }
            }
        }
        let mut y = vec![0.0; w * types * w];
        for c in 0..w {
            let ebar = (0..types)
                .flat_map(|l| (0..w).map(move |i| (c * types + l) * w + i))
                .map(|idx| z0[idx])
                .sum::<f64>()
                / (types * w) as f64;
            for (l, g) in gammas.iter().enumerate() {
                for i in 0..w {
                    let idx = (c * types + l) * w + i;
                    let f = gh * z0[idx] * ebar - gh * gh / (2.0 * g) * ebar * ebar + 0.5 * g * z1[idx] * z1[idx];
                    y[idx] = mean[idx] + f * dt;
                }
            }
        }
        levels[k] = y;
    }
    levels
}
