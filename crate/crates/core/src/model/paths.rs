use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::factor::FactorSpec;
use super::grid::TimeGrid;
use super::rng::{domain, stream};
use crate::error::{Error, Result};

/// Simulated common paths with `particles` idiosyncratic particles attached
/// to each. Sample `s` belongs to common path `s / particles`.
///
/// Layouts are row-major: `dw0[(m * steps + k) * d0 + c]`,
/// `dwi[(s * steps + k) * d + c]`, `x[m * (steps + 1) + k]`.
#[derive(Debug, Clone)]
pub struct PathBundle {
    pub grid: TimeGrid,
    pub n_common: usize,
    pub particles: usize,
    pub d0: usize,
    pub d: usize,
    pub dw0: Vec<f64>,
    pub dwi: Vec<f64>,
    pub x: Vec<f64>,
    pub integral: Vec<f64>,
    /// Running first coordinate of the common Brownian motion.
    pub w0_first: Vec<f64>,
    /// Running first coordinate of each particle's idiosyncratic Brownian motion.
    pub wi_first: Vec<f64>,
}

/// One simulated common path.
#[derive(Debug, Clone)]
pub struct CommonPath {
    pub dw0: Vec<f64>,
    pub x: Vec<f64>,
    pub integral: Vec<f64>,
}

/// Gaussian increments with variance `dt` for `steps * dim` slots of one stream.
pub fn gaussian_increments(seed: u64, dom: u64, index: u64, steps: usize, dim: usize, dt: f64) -> Vec<f64> {
    let mut rng = stream(seed, dom, index);
    let sd = dt.sqrt();
    (0..steps * dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * sd
        })
        .collect()
}

/// Factor and liability integral along given common increments (left-endpoint rule).
pub fn integrate_factor(spec: &FactorSpec, grid: &TimeGrid, dw0: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d0 = spec.delta.len();
    let dt = grid.dt();
    let mut x = Vec::with_capacity(grid.steps + 1);
    let mut int = Vec::with_capacity(grid.steps + 1);
    x.push(spec.x0);
    int.push(0.0);
    for k in 0..grid.steps {
        let xk = x[k];
        int.push(int[k] + spec.running(xk) * dt);
        x.push(spec.step(xk, &dw0[k * d0..(k + 1) * d0], dt));
    }
    (x, int)
}

/// Simulates common path `m` exactly as `simulate_paths` does.
pub fn simulate_common_path(spec: &FactorSpec, grid: &TimeGrid, seed: u64, m: usize) -> CommonPath {
    let dw0 = gaussian_increments(seed, domain::COMMON, m as u64, grid.steps, spec.delta.len(), grid.dt());
    let (x, integral) = integrate_factor(spec, grid, &dw0);
    CommonPath { dw0, x, integral }
}

fn running_first(inc: &[f64], steps: usize, dim: usize) -> Vec<f64> {
    let mut w = Vec::with_capacity(steps + 1);
    w.push(0.0);
    for k in 0..steps {
        w.push(w[k] + inc[k * dim]);
    }
    w
}

/// Simulates `n_common` common paths with `particles` idiosyncratic
/// particles each. Output is bit-identical for any thread count.
pub fn simulate_paths(
    grid: &TimeGrid,
    spec: &FactorSpec,
    d: usize,
    n_common: usize,
    particles: usize,
    seed: u64,
) -> Result<PathBundle> {
    spec.validate()?;
    if n_common == 0 || particles == 0 || d == 0 {
        return Err(Error::InvalidParameter("need at least one path, particle and idiosyncratic dimension".into()));
    }
    let steps = grid.steps;
    let dt = grid.dt();
    let commons: Vec<CommonPath> = (0..n_common)
        .into_par_iter()
        .map(|m| simulate_common_path(spec, grid, seed, m))
        .collect();
    let idio: Vec<Vec<f64>> = (0..n_common * particles)
        .into_par_iter()
        .map(|s| gaussian_increments(seed, domain::IDIO, s as u64, steps, d, dt))
        .collect();
    let d0 = spec.delta.len();
    let mut bundle = PathBundle {
        grid: *grid,
        n_common,
        particles,
        d0,
        d,
        dw0: Vec::with_capacity(n_common * steps * d0),
        dwi: Vec::with_capacity(n_common * particles * steps * d),
        x: Vec::with_capacity(n_common * (steps + 1)),
        integral: Vec::with_capacity(n_common * (steps + 1)),
        w0_first: Vec::new(),
        wi_first: Vec::new(),
    };
    for c in commons {
        bundle.dw0.extend_from_slice(&c.dw0);
        bundle.x.extend_from_slice(&c.x);
        bundle.integral.extend_from_slice(&c.integral);
    }
    for v in idio {
        bundle.dwi.extend_from_slice(&v);
    }
    bundle.fill_running();
    Ok(bundle)
}

impl PathBundle {
    /// Builds a bundle from given increments; the factor is integrated with `spec`.
    pub fn from_increments(
        grid: &TimeGrid,
        spec: &FactorSpec,
        d: usize,
        n_common: usize,
        particles: usize,
        dw0: Vec<f64>,
        dwi: Vec<f64>,
    ) -> Result<Self> {
        let d0 = spec.delta.len();
        let steps = grid.steps;
        if dw0.len() != n_common * steps * d0 || dwi.len() != n_common * particles * steps * d {
            return Err(Error::DimensionMismatch("increment arrays do not match the layout".into()));
        }
        let mut x = Vec::with_capacity(n_common * (steps + 1));
        let mut integral = Vec::with_capacity(n_common * (steps + 1));
        for m in 0..n_common {
            let (xm, im) = integrate_factor(spec, grid, &dw0[m * steps * d0..(m + 1) * steps * d0]);
            x.extend(xm);
            integral.extend(im);
        }
        let mut b = PathBundle {
            grid: *grid,
            n_common,
            particles,
            d0,
            d,
            dw0,
            dwi,
            x,
            integral,
            w0_first: Vec::new(),
            wi_first: Vec::new(),
        };
        b.fill_running();
        Ok(b)
    }

    fn fill_running(&mut self) {
        let steps = self.grid.steps;
        self.w0_first = (0..self.n_common)
            .flat_map(|m| running_first(self.dw0_path(m), steps, self.d0))
            .collect();
        self.wi_first = (0..self.samples())
            .flat_map(|s| running_first(self.dwi_path(s), steps, self.d))
            .collect();
    }

    pub fn samples(&self) -> usize {
        self.n_common * self.particles
    }

    pub fn common_of(&self, s: usize) -> usize {
        s / self.particles
    }

    pub fn dw0_path(&self, m: usize) -> &[f64] {
        let n = self.grid.steps * self.d0;
        &self.dw0[m * n..(m + 1) * n]
    }

    pub fn dwi_path(&self, s: usize) -> &[f64] {
        let n = self.grid.steps * self.d;
        &self.dwi[s * n..(s + 1) * n]
    }

    pub fn dw0_at(&self, m: usize, k: usize) -> &[f64] {
        let i = (m * self.grid.steps + k) * self.d0;
        &self.dw0[i..i + self.d0]
    }

    pub fn dwi_at(&self, s: usize, k: usize) -> &[f64] {
        let i = (s * self.grid.steps + k) * self.d;
        &self.dwi[i..i + self.d]
    }

    pub fn x_at(&self, m: usize, k: usize) -> f64 {
        self.x[m * (self.grid.steps + 1) + k]
    }

    pub fn integral_at(&self, m: usize, k: usize) -> f64 {
        self.integral[m * (self.grid.steps + 1) + k]
    }

    pub fn w0_at(&self, m: usize, k: usize) -> f64 {
        self.w0_first[m * (self.grid.steps + 1) + k]
    }

    pub fn wi_at(&self, s: usize, k: usize) -> f64 {
        self.wi_first[s * (self.grid.steps + 1) + k]
    }

    /// Repeats every particle `replicas` times: slot `r * particles + i` of the
    /// result carries the idiosyncratic path of slot `i`.
    pub fn replicate_particles(&self, replicas: usize) -> Result<PathBundle> {
        if replicas == 0 {
            return Err(Error::InvalidParameter("need at least one replica".into()));
        }
        let particles = self.particles * replicas;
        let mut dwi = Vec::with_capacity(self.dwi.len() * replicas);
        for m in 0..self.n_common {
            for _ in 0..replicas {
                for i in 0..self.particles {
                    dwi.extend_from_slice(self.dwi_path(m * self.particles + i));
                }
            }
        }
        let mut b = PathBundle { particles, dwi, ..self.clone() };
        b.fill_running();
        Ok(b)
    }

    /// Sums blocks of `factor` increments to get the same Brownian paths on a
    /// grid with `steps / factor` steps; the factor is re-integrated on the coarse grid.
    pub fn coarsen(&self, spec: &FactorSpec, factor: usize) -> Result<PathBundle> {
        if factor == 0 || !self.grid.steps.is_multiple_of(factor) {
            return Err(Error::GridMismatch(format!(
                "cannot coarsen {} steps by {factor}",
                self.grid.steps
            )));
        }
        let steps = self.grid.steps / factor;
        let grid = TimeGrid::new(self.grid.horizon, steps)?;
        let sum_blocks = |src: &[f64], dim: usize| -> Vec<f64> {
            let mut out = vec![0.0; steps * dim];
            for k in 0..steps {
                for j in 0..factor {
                    for c in 0..dim {
                        out[k * dim + c] += src[(k * factor + j) * dim + c];
                    }
                }
            }
            out
        };
        let dw0 = (0..self.n_common).flat_map(|m| sum_blocks(self.dw0_path(m), self.d0)).collect();
        let dwi = (0..self.samples()).flat_map(|s| sum_blocks(self.dwi_path(s), self.d)).collect();
        PathBundle::from_increments(&grid, spec, self.d, self.n_common, self.particles, dw0, dwi)
    }
}
