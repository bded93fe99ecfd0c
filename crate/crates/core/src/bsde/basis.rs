use serde::{Deserialize, Serialize};

use crate::model::PathBundle;

/// State variables seen by the regression at each grid time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateVar {
    /// Factor value.
    Factor,
    /// Running liability integral.
    Integral,
    /// First coordinate of the sample's own idiosyncratic Brownian motion.
    Idio,
    /// First coordinate of the common Brownian motion.
    Common,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub degree: usize,
    pub state: Vec<StateVar>,
    /// Keep monomials that mix `Idio` with the common variables. Without them
    /// the fitted values split into a common part plus an idiosyncratic part,
    /// and the common integrand is a function of the common variables alone.
    #[serde(default = "mixed_default")]
    pub mixed: bool,
}

fn mixed_default() -> bool {
    true
}

impl Default for BasisSpec {
    fn default() -> Self {
        Self { degree: 2, state: vec![StateVar::Factor, StateVar::Integral, StateVar::Idio], mixed: true }
    }
}

/// Monomials of total degree at most `degree`, constant first.
#[derive(Debug, Clone)]
pub struct PolyBasis {
    pub spec: BasisSpec,
    exps: Vec<Vec<u32>>,
}

fn monomials(vars: usize, degree: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    for total in 0..=degree {
        let mut cur = vec![0u32; vars];
        fill(&mut out, &mut cur, 0, total as u32);
    }
    out
}

fn fill(out: &mut Vec<Vec<u32>>, cur: &mut Vec<u32>, pos: usize, left: u32) {
    if pos + 1 == cur.len() {
        cur[pos] = left;
        out.push(cur.clone());
        return;
    }
    for e in (0..=left).rev() {
        cur[pos] = e;
        fill(out, cur, pos + 1, left - e);
    }
    cur[pos] = 0;
}

/// `E[Z^j]` for `Z ~ N(0, var)`.
fn gaussian_moment(j: u32, var: f64) -> f64 {
    if j % 2 == 1 {
        return 0.0;
    }
    let mut double_fact = 1.0;
    let mut i = j as i64 - 1;
    while i > 1 {
        double_fact *= i as f64;
        i -= 2;
    }
    double_fact * var.powi(j as i32 / 2)
}

impl PolyBasis {
    pub fn new(spec: BasisSpec) -> Self {
        let mut exps = if spec.state.is_empty() { vec![vec![]] } else { monomials(spec.state.len(), spec.degree) };
        if !spec.mixed {
            let is_idio: Vec<bool> = spec.state.iter().map(|v| *v == StateVar::Idio).collect();
            exps.retain(|e| {
                let idio = e.iter().zip(&is_idio).any(|(p, i)| *p > 0 && *i);
                let common = e.iter().zip(&is_idio).any(|(p, i)| *p > 0 && !*i);
                !(idio && common)
            });
        }
        Self { spec, exps }
    }

    pub fn len(&self) -> usize {
        self.exps.len()
    }

    /// Whether monomial `i` has a positive power of `Idio`.
    pub fn involves_idio(&self, i: usize) -> bool {
        self.exps[i].iter().zip(&self.spec.state).any(|(p, v)| *p > 0 && *v == StateVar::Idio)
    }

    pub fn is_empty(&self) -> bool {
        self.exps.is_empty()
    }

    pub fn state_of(&self, bundle: &PathBundle, s: usize, k: usize) -> Vec<f64> {
        let m = bundle.common_of(s);
        self.spec
            .state
            .iter()
            .map(|v| match v {
                StateVar::Factor => bundle.x_at(m, k),
                StateVar::Integral => bundle.integral_at(m, k),
                StateVar::Idio => bundle.wi_at(s, k),
                StateVar::Common => bundle.w0_at(m, k),
            })
            .collect()
    }

    pub fn eval(&self, state: &[f64], out: &mut [f64]) {
        for (o, e) in out.iter_mut().zip(&self.exps) {
            *o = e.iter().zip(state).map(|(&p, &v)| v.powi(p as i32)).product();
        }
    }

    pub fn eval_vec(&self, state: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval(state, &mut out);
        out
    }

    /// Features averaged over the idiosyncratic coordinate `w ~ N(0, var)`,
    /// with every other state variable held at `state`.
    pub fn eval_idio_mean(&self, state: &[f64], var: f64) -> Vec<f64> {
        self.exps
            .iter()
            .map(|e| {
                e.iter()
                    .zip(&self.spec.state)
                    .zip(state)
                    .map(|((&p, v), &x)| match v {
                        StateVar::Idio => gaussian_moment(p, var),
                        _ => x.powi(p as i32),
                    })
                    .product()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_match_binomial_coefficients() {
        let b = PolyBasis::new(BasisSpec::default());
        assert_eq!(b.len(), 10);
        let b = PolyBasis::new(BasisSpec { degree: 3, state: vec![StateVar::Factor, StateVar::Idio], mixed: true });
        assert_eq!(b.len(), 10);
        let b = PolyBasis::new(BasisSpec { degree: 2, state: vec![], mixed: true });
        assert_eq!(b.len(), 1);
        // Without x W1 the default state loses two of its ten monomials.
        let b = PolyBasis::new(BasisSpec { mixed: false, ..BasisSpec::default() });
        assert_eq!(b.len(), 8);
    }

    #[test]
    fn constant_comes_first() {
        let b = PolyBasis::new(BasisSpec::default());
        assert_eq!(b.eval_vec(&[3.0, 5.0, 7.0])[0], 1.0);
    }

    #[test]
    fn idio_mean_replaces_moments() {
        let b = PolyBasis::new(BasisSpec { degree: 2, state: vec![StateVar::Factor, StateVar::Idio], mixed: true });
        let mean = b.eval_idio_mean(&[2.0, 123.0], 0.5);
        let plain = b.eval_vec(&[2.0, 0.0]);
        // Only w^2 changes: from 0 to the variance.
        let diffs: Vec<f64> = mean.iter().zip(&plain).map(|(a, c)| a - c).collect();
        assert_eq!(diffs.iter().filter(|d| d.abs() > 0.0).count(), 1);
        assert!(diffs.iter().any(|d| (d - 0.5).abs() < 1e-15));
        assert_eq!(gaussian_moment(4, 2.0), 12.0);
    }
}
