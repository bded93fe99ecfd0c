use crate::error::{Error, Result};

/// Sum that does not depend on the order of the terms.
pub fn order_free_sum(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

/// `sum_k dt |N^{-1} sum_i pi^i_k|^2` for one common path.
///
/// `pis[i]` holds agent `i`'s positions laid out as `[k * n + c]`.
pub fn per_capita_square(pis: &[&[f64]], steps: usize, n: usize, dt: f64) -> f64 {
    let agents = pis.len() as f64;
    let mut buf = vec![0.0; pis.len()];
    let mut total = 0.0;
    for k in 0..steps {
        for c in 0..n {
            for (b, p) in buf.iter_mut().zip(pis) {
                *b = p[k * n + c];
            }
            let mean = order_free_sum(&mut buf) / agents;
            total += mean * mean * dt;
        }
    }
    total
}

/// Mean of per-path values and its standard error from contiguous batches.
pub fn batched_mean(values: &[f64], batches: usize) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::InvalidParameter("need at least two common paths for error bars".into()));
    }
    let b = batches.clamp(2, values.len());
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let means: Vec<f64> = (0..b)
        .map(|j| {
            let lo = j * values.len() / b;
            let hi = (j + 1) * values.len() / b;
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect();
    let bm = means.iter().sum::<f64>() / b as f64;
    let var = means.iter().map(|m| (m - bm) * (m - bm)).sum::<f64>() / (b - 1) as f64;
    Ok((mean, (var / b as f64).sqrt()))
}

/// Least-squares slope of `log eps` against `log N`.
pub fn rate_fit(ns: &[usize], eps: &[f64]) -> Result<f64> {
    if ns.len() != eps.len() {
        return Err(Error::DimensionMismatch("one residual per population size".into()));
    }
    if ns.len() < 4 {
        return Err(Error::InsufficientSpan(format!("{} population sizes, need at least 4", ns.len())));
    }
    if ns.windows(2).any(|w| w[1] <= w[0]) || ns[0] == 0 {
        return Err(Error::InvalidParameter("population sizes must be positive and strictly increasing".into()));
    }
    let decades = (ns[ns.len() - 1] as f64 / ns[0] as f64).log10();
    if decades < 1.5 {
        return Err(Error::InsufficientSpan(format!("population sizes span {decades:.2} decades, need 1.5")));
    }
    if let Some(e) = eps.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        return Err(Error::InvalidParameter(format!("cannot fit a rate through residual {e}")));
    }
    let xs: Vec<f64> = ns.iter().map(|n| (*n as f64).ln()).collect();
    let ys: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}
