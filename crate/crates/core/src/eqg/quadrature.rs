/// Running integral `F_j = int_0^{s_j} f` on a uniform grid with spacing `h`.
///
/// Even nodes use composite Simpson; odd nodes add a three-point one-interval
/// rule to the preceding even node, so every node is fourth-order accurate.
pub fn cumulative_simpson(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    assert!(n >= 3, "need at least two intervals");
    let mut out = vec![0.0; n];
    let mut j = 2;
    while j < n {
        out[j] = out[j - 2] + h / 3.0 * (f[j - 2] + 4.0 * f[j - 1] + f[j]);
        j += 2;
    }
    let mut j = 1;
    while j < n {
        let step = if j + 1 < n {
            h / 12.0 * (5.0 * f[j - 1] + 8.0 * f[j] - f[j + 1])
        } else {
            h / 12.0 * (-f[j - 2] + 8.0 * f[j - 1] + 5.0 * f[j])
        };
        out[j] = out[j - 1] + step;
        j += 2;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_cubics_exactly_at_even_nodes() {
        let h = 0.1;
        let f: Vec<f64> = (0..=10).map(|i| (i as f64 * h).powi(3)).collect();
        let c = cumulative_simpson(&f, h);
        assert!((c[10] - 0.25).abs() < 1e-14);
    }

    #[test]
    fn odd_nodes_are_fourth_order() {
        let err = |n: usize| {
            let h = 1.0 / n as f64;
            let f: Vec<f64> = (0..=n).map(|i| (i as f64 * h).exp()).collect();
            let c = cumulative_simpson(&f, h);
            (0..=n)
                .map(|i| (c[i] - ((i as f64 * h).exp() - 1.0)).abs())
                .fold(0.0, f64::max)
        };
        let ratio = err(21) / err(43);
        assert!(ratio > 12.0, "convergence ratio {ratio}");
    }
}
