use serde_json::json;

use super::output::{Cell, OutputDir};
use super::stages::{PathSeries, StageOutputs};
use crate::error::{Error, Result};

/// Plot-ready series derived from stage outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Theta,
    Mu,
    ClearingRate,
    ContractionRatios,
}

impl PlotKind {
    pub const ALL: [PlotKind; 4] = [PlotKind::Theta, PlotKind::Mu, PlotKind::ClearingRate, PlotKind::ContractionRatios];

    pub fn file_stem(self) -> &'static str {
        match self {
            PlotKind::Theta => "plot_theta",
            PlotKind::Mu => "plot_mu",
            PlotKind::ClearingRate => "plot_clearing_rate",
            PlotKind::ContractionRatios => "plot_contraction",
        }
    }

    /// Whether the stage this series comes from has run.
    pub fn available(self, outputs: &StageOutputs) -> bool {
        match self {
            PlotKind::Theta => outputs.theta.is_some(),
            PlotKind::Mu => outputs.mu.is_some(),
            PlotKind::ClearingRate => outputs.clearing.is_some(),
            PlotKind::ContractionRatios => outputs.mf.is_some(),
        }
    }
}

fn long_series(s: &PathSeries, symbol: &str) -> (Vec<&'static str>, Vec<Vec<Cell>>) {
    let steps = s.times.len();
    let mut rows = Vec::with_capacity(s.paths * steps * s.width);
    for p in 0..s.paths {
        for k in 0..steps {
            for c in 0..s.width {
                rows.push(vec![
                    Cell::Int(p as i64),
                    Cell::Float(s.times[k]),
                    Cell::Text(format!("{symbol}_{}", c + 1)),
                    Cell::Float(s.values[(p * steps + k) * s.width + c]),
                ]);
            }
        }
    }
    (vec!["path", "t", "component", "value"], rows)
}

/// Writes `<stem>.csv` and the sidecar `<stem>.json` with axis labels.
pub fn emit_plot_data(out: &mut OutputDir, outputs: &StageOutputs, kind: PlotKind) -> Result<()> {
    let missing = |stage: &str| Error::MissingStageOutput(format!("{} needs the {stage} stage", kind.file_stem()));
    let stem = kind.file_stem();
    let (header, rows, sidecar) = match kind {
        PlotKind::Theta | PlotKind::Mu => {
            let (series, symbol, label) = match kind {
                PlotKind::Theta => (outputs.theta.as_ref(), "theta", "market price of risk"),
                _ => (outputs.mu.as_ref(), "mu", "excess return"),
            };
            let s = series.ok_or_else(|| missing("equilibrium"))?;
            let (header, rows) = long_series(s, symbol);
            let deterministic = (1..s.paths).all(|p| {
                let n = s.times.len() * s.width;
                s.values[p * n..(p + 1) * n] == s.values[..n]
            });
            let sidecar = json!({
                "x": "t",
                "y": "value",
                "x_label": "time",
                "y_label": label,
                "series": "component",
                "group": "path",
                "paths": s.paths,
                "deterministic": deterministic,
            });
            (header, rows, sidecar)
        }
        PlotKind::ClearingRate => {
            let r = outputs.clearing.as_ref().ok_or_else(|| missing("clearing"))?;
            let logs: Vec<(f64, f64)> = r.ns.iter().zip(&r.eps).map(|(n, e)| ((*n as f64).ln(), e.ln())).collect();
            let intercept = r.slope.map(|slope| {
                let k = logs.len() as f64;
                let mx = logs.iter().map(|v| v.0).sum::<f64>() / k;
                let my = logs.iter().map(|v| v.1).sum::<f64>() / k;
                my - slope * mx
            });
            let rows = logs
                .iter()
                .map(|(x, y)| {
                    let fit = match (r.slope, intercept) {
                        (Some(s), Some(c)) => c + s * x,
                        _ => f64::NAN,
                    };
                    vec![Cell::Float(*x), Cell::Float(*y), Cell::Float(fit)]
                })
                .collect();
            let sidecar = json!({
                "x": "log_N",
                "y": "log_eps",
                "fit": "log_eps_fit",
                "x_label": "log N",
                "y_label": "log eps_N",
                "slope": r.slope,
                "intercept": intercept,
            });
            (vec!["log_N", "log_eps", "log_eps_fit"], rows, sidecar)
        }
        PlotKind::ContractionRatios => {
            let mf = outputs.mf.as_ref().ok_or_else(|| missing("mf-solve"))?;
            let rows = mf
                .ratios
                .iter()
                .enumerate()
                .map(|(j, r)| vec![Cell::Int(j as i64 + 2), Cell::Float(*r)])
                .collect();
            let sidecar = json!({
                "x": "iteration",
                "y": "ratio",
                "x_label": "Picard iteration",
                "y_label": "contraction ratio",
                "converged": mf.converged,
            });
            (vec!["iteration", "ratio"], rows, sidecar)
        }
    };
    out.write_csv(&format!("{stem}.csv"), &header, &rows)?;
    out.write_json(&format!("{stem}.json"), &sidecar)
}
