use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::bsde::{BasisSpec, Perturbation, SolverSettings};
use crate::clearing::{ClearingSettings, PopulationSpec};
use crate::error::{Error, Result};
use crate::mean_field::MeanFieldSettings;
use crate::model::{validate_market, FactorSpec, MarketSpec, TimeGrid};
use crate::scenario::{default_factor, default_gamma, default_market, Liability};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub horizon: f64,
    pub steps: usize,
}

/// Factor dynamics, liability and the closed-form checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EqgConfig {
    pub factor: FactorSpec,
    pub liability: Liability,
    pub riccati_substeps: usize,
    pub riccati_tolerance: f64,
    pub martingale_paths: usize,
    pub martingale_steps: usize,
    /// Equilibrium paths written to the theta and mu series.
    pub plot_paths: usize,
    /// Grids for the stochastic Fubini check, run with `a = 0`.
    pub fubini_steps: Vec<usize>,
    pub fubini_paths: usize,
}

impl Default for EqgConfig {
    fn default() -> Self {
        Self {
            factor: default_factor(),
            liability: Liability::Additive,
            riccati_substeps: 10_000,
            riccati_tolerance: 1e-8,
            martingale_paths: 100_000,
            martingale_steps: 200,
            plot_paths: 5,
            fubini_steps: vec![50, 200, 800],
            fubini_paths: 1000,
        }
    }
}

/// Single representative agent against the closed-form price of risk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BsdeConfig {
    pub paths: usize,
    /// Regression basis; the liability's own basis when absent.
    pub basis: Option<BasisSpec>,
    pub ridge: f64,
    pub settings: SolverSettings,
    pub y0_tolerance: f64,
    pub z0_tolerance: f64,
    pub measure_tolerance: f64,
    pub xi: f64,
    pub perturbations: Vec<Perturbation>,
}

impl Default for BsdeConfig {
    fn default() -> Self {
        Self {
            paths: 10_000,
            basis: None,
            ridge: 1e-8,
            settings: SolverSettings::default(),
            y0_tolerance: 0.02,
            z0_tolerance: 0.05,
            measure_tolerance: 0.02,
            xi: 0.0,
            perturbations: vec![
                Perturbation::Shift(vec![0.5, 0.0]),
                Perturbation::Shift(vec![0.0, -0.5]),
                Perturbation::Shift(vec![-0.3, 0.3]),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MfConfig {
    pub common_paths: usize,
    /// Idiosyncratic paths per common path, shared by every risk-aversion type.
    pub idio_per_type: usize,
    pub basis: Option<BasisSpec>,
    pub ridge: f64,
    pub settings: MeanFieldSettings,
    /// Replaces the default Lipschitz constant in the smallness test.
    pub lipschitz: Option<f64>,
    pub y0_tolerance: f64,
}

impl Default for MfConfig {
    fn default() -> Self {
        Self {
            common_paths: 5000,
            idio_per_type: 4,
            basis: None,
            ridge: 1e-8,
            settings: MeanFieldSettings::default(),
            lipschitz: None,
            y0_tolerance: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClearingConfig {
    pub ns: Vec<usize>,
    pub m0: usize,
    pub batches: usize,
    pub tolerance: f64,
    pub slope_range: [f64; 2],
}

impl Default for ClearingConfig {
    fn default() -> Self {
        let s = ClearingSettings::default();
        Self { ns: s.ns, m0: s.m0, batches: s.batches, tolerance: s.tolerance, slope_range: [-1.3, -0.7] }
    }
}

impl ClearingConfig {
    pub fn settings(&self) -> ClearingSettings {
        ClearingSettings { ns: self.ns.clone(), m0: self.m0, batches: self.batches, tolerance: self.tolerance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InvarianceConfig {
    pub trials: usize,
    pub scale: f64,
    pub cond_cap: f64,
    pub tolerance: f64,
}

impl Default for InvarianceConfig {
    fn default() -> Self {
        Self { trials: 100, scale: 0.3, cond_cap: 50.0, tolerance: 1e-10 }
    }
}

/// One scenario: every stage reads its block from here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    pub grid: GridConfig,
    pub market: MarketSpec,
    #[serde(default)]
    pub eqg: EqgConfig,
    pub population: PopulationSpec,
    #[serde(default)]
    pub bsde: BsdeConfig,
    #[serde(default)]
    pub mf: MfConfig,
    #[serde(default)]
    pub clearing: ClearingConfig,
    #[serde(default)]
    pub invariance: InvarianceConfig,
}

fn default_output_dir() -> String {
    "out".into()
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            seed: 7,
            output_dir: default_output_dir(),
            grid: GridConfig { horizon: 1.0, steps: 50 },
            market: default_market(),
            eqg: EqgConfig::default(),
            population: PopulationSpec { gamma: default_gamma(), xi_mean: 0.0, xi_std: 0.0 },
            bsde: BsdeConfig::default(),
            mf: MfConfig::default(),
            clearing: ClearingConfig::default(),
            invariance: InvarianceConfig::default(),
        }
    }
}

/// A `--set key=value` override and the value it replaced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Override {
    pub key: String,
    pub value: Value,
    pub previous: Value,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| config_err(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.grid.horizon, self.grid.steps)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| config_err(e.to_string());
        self.time_grid().map_err(wrap)?;
        validate_market(&self.market).map_err(wrap)?;
        if (self.market.horizon - self.grid.horizon).abs() > 1e-12 {
            return Err(config_err(format!(
                "market horizon {} differs from grid horizon {}",
                self.market.horizon, self.grid.horizon
            )));
        }
        self.eqg.factor.validate().map_err(wrap)?;
        if self.eqg.factor.delta.len() != self.market.d0 {
            return Err(config_err(format!(
                "factor loads on {} common noises, market has {}",
                self.eqg.factor.delta.len(),
                self.market.d0
            )));
        }
        self.eqg.liability.validate().map_err(wrap)?;
        self.population.gamma.validate().map_err(wrap)?;
        let positive = [
            ("eqg.riccati_substeps", self.eqg.riccati_substeps),
            ("eqg.martingale_paths", self.eqg.martingale_paths),
            ("eqg.martingale_steps", self.eqg.martingale_steps),
            ("eqg.fubini_paths", self.eqg.fubini_paths),
            ("bsde.paths", self.bsde.paths),
            ("mf.common_paths", self.mf.common_paths),
            ("mf.idio_per_type", self.mf.idio_per_type),
            ("clearing.m0", self.clearing.m0),
            ("invariance.trials", self.invariance.trials),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(config_err(format!("{k} must be positive")));
        }
        for p in &self.bsde.perturbations {
            if let Perturbation::Shift(v) = p {
                if v.len() != self.market.n {
                    return Err(config_err(format!("shift perturbation has {} entries for {} stocks", v.len(), self.market.n)));
                }
            }
        }
        if self.eqg.fubini_steps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(config_err("eqg.fubini_steps must be strictly increasing"));
        }
        let ns = &self.clearing.ns;
        if ns.is_empty() || ns[0] == 0 || ns.windows(2).any(|w| w[1] <= w[0]) {
            return Err(config_err("clearing.ns must be positive and strictly increasing"));
        }
        if self.clearing.slope_range[0] > self.clearing.slope_range[1] {
            return Err(config_err("clearing.slope_range must be ordered"));
        }
        Ok(())
    }

    /// SHA-256 of the compact JSON serialization, without the output directory.
    pub fn hash(&self) -> String {
        let mut doc = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = doc.as_object_mut() {
            map.remove("output_dir");
        }
        let text = doc.to_string();
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Applies dotted-path overrides. Each key must name an existing field;
    /// values are parsed as JSON and fall back to strings.
    pub fn with_overrides(&self, sets: &[String]) -> Result<(Self, Vec<Override>)> {
        let mut doc = serde_json::to_value(self).map_err(|e| config_err(e.to_string()))?;
        let mut record = Vec::with_capacity(sets.len());
        for item in sets {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| config_err(format!("override `{item}` is not key=value")))?;
            let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let slot = lookup(&mut doc, key)?;
            record.push(Override { key: key.to_string(), value: value.clone(), previous: slot.clone() });
            *slot = value;
        }
        let cfg: Self = serde_json::from_value(doc).map_err(|e| config_err(format!("after overrides: {e}")))?;
        cfg.validate()?;
        Ok((cfg, record))
    }
}

fn lookup<'a>(doc: &'a mut Value, key: &str) -> Result<&'a mut Value> {
    let mut cur = doc;
    for part in key.split('.') {
        cur = match cur {
            Value::Object(map) => map.get_mut(part),
            Value::Array(items) => part.parse::<usize>().ok().and_then(move |i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| config_err(format!("unknown config key `{key}`")))?;
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = ScenarioConfig::default();
        cfg.validate().unwrap();
        let back = ScenarioConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        let moved = ScenarioConfig { output_dir: "elsewhere".into(), ..cfg.clone() };
        assert_eq!(moved.hash(), cfg.hash());
    }

    #[test]
    fn overrides_replace_and_record() {
        let cfg = ScenarioConfig::default();
        let sets = vec!["eqg.factor.a=0".to_string(), "seed=11".to_string(), "name=probe".to_string()];
        let (out, rec) = cfg.with_overrides(&sets).unwrap();
        assert_eq!(out.eqg.factor.a, 0.0);
        assert_eq!(out.seed, 11);
        assert_eq!(out.name, "probe");
        assert_eq!(rec[0].previous, serde_json::json!(-0.2));
        assert_ne!(out.hash(), cfg.hash());
    }

    #[test]
    fn bad_overrides_are_config_errors() {
        let cfg = ScenarioConfig::default();
        for bad in ["eqg.factor.nope=1", "seed", "grid.steps=1", "market.sigma.Constant.7=1"] {
            assert!(matches!(cfg.with_overrides(&[bad.to_string()]), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn unknown_fields_and_horizon_mismatch_are_rejected() {
        let mut v = serde_json::to_value(ScenarioConfig::default()).unwrap();
        v["extra"] = serde_json::json!(1);
        assert!(ScenarioConfig::from_json(&v.to_string()).is_err());
        let mut cfg = ScenarioConfig::default();
        cfg.grid.horizon = 2.0;
        assert!(cfg.validate().is_err());
    }
}
