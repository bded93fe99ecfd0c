//! Scenario runner behind the `mfgeq` binary: configuration, stage
//! orchestration, CSV/JSON outputs, plot series and the run manifest.

pub mod config;
pub mod output;
pub mod plot;
pub mod stages;

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

pub use config::{Override, ScenarioConfig};
pub use output::{Cell, OutputDir, RunManifest, StageRecord, MANIFEST};
pub use plot::{emit_plot_data, PlotKind};
pub use stages::{Pipeline, Stage, StageOutputs};

use crate::error::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// A single stage or the whole pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Stage(Stage),
    All,
}

impl Command {
    pub fn stages(self) -> Vec<Stage> {
        match self {
            Command::Stage(s) => vec![s],
            Command::All => Stage::ALL.to_vec(),
        }
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(Command::All);
        }
        Stage::ALL
            .iter()
            .find(|st| st.name() == s)
            .map(|st| Command::Stage(*st))
            .ok_or_else(|| Error::Config(format!("unknown subcommand `{s}`")))
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config: PathBuf,
    pub sets: Vec<String>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    /// Beats `OUTPUT_DIR`, which beats the config file.
    pub out: Option<PathBuf>,
    /// Adds wall-clock time to the manifest, which makes it differ between runs.
    pub record_timing: bool,
}

/// Effective configuration and overrides after applying the command line.
pub fn resolve_config(opts: &RunOptions) -> Result<(ScenarioConfig, Vec<Override>)> {
    let base = ScenarioConfig::load(&opts.config)?;
    let mut sets = opts.sets.clone();
    if let Some(seed) = opts.seed {
        sets.push(format!("seed={seed}"));
    }
    base.with_overrides(&sets)
}

fn output_root(cfg: &ScenarioConfig, opts: &RunOptions) -> PathBuf {
    if let Some(p) = &opts.out {
        return p.clone();
    }
    match std::env::var_os("OUTPUT_DIR") {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(&cfg.output_dir),
    }
}

/// Runs `stages` and writes their outputs, the plot series and the manifest to `root`.
pub fn run_stages(
    cfg: &ScenarioConfig,
    overrides: Vec<Override>,
    stages: &[Stage],
    root: &Path,
    record_timing: bool,
) -> Result<RunManifest> {
    let start = Instant::now();
    let mut out = OutputDir::create(root)?;
    let mut doc = serde_json::to_value(cfg)?;
    if let Some(map) = doc.as_object_mut() {
        map.remove("output_dir");
    }
    out.write_json("config.json", &doc)?;
    let mut pipeline = Pipeline::new(cfg)?;
    let mut records = Vec::with_capacity(stages.len());
    for &stage in stages {
        let rec = match pipeline.run(stage, &mut out) {
            Ok(passed) => StageRecord { stage: stage.name().into(), passed, error: None },
            Err(e) => StageRecord { stage: stage.name().into(), passed: false, error: Some(e.to_string()) },
        };
        records.push(rec);
    }
    for kind in PlotKind::ALL {
        if kind.available(&pipeline.outputs) {
            emit_plot_data(&mut out, &pipeline.outputs, kind)?;
        }
    }
    let manifest = RunManifest {
        scenario: cfg.name.clone(),
        config_hash: cfg.hash(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        wall_clock_seconds: record_timing.then(|| start.elapsed().as_secs_f64()),
        stages: records,
        overrides,
        files: Vec::new(),
    };
    manifest.clone().write(&mut out)?;
    Ok(RunManifest { files: out.files(), ..manifest })
}

/// Resolves the configuration, runs the command on a pool of `threads` workers and returns the manifest.
pub fn run(command: Command, opts: &RunOptions) -> Result<RunManifest> {
    let (cfg, overrides) = resolve_config(opts)?;
    let root = output_root(&cfg, opts);
    let stages = command.stages();
    let go = || run_stages(&cfg, overrides.clone(), &stages, &root, opts.record_timing);
    match opts.threads {
        Some(0) => Err(Error::Config("--threads must be positive".into())),
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(go),
        None => go(),
    }
}

/// Exit code of a finished run: 0 when every stage passed, 1 on any failure, 2 on configuration errors.
pub fn exit_code(result: &Result<RunManifest>) -> i32 {
    match result {
        Ok(m) if m.stages.iter().all(|s| s.passed) => EXIT_OK,
        Ok(_) => EXIT_FAILED,
        Err(Error::Config(_)) => EXIT_CONFIG,
        Err(_) => EXIT_FAILED,
    }
}
