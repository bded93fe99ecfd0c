//! Running pipeline stages from a scenario file with overrides, as the
//! `mfgeq` binary does. Pass a config path, or the smoke scenario is used.

use std::path::PathBuf;

use mfg_equilibrium::runner::{run, Command, RunOptions};

fn main() -> mfg_equilibrium::Result<()> {
    let config = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/smoke.json")));
    let out = std::env::temp_dir().join("mfgeq_example");
    let opts = RunOptions {
        config,
        sets: vec!["eqg.plot_paths=2".into()],
        out: Some(out.clone()),
        ..Default::default()
    };
    let manifest = run(Command::All, &opts)?;
    for s in &manifest.stages {
        println!("{:<12} {}", s.stage, if s.passed { "pass" } else { "FAIL" });
    }
    println!("config hash {}", manifest.config_hash);
    println!("{} files in {}", manifest.files.len(), out.display());
    Ok(())
}
