use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::Override;
use crate::error::{Error, Result};

/// One CSV field.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format!("{v:.16e}"),
            Cell::Text(s) => s.clone(),
        }
    }
}

/// Output directory that remembers every file written to it.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: BTreeSet<String>,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf(), files: BTreeSet::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn files(&self) -> Vec<String> {
        self.files.iter().cloned().collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.files.contains(name)
    }

    /// Comma-separated, LF-terminated, header first; floats with 17 significant digits.
    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<Cell>]) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(self.root.join(name))
            .map_err(csv_err)?;
        w.write_record(header).map_err(csv_err)?;
        for row in rows {
            if row.len() != header.len() {
                return Err(Error::DimensionMismatch(format!("{name}: row of {} fields under {} columns", row.len(), header.len())));
            }
            w.write_record(row.iter().map(Cell::render)).map_err(csv_err)?;
        }
        w.flush()?;
        self.files.insert(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(self.root.join(name), text)?;
        self.files.insert(name.to_string());
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub passed: bool,
    /// Error message when the stage failed to run.
    pub error: Option<String>,
}

/// Written once at the end of every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario: String,
    pub config_hash: String,
    pub version: String,
    pub seed: u64,
    /// Present only when timing was requested, so that outputs stay reproducible by default.
    pub wall_clock_seconds: Option<f64>,
    pub stages: Vec<StageRecord>,
    pub overrides: Vec<Override>,
    pub files: Vec<String>,
}

pub const MANIFEST: &str = "manifest.json";

impl RunManifest {
    /// Lists every file of `out` plus the manifest itself and writes it.
    pub fn write(mut self, out: &mut OutputDir) -> Result<()> {
        let mut files = out.files();
        files.push(MANIFEST.to_string());
        files.sort();
        files.dedup();
        self.files = files;
        out.write_json(MANIFEST, &self)
    }
}
