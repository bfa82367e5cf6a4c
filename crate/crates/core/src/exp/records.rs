//! Persisted results: CSV rows with versioned column sets, and JSON run
//! manifests.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::SystemConfig;
use super::runner::Scheme;
use crate::error::Result;

pub const SCHEMA_VERSION: u32 = 1;

pub const CURVE_COLUMNS: &[&str] = &["schema_version", "scheme", "seed", "episode", "mean_reward", "mean_latency"];
pub const STEP_COLUMNS: &[&str] = &[
    "schema_version",
    "episode",
    "step",
    "reward",
    "latency",
    "penalty",
    "participants",
    "feasible",
];
pub const SWEEP_COLUMNS: &[&str] = &[
    "schema_version",
    "axis",
    "value",
    "scheme",
    "seed",
    "latency",
    "reward",
    "feasible_fraction",
    "config_hash",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub schema_version: u32,
    pub scheme: String,
    pub seed: u64,
    pub episode: usize,
    pub mean_reward: f64,
    pub mean_latency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub schema_version: u32,
    pub episode: usize,
    pub step: usize,
    pub reward: f64,
    pub latency: f64,
    pub penalty: f64,
    pub participants: usize,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub schema_version: u32,
    pub axis: String,
    pub value: f64,
    pub scheme: String,
    pub seed: u64,
    pub latency: f64,
    pub reward: f64,
    pub feasible_fraction: f64,
    pub config_hash: String,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a header-only file when `rows` is empty, so the schema is always
/// visible.
pub fn write_csv_with_header<T: Serialize>(path: &Path, columns: &[&str], rows: &[T]) -> Result<()> {
    if rows.is_empty() {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(columns)?;
        w.flush()?;
        return Ok(());
    }
    write_csv(path, rows)
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

/// Summary of one training run, written next to its checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub scheme: Scheme,
    pub episodes: usize,
    pub episode_rewards: Vec<f64>,
    pub wall_clock_s: f64,
    pub checkpoint: Option<PathBuf>,
    pub config: SystemConfig,
}

impl RunRecord {
    pub fn write(&self, path: &Path) -> Result<()> {
        serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), self)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
    }
}
