//! `results.csv` and `meta.json` writers.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::provenance::BUILD_ID;
use crate::Result;

pub const RESULTS_FORMAT: &str = "holofit-results";
/// Version of the CSV column layout, checked by downstream readers.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Meta {
    pub format: String,
    pub schema_version: u32,
    pub experiment: String,
    pub build_id: String,
    pub config_digest: String,
    pub master_seed: u64,
    pub threads: usize,
    pub columns: Vec<String>,
    pub rows: usize,
    pub elapsed_seconds: f64,
    pub config: serde_json::Value,
    pub summary: serde_json::Value,
}

/// Run-level facts shared by every row and by `meta.json`.
#[derive(Clone, Debug)]
pub struct RunContext {
    pub experiment: String,
    pub config_digest: String,
    pub master_seed: u64,
    pub threads: usize,
}

fn header_of<R: Serialize>(rows: &[R]) -> Result<Vec<String>> {
    let Some(first) = rows.first() else {
        return Ok(Vec::new());
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.serialize(first)?;
    let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    Ok(r.headers()?.iter().map(str::to_string).collect())
}

/// Write `results.csv` and `meta.json` into `dir`.
pub fn write_outputs<R: Serialize, C: Serialize, S: Serialize>(
    dir: &Path,
    ctx: &RunContext,
    config: &C,
    rows: &[R],
    summary: &S,
    elapsed_seconds: f64,
) -> Result<Meta> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("results.csv"))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let meta = Meta {
        format: RESULTS_FORMAT.into(),
        schema_version: SCHEMA_VERSION,
        experiment: ctx.experiment.clone(),
        build_id: BUILD_ID.into(),
        config_digest: ctx.config_digest.clone(),
        master_seed: ctx.master_seed,
        threads: ctx.threads,
        columns: header_of(rows)?,
        rows: rows.len(),
        elapsed_seconds,
        config: serde_json::to_value(config)?,
        summary: serde_json::to_value(summary)?,
    };
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(meta)
}
