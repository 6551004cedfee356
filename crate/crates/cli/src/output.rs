//! Artifact writing: CSV tables, JSON report and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::ScenarioConfig;
use crate::error::CliError;
use crate::scenarios::{Check, RateRow, ScenarioOutcome, Snapshot, SweepRow, Table};

#[derive(Debug, Clone, Serialize)]
pub struct Artifact {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub scenario: String,
    pub config: ScenarioConfig,
    pub threads: usize,
    pub wall_time_s: f64,
    pub artifacts: Vec<Artifact>,
    pub checks: Vec<Check>,
    pub all_passed: bool,
    pub failure: Option<String>,
    pub last_good_snapshot: Option<String>,
}

#[derive(Serialize)]
struct Report<'a> {
    scenario: &'a str,
    metadata: &'a std::collections::BTreeMap<String, Value>,
    rates: &'a [RateRow],
    checks: &'a [Check],
    failure: &'a Option<String>,
}

fn hash_file(dir: &Path, name: &str) -> Result<Artifact, CliError> {
    let bytes = fs::read(dir.join(name))?;
    let digest = Sha256::digest(&bytes);
    Ok(Artifact {
        path: name.to_string(),
        sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
        bytes: bytes.len() as u64,
    })
}

pub fn write_table(path: &Path, table: &Table) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&table.columns)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|x| x.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// One row per (field, coefficient index).
pub fn write_snapshot(path: &Path, snap: &Snapshot) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "field", "index", "coeff"])?;
    for (f, name) in snap.fields.iter().enumerate() {
        for (i, c) in snap.coeffs.row(f).iter().enumerate() {
            w.write_record([snap.t.to_string(), name.clone(), i.to_string(), c.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Write every artifact of a run into `dir` and finish with manifest.json.
pub fn write_outcome(dir: &Path, cfg: &ScenarioConfig, out: &ScenarioOutcome, wall_time_s: f64) -> Result<RunManifest, CliError> {
    fs::create_dir_all(dir)?;
    let mut names = Vec::new();
    for t in &out.tables {
        let name = format!("{}.csv", t.name);
        write_table(&dir.join(&name), t)?;
        names.push(name);
    }
    let report = Report {
        scenario: out.kind.as_str(),
        metadata: &out.metadata,
        rates: &out.rates,
        checks: &out.checks,
        failure: &out.failure,
    };
    write_json(&dir.join("report.json"), &report)?;
    names.push("report.json".into());
    let mut snapshot_name = None;
    if let Some(s) = &out.snapshot {
        let name = if out.failure.is_some() { "last_good_snapshot.csv" } else { "final_state.csv" };
        write_snapshot(&dir.join(name), s)?;
        names.push(name.into());
        if out.failure.is_some() {
            snapshot_name = Some(name.to_string());
        }
    }
    let artifacts = names.iter().map(|n| hash_file(dir, n)).collect::<Result<Vec<_>, _>>()?;
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        scenario: out.kind.as_str().into(),
        config: cfg.clone(),
        threads: rayon::current_num_threads(),
        wall_time_s,
        artifacts,
        checks: out.checks.clone(),
        all_passed: out.passed(),
        failure: out.failure.clone(),
        last_good_snapshot: snapshot_name,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepManifest {
    pub tool: String,
    pub version: String,
    pub template: ScenarioConfig,
    pub grid: Vec<f64>,
    pub wall_time_s: f64,
    pub artifacts: Vec<Artifact>,
    pub failed_cells: Vec<f64>,
}

pub fn write_sweep(dir: &Path, template: &ScenarioConfig, grid: &[f64], rows: &[SweepRow], wall_time_s: f64) -> Result<SweepManifest, CliError> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("sweep.csv"))?;
    w.write_record([
        "cs2",
        "regime",
        "a_s",
        "tilt_rate_target",
        "tilt_rate_fitted",
        "v_hat_fitted",
        "rho2rs_hat_target",
        "rho2rs_hat_fitted",
        "checks_passed",
        "error",
    ])?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.cs2.to_string(),
            r.regime.clone(),
            r.a_s.to_string(),
            r.tilt_rate_target.to_string(),
            opt(r.tilt_rate_fitted),
            opt(r.v_hat_fitted),
            r.rho2rs_hat_target.to_string(),
            opt(r.rho2rs_hat_fitted),
            r.checks_passed.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    drop(w);
    write_json(&dir.join("sweep.json"), &rows)?;
    let artifacts = vec![hash_file(dir, "sweep.csv")?, hash_file(dir, "sweep.json")?];
    let manifest = SweepManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        template: template.clone(),
        grid: grid.to_vec(),
        wall_time_s,
        artifacts,
        failed_cells: rows.iter().filter(|r| r.error.is_some()).map(|r| r.cs2).collect(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn snapshot_path(dir: &Path, m: &RunManifest) -> Option<PathBuf> {
    m.last_good_snapshot.as_ref().map(|s| dir.join(s))
}
