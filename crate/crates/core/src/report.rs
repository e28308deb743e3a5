//! Serialization of run artifacts.
//!
//! Every artifact carries the resolved config and its content hash. Numbers
//! are written in shortest round-trip form; no wall-clock data is recorded, so
//! identical inputs give identical bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::path::{PathRecord, PATH_COLUMNS};
use crate::solver::IterationRecord;

pub const PATH_SCHEMA: &str = "riskpath-path/1";
pub const SOLVE_SCHEMA: &str = "riskpath-solve/1";
pub const KKT_SCHEMA: &str = "riskpath-kkt/1";
pub const SUMMARY_SCHEMA: &str = "riskpath-path-summary/1";
pub const VERIFY_SCHEMA: &str = "riskpath-verify/1";

/// File stem `path_<hash prefix>_seed<seed>` of the path table.
pub fn path_file_stem(cfg: &RunConfig) -> String {
    format!("path_{}_seed{}", &cfg.content_hash()[..16], cfg.scenarios.seed)
}

fn number(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:e}")
    }
}

fn preamble(cfg: &RunConfig, schema: &str) -> String {
    format!(
        "# schema={schema} config_hash={} seed={}\n# config={}\n",
        cfg.content_hash(),
        cfg.scenarios.seed,
        cfg.canonical_json()
    )
}

/// The path table: two comment lines (schema, hash, seed, config), the
/// header row [`PATH_COLUMNS`], then one row per penalty parameter.
pub fn path_csv(cfg: &RunConfig, records: &[PathRecord]) -> String {
    let mut out = preamble(cfg, PATH_SCHEMA);
    out.push_str(&PATH_COLUMNS.join(","));
    out.push('\n');
    for r in records {
        let row: Vec<String> = PATH_COLUMNS
            .iter()
            .map(|c| match *c {
                "iterations" => r.iterations.to_string(),
                "converged" => r.converged.to_string(),
                _ => number(r.field(c).expect("column is known")),
            })
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// One line per iteration: `iter j_gamma stationarity step`.
pub fn iteration_log(cfg: &RunConfig, log: &[IterationRecord]) -> String {
    let mut out = preamble(cfg, SOLVE_SCHEMA);
    out.push_str("# iter j_gamma stationarity step\n");
    for r in log {
        let _ = writeln!(out, "{} {} {} {}", r.iter, number(r.j_gamma), number(r.stationarity), number(r.step));
    }
    out
}

/// Wraps a payload with the schema tag and the config echo.
#[derive(Serialize)]
pub struct Envelope<'a, T: Serialize> {
    pub schema: &'a str,
    pub config_hash: String,
    pub config: serde_json::Value,
    #[serde(flatten)]
    pub payload: T,
}

pub fn envelope<'a, T: Serialize>(cfg: &RunConfig, schema: &'a str, payload: T) -> Envelope<'a, T> {
    Envelope {
        schema,
        config_hash: cfg.content_hash(),
        config: cfg.canonical_value(),
        payload,
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report is serializable");
    s.push('\n');
    s
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
