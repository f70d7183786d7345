//! Config loading, report files and binary formats.

pub mod bankfile;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::harness::{Aggregate, AuditEntry, PairedDifference, ReportRow, RunConfig, RunReport};
use crate::learner::EpochReport;

pub use bankfile::{bank_export, bank_import, decode_bank, decode_params, encode_bank, encode_params};

/// Parse a JSON run config. Unknown keys and type errors are reported with the
/// dotted path of the offending field, then the result is validated.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(if path == "." { "<root>".into() } else { path }, e.into_inner().to_string())
    })?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    parse_config(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// SHA-256 of the config's canonical JSON form.
pub fn config_hash(config: &RunConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary<'a> {
    pub experiment: &'a str,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub aggregates: Vec<Aggregate>,
    pub paired: Vec<PairedDifference>,
    pub rows: &'a [ReportRow],
    pub audit: &'a [AuditEntry],
    pub config: &'a RunConfig,
}

pub fn summary<'a>(
    report: &'a RunReport,
    config: &'a RunConfig,
    paired: Vec<PairedDifference>,
) -> Summary<'a> {
    Summary {
        experiment: &report.experiment,
        config_hash: config_hash(config),
        seeds: config.seeds(),
        aggregates: report.aggregates(),
        paired,
        rows: &report.rows,
        audit: &report.audit,
        config,
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Write `report.csv` and `summary.json` into `dir`, creating it if needed.
pub fn write_report(
    dir: &Path,
    report: &RunReport,
    config: &RunConfig,
    paired: Vec<PairedDifference>,
) -> Result<()> {
    ensure_dir(dir)?;
    write(&dir.join("report.csv"), report.to_csv())?;
    let json = serde_json::to_string_pretty(&summary(report, config, paired))
        .expect("summary holds only JSON-representable values");
    write(&dir.join("summary.json"), json + "\n")
}

pub fn curve_csv(curve: &[EpochReport]) -> String {
    let mut out = String::from("epoch,mean_ce,correct_fraction\n");
    for e in curve {
        let _ = writeln!(out, "{},{:.6},{:.6}", e.epoch, e.loss.mean_ce, e.loss.correct_fraction);
    }
    out
}

pub fn write_curve(path: &Path, curve: &[EpochReport]) -> Result<()> {
    write(path, curve_csv(curve))
}

pub fn write_params(path: &Path, params: &crate::fusion::MlpParams<f32>) -> Result<()> {
    write(path, encode_params(params)?)
}

pub fn read_params(path: &Path) -> Result<crate::fusion::MlpParams<f32>> {
    decode_params(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
