//! CSV results and the JSON run manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

use super::config::ExperimentSpec;
use super::experiment::TrialRecord;

pub const RESULTS_FILE: &str = "results.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub spec: ExperimentSpec,
    pub wall_time_s: f64,
    pub records: usize,
    pub failures: Vec<String>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `results.csv` and `manifest.json` into `dir` (created if needed)
/// and returns their paths.
pub fn emit_results(
    records: &[TrialRecord],
    manifest: &RunManifest,
    dir: &Path,
) -> Result<(PathBuf, PathBuf)> {
    if records.is_empty() {
        return Err(invalid("no records to write"));
    }
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let csv_path = dir.join(RESULTS_FILE);
    let mut w = csv::Writer::from_path(&csv_path).map_err(csv_err(&csv_path))?;
    for r in records {
        w.serialize(r).map_err(csv_err(&csv_path))?;
    }
    w.flush().map_err(io_err(&csv_path))?;
    let json_path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(&json_path, text).map_err(io_err(&json_path))?;
    Ok((csv_path, json_path))
}

pub fn read_records(path: &Path) -> Result<Vec<TrialRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize().map(|rec| rec.map_err(csv_err(path))).collect()
}

pub fn version_string() -> String {
    format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(i: u64) -> TrialRecord {
        TrialRecord {
            snr_db: 16.0 + 0.1 * i as f64,
            layer: 2,
            estimator: "ojcd".into(),
            mse: 1.0 / (3.0 + i as f64),
            ber: 7.0 / 896.0,
            bit_count: 896,
            error_count: 7,
            flops: 123_456_789,
            seed: i,
        }
    }

    fn manifest() -> RunManifest {
        RunManifest {
            version: version_string(),
            spec: ExperimentSpec::default(),
            wall_time_s: 1.5,
            records: 1,
            failures: vec![],
        }
    }

    #[test]
    fn single_record_file() {
        let dir = tempfile::tempdir().unwrap();
        let (csv_path, json_path) = emit_results(&[record(0)], &manifest(), dir.path()).unwrap();
        let text = std::fs::read_to_string(csv_path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], "snr_db,layer,estimator,mse,ber,bit_count,error_count,flops,seed");
        let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json_path).unwrap()).unwrap();
        for key in ["trials", "seed", "perfect_csi", "system", "jcd", "code"] {
            assert!(m["spec"].get(key).is_some(), "{key}");
        }
        assert!(m["spec"]["system"].get("n_r").is_some());
        assert!(emit_results(&[], &manifest(), dir.path()).is_err());
    }

    #[test]
    fn csv_roundtrip_exact() {
        let dir = tempfile::tempdir().unwrap();
        let recs: Vec<TrialRecord> = (0..20).map(record).collect();
        let (p, _) = emit_results(&recs, &manifest(), dir.path()).unwrap();
        assert_eq!(read_records(&p).unwrap(), recs);
    }

    #[test]
    fn io_errors_carry_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let err = emit_results(&[record(0)], &manifest(), &blocker.join("sub")).unwrap_err();
        assert!(err.to_string().contains("file"));
    }
}
