//! File formats: record CSV/JSON, estimate tables, and JSON helpers.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use hqm_core::estimators::WindowCounts;
use hqm_core::netsim::DetectionRecord;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub schema_version: u32,
    pub artifact_version: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Metadata {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            artifact_version: ARTIFACT_VERSION.to_string(),
            config_hash: config_hash.into(),
            seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordFormat {
    Csv,
    Json,
}

impl RecordFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            RecordFormat::Csv => "csv",
            RecordFormat::Json => "json",
        }
    }
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>, CliError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
    }
    let f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(std::io::BufWriter::new(f))
}

/// `# key=value` provenance line followed by a plain CSV table.
pub fn write_csv(path: &Path, meta: &Metadata, header: &str, rows: &[String]) -> Result<(), CliError> {
    let mut w = create(path)?;
    let io = |e| CliError::io(path, e);
    writeln!(
        w,
        "# schema_version={} artifact_version={} config_hash={} seed={}",
        meta.schema_version, meta.artifact_version, meta.config_hash, meta.seed
    )
    .map_err(io)?;
    writeln!(w, "{header}").map_err(io)?;
    for r in rows {
        writeln!(w, "{r}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_records(
    path: &Path,
    meta: &Metadata,
    records: &[DetectionRecord],
    format: RecordFormat,
) -> Result<(), CliError> {
    match format {
        RecordFormat::Csv => {
            let rows: Vec<String> = records
                .iter()
                .map(|r| format!("{},{},{}", r.trial_id, r.detector, r.time))
                .collect();
            write_csv(path, meta, "trial_id,detector,time_ns", &rows)
        }
        RecordFormat::Json => {
            #[derive(Serialize)]
            struct Doc<'a> {
                metadata: &'a Metadata,
                records: &'a [DetectionRecord],
            }
            write_json(
                path,
                &Doc {
                    metadata: meta,
                    records,
                },
            )
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    let io = |e| CliError::io(path, e);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Runtime(e.to_string()))?;
    writeln!(w).map_err(io)?;
    w.flush().map_err(io)
}

/// One correlation estimate between two windows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairEstimate {
    pub a: String,
    pub b: String,
    /// Absent when a window saw no clicks.
    pub value: Option<f64>,
    pub std_err: Option<f64>,
    pub n_coinc: u64,
    pub n_a: u64,
    pub n_b: u64,
    pub upper_bound: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub index: usize,
    pub tau1_ns: Option<f64>,
    pub seed: u64,
    pub n_trials: u64,
    pub windows: Vec<String>,
    pub singles: Vec<u64>,
    pub estimates: Vec<PairEstimate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub metadata: Metadata,
    pub name: String,
    pub rows: Vec<ResultRow>,
}

fn is_herald(label: &str) -> bool {
    label.starts_with('S')
}

/// Herald-versus-signal correlations for every pair of windows, plus the
/// unheralded anti-Stokes auto-correlation when both HBT arms are present.
pub fn estimates(counts: &WindowCounts) -> Vec<PairEstimate> {
    let n = counts.labels.len();
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&counts.labels[i], &counts.labels[j]);
            let cross = is_herald(a) != is_herald(b);
            let hbt = a == "AS_A" && b == "AS_B";
            if !(cross || hbt) {
                continue;
            }
            let (hi, si) = if is_herald(b) && !is_herald(a) { (j, i) } else { (i, j) };
            let g = counts.g2(hi, si).ok();
            out.push(PairEstimate {
                a: counts.labels[hi].clone(),
                b: counts.labels[si].clone(),
                value: g.as_ref().map(|g| g.value),
                std_err: g.as_ref().map(|g| g.std_err),
                n_coinc: counts.coincidences(hi, si),
                n_a: counts.singles[hi],
                n_b: counts.singles[si],
                upper_bound: g.is_some_and(|g| g.upper_bound),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use hqm_core::netsim::DetectorId;
    use hqm_core::TimeNs;

    #[test]
    fn record_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let recs = vec![
            DetectionRecord {
                trial_id: 0,
                detector: DetectorId::S,
                time: TimeNs::from_ns(1000.0),
            },
            DetectionRecord {
                trial_id: 3,
                detector: DetectorId::AsB,
                time: TimeNs::from_ns(1040.4),
            },
        ];
        write_records(&p, &Metadata::new("abc", 7), &recs, RecordFormat::Csv).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# schema_version=1"));
        assert!(lines[0].contains("config_hash=abc"));
        assert_eq!(lines[1], "trial_id,detector,time_ns");
        assert_eq!(lines[2], "0,S,1000.000");
        assert_eq!(lines[3], "3,AS_B,1040.400");
    }
}
