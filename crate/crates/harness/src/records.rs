//! Per-epoch metric records and their CSV form.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{io_err, HarnessError, Result};

/// First line of every metrics CSV.
pub const SCHEMA_LINE: &str = "# fire-metrics schema v1";

pub const COLUMNS: [&str; 16] = [
    "run_id",
    "method",
    "seed",
    "chunk",
    "epoch",
    "split",
    "step",
    "loss",
    "accuracy",
    "mean_dfi",
    "dfi",
    "sfe_reset",
    "srank",
    "dormant",
    "hessian_sigma_max",
    "wall_seconds",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// One row. Epoch 0 of a chunk is the state right after reinitialization,
/// before any training on that chunk. Per-layer fields are empty when not
/// measured on this row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub run_id: String,
    pub method: String,
    pub seed: u64,
    pub chunk: usize,
    pub epoch: usize,
    pub split: Split,
    pub step: u64,
    pub loss: f64,
    pub accuracy: f64,
    pub dfi: Vec<f64>,
    /// SFE between the weights just before and just after the chunk-start
    /// reinitialization; only on epoch-0 rows of chunks after the first.
    pub sfe_reset: Option<f64>,
    pub srank: Vec<usize>,
    pub dormant: Option<usize>,
    pub hessian_sigma_max: Option<f64>,
    pub wall_seconds: f64,
}

impl MetricRecord {
    pub fn mean_dfi(&self) -> Option<f64> {
        if self.dfi.is_empty() {
            None
        } else {
            Some(self.dfi.iter().sum::<f64>() / self.dfi.len() as f64)
        }
    }

    /// Same record with the wall-clock column zeroed, for reproducibility checks.
    pub fn without_wall_clock(&self) -> MetricRecord {
        MetricRecord {
            wall_seconds: 0.0,
            ..self.clone()
        }
    }

    fn to_fields(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let join = |v: Vec<String>| v.join(";");
        vec![
            self.run_id.clone(),
            self.method.clone(),
            self.seed.to_string(),
            self.chunk.to_string(),
            self.epoch.to_string(),
            self.split.as_str().to_string(),
            self.step.to_string(),
            self.loss.to_string(),
            self.accuracy.to_string(),
            opt(self.mean_dfi()),
            join(self.dfi.iter().map(f64::to_string).collect()),
            opt(self.sfe_reset),
            join(self.srank.iter().map(usize::to_string).collect()),
            self.dormant.map(|d| d.to_string()).unwrap_or_default(),
            opt(self.hessian_sigma_max),
            self.wall_seconds.to_string(),
        ]
    }

    fn from_fields(rec: &csv::StringRecord) -> std::result::Result<Self, String> {
        if rec.len() != COLUMNS.len() {
            return Err(format!("expected {} fields, found {}", COLUMNS.len(), rec.len()));
        }
        fn num<T: std::str::FromStr>(s: &str, col: &str) -> std::result::Result<T, String> {
            s.parse().map_err(|_| format!("bad {col} value {s:?}"))
        }
        fn opt<T: std::str::FromStr>(s: &str, col: &str) -> std::result::Result<Option<T>, String> {
            if s.is_empty() {
                Ok(None)
            } else {
                num(s, col).map(Some)
            }
        }
        fn list<T: std::str::FromStr>(s: &str, col: &str) -> std::result::Result<Vec<T>, String> {
            if s.is_empty() {
                Ok(Vec::new())
            } else {
                s.split(';').map(|p| num(p, col)).collect()
            }
        }
        let split = match &rec[5] {
            "train" => Split::Train,
            "test" => Split::Test,
            other => return Err(format!("bad split {other:?}")),
        };
        Ok(MetricRecord {
            run_id: rec[0].to_string(),
            method: rec[1].to_string(),
            seed: num(&rec[2], "seed")?,
            chunk: num(&rec[3], "chunk")?,
            epoch: num(&rec[4], "epoch")?,
            split,
            step: num(&rec[6], "step")?,
            loss: num(&rec[7], "loss")?,
            accuracy: num(&rec[8], "accuracy")?,
            dfi: list(&rec[10], "dfi")?,
            sfe_reset: opt(&rec[11], "sfe_reset")?,
            srank: list(&rec[12], "srank")?,
            dormant: opt(&rec[13], "dormant")?,
            hessian_sigma_max: opt(&rec[14], "hessian_sigma_max")?,
            wall_seconds: num(&rec[15], "wall_seconds")?,
        })
    }
}

/// Appends records to a CSV file, flushing after each one.
pub struct RecordWriter {
    path: PathBuf,
    inner: csv::Writer<File>,
}

impl RecordWriter {
    /// Creates (or truncates) `path` and writes the schema and header lines.
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let mut file = File::create(path).map_err(io_err(path))?;
        writeln!(file, "{SCHEMA_LINE}").map_err(io_err(path))?;
        let mut inner = csv::Writer::from_writer(file);
        inner.write_record(COLUMNS).map_err(|e| csv_err(path, e))?;
        inner.flush().map_err(io_err(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            inner,
        })
    }

    pub fn write(&mut self, rec: &MetricRecord) -> Result<()> {
        self.inner
            .write_record(rec.to_fields())
            .map_err(|e| csv_err(&self.path, e))?;
        self.inner.flush().map_err(io_err(&self.path))
    }
}

fn csv_err(path: &Path, e: csv::Error) -> HarnessError {
    HarnessError::Records {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

pub fn read_records(path: &Path) -> Result<Vec<MetricRecord>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(io_err(path))?;
    if first.trim_end() != SCHEMA_LINE {
        return Err(HarnessError::Records {
            path: path.to_path_buf(),
            reason: format!("missing schema line, found {:?}", first.trim_end()),
        });
    }
    let mut csv_reader = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in csv_reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let parsed = MetricRecord::from_fields(&rec).map_err(|reason| HarnessError::Records {
            path: path.to_path_buf(),
            reason: format!("row {}: {reason}", i + 1),
        })?;
        out.push(parsed);
    }
    Ok(out)
}
