//! Aggregates run CSVs into per-method summary tables.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{io_err, HarnessError, Result};
use crate::records::{read_records, MetricRecord, Split, SCHEMA_LINE};

pub const SUMMARY_CSV: &str = "summary.csv";
pub const SUMMARY_TXT: &str = "summary.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run_id: String,
    pub method: String,
    pub seed: u64,
    /// Test accuracy of the last logged epoch.
    pub final_accuracy: f64,
    /// Largest test-accuracy drop from the end of a chunk to the start of
    /// the next one; zero for single-chunk runs.
    pub max_drop: f64,
    /// Mean per-layer DfI right after each reinitialization.
    pub mean_dfi: Option<f64>,
    /// Mean SFE of the reinitializations.
    pub mean_sfe: Option<f64>,
    /// Mean Hessian spectral norm right after each reinitialization.
    pub mean_hessian: Option<f64>,
    /// Mean Hessian spectral norm at the end of each chunk that began with
    /// a reinitialization.
    pub mean_hessian_trained: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Mean and sample standard deviation; a single value has std 0.
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub runs: usize,
    pub final_accuracy: Stat,
    pub max_drop: Stat,
    pub mean_dfi: Option<Stat>,
    pub mean_sfe: Option<Stat>,
}

fn mean(v: &[f64]) -> Option<f64> {
    Stat::of(v).map(|s| s.mean)
}

/// Summary of one run's records (a single run id).
pub fn summarize_run(records: &[MetricRecord]) -> Option<RunSummary> {
    let first = records.first()?;
    let test: Vec<&MetricRecord> = records.iter().filter(|r| r.split == Split::Test).collect();
    let last = test.iter().max_by_key(|r| (r.chunk, r.epoch))?;
    let mut end_of_chunk: BTreeMap<usize, &MetricRecord> = BTreeMap::new();
    for r in &test {
        let e = end_of_chunk.entry(r.chunk).or_insert(r);
        if r.epoch > e.epoch {
            *e = r;
        }
    }
    let starts: Vec<&&MetricRecord> = test.iter().filter(|r| r.epoch == 0 && r.chunk > 0).collect();
    let max_drop = starts
        .iter()
        .filter_map(|s| end_of_chunk.get(&(s.chunk - 1)).map(|e| e.accuracy - s.accuracy))
        .fold(0.0f64, f64::max);
    let dfis: Vec<f64> = starts.iter().filter_map(|r| r.mean_dfi()).collect();
    let sfes: Vec<f64> = starts.iter().filter_map(|r| r.sfe_reset).collect();
    let hess: Vec<f64> = starts.iter().filter_map(|r| r.hessian_sigma_max).collect();
    let hess_trained: Vec<f64> = end_of_chunk
        .range(1..)
        .filter_map(|(_, r)| r.hessian_sigma_max)
        .collect();
    Some(RunSummary {
        run_id: first.run_id.clone(),
        method: first.method.clone(),
        seed: first.seed,
        final_accuracy: last.accuracy,
        max_drop,
        mean_dfi: mean(&dfis),
        mean_sfe: mean(&sfes),
        mean_hessian: mean(&hess),
        mean_hessian_trained: mean(&hess_trained),
    })
}

/// Per-run summaries grouped by run id, sorted by run id.
pub fn summarize_runs(records: &[MetricRecord]) -> Vec<RunSummary> {
    let mut by_run: BTreeMap<&str, Vec<MetricRecord>> = BTreeMap::new();
    for r in records {
        by_run.entry(&r.run_id).or_default().push(r.clone());
    }
    by_run.values().filter_map(|rs| summarize_run(rs)).collect()
}

pub fn summarize_methods(runs: &[RunSummary]) -> Vec<SummaryRow> {
    let mut by_method: BTreeMap<&str, Vec<&RunSummary>> = BTreeMap::new();
    for r in runs {
        by_method.entry(&r.method).or_default().push(r);
    }
    by_method
        .into_iter()
        .map(|(method, rs)| {
            let collect =
                |f: &dyn Fn(&RunSummary) -> Option<f64>| -> Vec<f64> { rs.iter().filter_map(|r| f(r)).collect() };
            SummaryRow {
                method: method.to_string(),
                runs: rs.len(),
                final_accuracy: Stat::of(&collect(&|r| Some(r.final_accuracy))).expect("nonempty"),
                max_drop: Stat::of(&collect(&|r| Some(r.max_drop))).expect("nonempty"),
                mean_dfi: Stat::of(&collect(&|r| r.mean_dfi)),
                mean_sfe: Stat::of(&collect(&|r| r.mean_sfe)),
            }
        })
        .collect()
}

/// Reads every metrics CSV directly under `dir`.
pub fn load_dir(dir: &Path) -> Result<Vec<MetricRecord>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    let mut all = Vec::new();
    for p in paths {
        let head = std::fs::read_to_string(&p).map_err(io_err(&p))?;
        if head.lines().next() == Some(SCHEMA_LINE) {
            all.extend(read_records(&p)?);
        }
    }
    if all.is_empty() {
        return Err(HarnessError::EmptyDir(dir.to_path_buf()));
    }
    Ok(all)
}

fn fmt_stat(s: Option<Stat>) -> (String, String) {
    match s {
        Some(s) => (s.mean.to_string(), s.std.to_string()),
        None => (String::new(), String::new()),
    }
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(
        "method,runs,final_accuracy_mean,final_accuracy_std,max_drop_mean,max_drop_std,mean_dfi_mean,mean_dfi_std,mean_sfe_mean,mean_sfe_std\n",
    );
    for r in rows {
        let (a, b) = fmt_stat(Some(r.final_accuracy));
        let (c, d) = fmt_stat(Some(r.max_drop));
        let (e, f) = fmt_stat(r.mean_dfi);
        let (g, h) = fmt_stat(r.mean_sfe);
        out.push_str(&format!("{},{},{a},{b},{c},{d},{e},{f},{g},{h}\n", r.method, r.runs));
    }
    out
}

pub fn summary_table(rows: &[SummaryRow]) -> String {
    let pm = |s: Option<Stat>, scale: f64, prec: usize| match s {
        Some(s) => format!("{:.prec$} ± {:.prec$}", s.mean * scale, s.std * scale),
        None => "-".to_string(),
    };
    let header = ["method", "runs", "final acc %", "max drop %", "mean DfI", "mean SFE"];
    let body: Vec<[String; 6]> = rows
        .iter()
        .map(|r| {
            [
                r.method.clone(),
                r.runs.to_string(),
                pm(Some(r.final_accuracy), 100.0, 2),
                pm(Some(r.max_drop), 100.0, 2),
                pm(r.mean_dfi, 1.0, 3),
                pm(r.mean_sfe, 1.0, 3),
            ]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for row in &body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<String>| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(header.iter().map(|h| h.to_string()).collect());
    out.push('\n');
    for row in body {
        out.push_str(&line(row.to_vec()));
        out.push('\n');
    }
    out
}

/// Summarizes `dir` and writes `summary.csv` and `summary.txt` into it.
pub fn report(dir: &Path) -> Result<Vec<SummaryRow>> {
    let records = load_dir(dir)?;
    let rows = summarize_methods(&summarize_runs(&records));
    let csv = dir.join(SUMMARY_CSV);
    std::fs::write(&csv, summary_csv(&rows)).map_err(io_err(&csv))?;
    let txt = dir.join(SUMMARY_TXT);
    std::fs::write(&txt, summary_table(&rows)).map_err(io_err(&txt))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(run: &str, seed: u64, chunk: usize, epoch: usize, acc: f64) -> MetricRecord {
        MetricRecord {
            run_id: run.into(),
            method: run.split('-').next().unwrap().into(),
            seed,
            chunk,
            epoch,
            split: Split::Test,
            step: 0,
            loss: 0.0,
            accuracy: acc,
            dfi: if epoch == 0 { vec![1.0, 3.0] } else { vec![] },
            sfe_reset: (epoch == 0 && chunk > 0).then_some(5.0),
            srank: vec![],
            dormant: None,
            hessian_sigma_max: Some(acc),
            wall_seconds: 0.0,
        }
    }

    fn run(name: &str, seed: u64) -> Vec<MetricRecord> {
        vec![
            rec(name, seed, 0, 0, 0.1),
            rec(name, seed, 0, 1, 0.9),
            rec(name, seed, 1, 0, 0.5),
            rec(name, seed, 1, 1, 0.95),
        ]
    }

    #[test]
    fn single_seed_has_zero_std() {
        let runs = summarize_runs(&run("fire-seed0", 0));
        assert_eq!(runs.len(), 1);
        assert!((runs[0].max_drop - 0.4).abs() < 1e-12);
        assert_eq!(runs[0].final_accuracy, 0.95);
        assert_eq!(runs[0].mean_dfi, Some(2.0));
        assert_eq!(runs[0].mean_sfe, Some(5.0));
        assert_eq!(runs[0].mean_hessian, Some(0.5));
        assert_eq!(runs[0].mean_hessian_trained, Some(0.95));
        let rows = summarize_methods(&runs);
        assert_eq!(rows[0].final_accuracy.std, 0.0);
    }

    #[test]
    fn identical_runs_give_identical_rows() {
        let mut all = run("fire-seed0", 0);
        all.extend(run("none-seed0", 0));
        let rows = summarize_methods(&summarize_runs(&all));
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].final_accuracy, rows[1].final_accuracy);
        assert_eq!(rows[0].max_drop, rows[1].max_drop);
        let table = summary_table(&rows);
        assert_eq!(table.lines().count(), 3);
    }

    #[test]
    fn empty_dir_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(report(dir.path()), Err(HarnessError::EmptyDir(_))));
    }
}
