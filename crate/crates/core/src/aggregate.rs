//! Per-iteration mean and standard deviation across seeds.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub iteration: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// Number of series padded with their final value at this iteration.
    pub padded: usize,
}

/// Aggregates series of possibly different lengths; shorter ones are right-padded with
/// their final value.
pub fn aggregate_series(series: &[Vec<f64>]) -> Result<Vec<AggregateRow>> {
    if series.is_empty() {
        return Err(Error::invalid("nothing to aggregate"));
    }
    if series.iter().any(|s| s.is_empty()) {
        return Err(Error::invalid("cannot aggregate an empty series"));
    }
    let len = series.iter().map(Vec::len).max().unwrap_or(0);
    let n = series.len() as f64;
    Ok((0..len)
        .map(|i| {
            let value = |s: &Vec<f64>| s.get(i).copied().unwrap_or(*s.last().expect("non-empty"));
            let mean = series.iter().map(value).sum::<f64>() / n;
            let var = series.iter().map(|s| (value(s) - mean).powi(2)).sum::<f64>() / n;
            let padded = series.iter().filter(|s| s.len() <= i).count();
            AggregateRow { iteration: i, mean, std: var.sqrt(), padded }
        })
        .collect())
}

/// Reads one numeric column of a trace CSV (lines starting with `#` are skipped).
pub fn read_trace_column(path: &Path, column: &str) -> Result<Vec<f64>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let idx = r
        .headers()?
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| Error::invalid(format!("{} has no column {column:?}", path.display())))?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            let v = &rec[idx];
            v.parse::<f64>().map_err(|e| Error::invalid(format!("bad value {v:?} in {}: {e}", path.display())))
        })
        .collect()
}

/// Aggregates `column` over the given trace files, in the given order.
pub fn aggregate_seeds(paths: &[PathBuf], column: &str) -> Result<Vec<AggregateRow>> {
    if paths.is_empty() {
        return Err(Error::invalid("no trace files given"));
    }
    let series = paths.iter().map(|p| read_trace_column(p, column)).collect::<Result<Vec<_>>>()?;
    aggregate_series(&series)
}

/// CSV columns: `iteration,mean,std,padded`.
pub fn write_aggregate_csv(rows: &[AggregateRow], path: &Path, header: &[String]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    for line in header {
        writeln!(file, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["iteration", "mean", "std", "padded"])?;
    for r in rows {
        w.write_record([r.iteration.to_string(), format!("{:?}", r.mean), format!("{:?}", r.std), r.padded.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
