//! `curves.csv` / `summary.json` writing and the `report` recomputation.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{aggregate_ci, ExperimentConfig, LearningCurve};
use crate::error::{Error, Result};

pub const CURVES_HEADER: [&str; 5] = ["strategy", "seed", "iteration", "labeled_size", "f1_macro"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub strategy: String,
    pub seed: u64,
    pub iteration: usize,
    pub labeled_size: usize,
    pub f1_macro: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryPoint {
    pub iteration: usize,
    pub labeled_size: usize,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: String,
    pub points: Vec<SummaryPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub confidence_level: f64,
    pub strategies: Vec<StrategySummary>,
}

/// Aggregates rows per (strategy, iteration) with 95% Student-t intervals.
/// Strategies keep their first-appearance order.
pub fn summarize(rows: &[CurveRow]) -> Result<Summary> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<(usize, usize), Vec<&CurveRow>> = BTreeMap::new();
    for row in rows {
        let pos = match order.iter().position(|s| *s == row.strategy) {
            Some(p) => p,
            None => {
                order.push(&row.strategy);
                order.len() - 1
            }
        };
        groups.entry((pos, row.iteration)).or_default().push(row);
    }

    let mut strategies: Vec<StrategySummary> = order
        .iter()
        .map(|s| StrategySummary {
            strategy: s.to_string(),
            points: Vec::new(),
        })
        .collect();
    for ((pos, iteration), members) in groups {
        let values: Vec<f64> = members.iter().map(|r| r.f1_macro).collect();
        let (mean, half) = aggregate_ci(&values, 0.95)?;
        strategies[pos].points.push(SummaryPoint {
            iteration,
            labeled_size: members[0].labeled_size,
            mean,
            ci_low: mean - half,
            ci_high: mean + half,
            n_seeds: values.len(),
        });
    }
    Ok(Summary {
        confidence_level: 0.95,
        strategies,
    })
}

pub fn write_curves_csv<W: Write>(rows: &[CurveRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CURVES_HEADER)?;
    for r in rows {
        w.write_record([
            r.strategy.clone(),
            r.seed.to_string(),
            r.iteration.to_string(),
            r.labeled_size.to_string(),
            r.f1_macro.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("curves.csv", e))?;
    Ok(())
}

/// Parses `curves.csv`. The header must match exactly and every F1 value
/// must be a finite number in [0, 1].
pub fn parse_curves_csv<R: Read>(input: R) -> Result<Vec<CurveRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(input);
    let mut records = rdr.records();
    let header = records.next().ok_or(Error::EmptyDataset)??;
    if header.iter().ne(CURVES_HEADER) {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header {}", CURVES_HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in records.enumerate() {
        let line = i + 2;
        let rec = rec?;
        let err = |msg: String| Error::Parse { line, msg };
        if rec.len() != CURVES_HEADER.len() {
            return Err(err(format!("expected 5 fields, found {}", rec.len())));
        }
        let int = |j: usize| -> Result<u64> {
            rec[j]
                .parse()
                .map_err(|_| err(format!("{}: bad integer {:?}", CURVES_HEADER[j], &rec[j])))
        };
        let f1: f64 = rec[4]
            .parse()
            .map_err(|_| err(format!("f1_macro: bad number {:?}", &rec[4])))?;
        if !(0.0..=1.0).contains(&f1) {
            return Err(err(format!("f1_macro {f1} outside [0, 1]")));
        }
        rows.push(CurveRow {
            strategy: rec[0].to_string(),
            seed: int(1)?,
            iteration: int(2)? as usize,
            labeled_size: int(3)? as usize,
            f1_macro: f1,
        });
    }
    Ok(rows)
}

pub fn read_curves_csv(path: impl AsRef<Path>) -> Result<Vec<CurveRow>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_curves_csv(f)
}

/// Writes `bytes` to `dir/name` through a temporary file and a rename, so
/// readers never see a partial file.
fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    let target = dir.join(name);
    tmp.persist(&target).map_err(|e| Error::io(&target, e.error))?;
    Ok(())
}

fn summary_json(summary: &Summary) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(summary)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Writes `curves.csv`, `summary.json` and `config.txt` (the resolved
/// config) into `dir`, creating it if needed.
pub fn emit_results(curves: &[LearningCurve], config: &ExperimentConfig, dir: &Path) -> Result<Summary> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let rows: Vec<CurveRow> = curves.iter().flat_map(|c| c.rows()).collect();
    let summary = summarize(&rows)?;

    let mut csv_bytes = Vec::new();
    write_curves_csv(&rows, &mut csv_bytes)?;
    write_atomic(dir, "curves.csv", &csv_bytes)?;
    write_atomic(dir, "summary.json", &summary_json(&summary)?)?;
    write_atomic(dir, "config.txt", config.to_string().as_bytes())?;
    Ok(summary)
}

/// Recomputes `summary.json` in `dir` from its `curves.csv`.
pub fn report(dir: &Path) -> Result<Summary> {
    let rows = read_curves_csv(dir.join("curves.csv"))?;
    let summary = summarize(&rows)?;
    write_atomic(dir, "summary.json", &summary_json(&summary)?)?;
    Ok(summary)
}
