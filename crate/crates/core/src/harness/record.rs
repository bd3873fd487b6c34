use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;

use crate::augment::csv_io;
use crate::error::{Error, Result};

/// One epoch of one training stage.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub stage: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub pruning_ratio: f64,
    /// Fixed magnitude, or the mean applied magnitude for sampled policies.
    pub magnitude: Option<f64>,
    /// Seconds spent in the epoch; written to `timing.csv` only.
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run: String,
    pub scheme: String,
    pub seed: u64,
    pub rows: Vec<EpochRow>,
}

/// Final state of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub run: String,
    pub scheme: String,
    pub seed: u64,
    pub pruning_ratio: f64,
    pub magnitude: Option<f64>,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
}

const RESULTS_HEADER: [&str; 9] =
    ["run", "scheme", "seed", "stage", "epoch", "train_loss", "val_accuracy", "pruning_ratio", "magnitude"];

pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    records
        .iter()
        .filter_map(|r| {
            let last = r.rows.last()?;
            let final_stage = r.rows.iter().filter(|row| row.stage == last.stage);
            Some(SummaryRow {
                run: r.run.clone(),
                scheme: r.scheme.clone(),
                seed: r.seed,
                pruning_ratio: last.pruning_ratio,
                magnitude: last.magnitude,
                final_accuracy: last.val_accuracy,
                best_accuracy: final_stage.map(|row| row.val_accuracy).fold(f64::NEG_INFINITY, f64::max),
            })
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|m| m.to_string()).unwrap_or_default()
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_io(path, e))
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `results.csv`, `summary.csv`, `timing.csv` and per-ratio
/// magnitude/accuracy series under `plotdata/`. Returns the written paths.
///
/// `results.csv` holds no timing, so identical runs produce identical bytes.
pub fn emit_results(records: &[RunRecord], out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir.join("plotdata")).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();

    let path = out_dir.join("results.csv");
    let mut w = writer(&path)?;
    w.write_record(RESULTS_HEADER).map_err(|e| csv_io(&path, e))?;
    for r in records {
        for row in &r.rows {
            w.write_record([
                r.run.clone(),
                r.scheme.clone(),
                r.seed.to_string(),
                row.stage.to_string(),
                row.epoch.to_string(),
                row.train_loss.to_string(),
                row.val_accuracy.to_string(),
                row.pruning_ratio.to_string(),
                opt(row.magnitude),
            ])
            .map_err(|e| csv_io(&path, e))?;
        }
    }
    finish(w, &path)?;
    written.push(path);

    let path = out_dir.join("timing.csv");
    let mut w = writer(&path)?;
    w.write_record(["run", "stage", "epoch", "wall_time"]).map_err(|e| csv_io(&path, e))?;
    for r in records {
        for row in &r.rows {
            w.write_record([r.run.clone(), row.stage.to_string(), row.epoch.to_string(), row.wall_time.to_string()])
                .map_err(|e| csv_io(&path, e))?;
        }
    }
    finish(w, &path)?;
    written.push(path);

    let summary = summarize(records);
    let path = out_dir.join("summary.csv");
    let mut w = writer(&path)?;
    w.write_record(["run", "scheme", "seed", "pruning_ratio", "magnitude", "final_accuracy", "best_accuracy"])
        .map_err(|e| csv_io(&path, e))?;
    for s in &summary {
        w.write_record([
            s.run.clone(),
            s.scheme.clone(),
            s.seed.to_string(),
            s.pruning_ratio.to_string(),
            opt(s.magnitude),
            s.final_accuracy.to_string(),
            s.best_accuracy.to_string(),
        ])
        .map_err(|e| csv_io(&path, e))?;
    }
    finish(w, &path)?;
    written.push(path);

    // magnitude vs accuracy, one file per (scheme, ratio)
    let mut series: BTreeMap<(String, String), Vec<&SummaryRow>> = BTreeMap::new();
    for s in &summary {
        series.entry((s.scheme.clone(), s.pruning_ratio.to_string())).or_default().push(s);
    }
    for ((scheme, ratio), rows) in series {
        let path = out_dir.join("plotdata").join(format!("{scheme}_p{ratio}.csv"));
        let mut w = writer(&path)?;
        w.write_record(["seed", "magnitude", "final_accuracy", "run"]).map_err(|e| csv_io(&path, e))?;
        for s in rows {
            w.write_record([s.seed.to_string(), opt(s.magnitude), s.final_accuracy.to_string(), s.run.clone()])
                .map_err(|e| csv_io(&path, e))?;
        }
        finish(w, &path)?;
        written.push(path);
    }
    Ok(written)
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, path: &Path) -> Result<T> {
    let raw = rec.get(i).unwrap_or("");
    raw.parse().map_err(|_| Error::Format {
        offset: rec.position().map_or(0, |p| p.byte()),
        message: format!("{}: cannot parse column {} value {raw:?}", path.display(), RESULTS_HEADER[i]),
    })
}

/// Reads `results.csv` (and `timing.csv` when present) back into records.
pub fn read_results(out_dir: &Path) -> Result<Vec<RunRecord>> {
    let path = out_dir.join("results.csv");
    let mut rd = csv::Reader::from_path(&path).map_err(|e| csv_io(&path, e))?;
    let mut runs: IndexMap<String, RunRecord> = IndexMap::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| csv_io(&path, e))?;
        let run: String = field(&rec, 0, &path)?;
        let magnitude = match rec.get(8).unwrap_or("") {
            "" => None,
            _ => Some(field(&rec, 8, &path)?),
        };
        let row = EpochRow {
            stage: field(&rec, 3, &path)?,
            epoch: field(&rec, 4, &path)?,
            train_loss: field(&rec, 5, &path)?,
            val_accuracy: field(&rec, 6, &path)?,
            pruning_ratio: field(&rec, 7, &path)?,
            magnitude,
            wall_time: 0.0,
        };
        let scheme = field(&rec, 1, &path)?;
        let seed = field(&rec, 2, &path)?;
        runs.entry(run.clone())
            .or_insert_with(|| RunRecord { run, scheme, seed, rows: Vec::new() })
            .rows
            .push(row);
    }
    let timing = out_dir.join("timing.csv");
    if timing.exists() {
        let mut rd = csv::Reader::from_path(&timing).map_err(|e| csv_io(&timing, e))?;
        let mut cursor: IndexMap<String, usize> = IndexMap::new();
        for rec in rd.records() {
            let rec = rec.map_err(|e| csv_io(&timing, e))?;
            let run = rec.get(0).unwrap_or("");
            let wall: f64 = rec.get(3).unwrap_or("").parse().map_err(|_| Error::Format {
                offset: rec.position().map_or(0, |p| p.byte()),
                message: format!("{}: bad wall_time", timing.display()),
            })?;
            if let Some(r) = runs.get_mut(run) {
                let i = cursor.entry(run.to_string()).or_insert(0);
                if let Some(row) = r.rows.get_mut(*i) {
                    row.wall_time = wall;
                }
                *i += 1;
            }
        }
    }
    Ok(runs.into_values().collect())
}
