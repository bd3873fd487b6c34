use std::collections::BTreeMap;
use std::path::Path;

use super::{emit_results, summarize, SchemeOutcome, SchemeSpec, Split};
use crate::augment::csv_io;
use crate::error::{Error, Result};
use crate::policy::{maximal_magnitude, optimal_magnitude};
use crate::selection::write_selection_trace;
use crate::tensor::save_checkpoint;

fn file_stem(run: &str) -> String {
    run.replace(['/', '\\'], "_")
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Mean final accuracy per scheme kind, in first-seen order.
pub fn mean_final_accuracy(outcomes: &[SchemeOutcome]) -> Vec<(String, f64, Vec<(u64, f64)>)> {
    let mut by: Vec<(String, Vec<(u64, f64)>)> = Vec::new();
    for o in outcomes {
        for s in summarize(&o.records) {
            match by.iter_mut().find(|(k, _)| *k == s.scheme) {
                Some((_, v)) => v.push((s.seed, s.final_accuracy)),
                None => by.push((s.scheme.clone(), vec![(s.seed, s.final_accuracy)])),
            }
        }
    }
    by.into_iter()
        .map(|(k, v)| {
            let mean = v.iter().map(|x| x.1).sum::<f64>() / v.len() as f64;
            (k, mean, v)
        })
        .collect()
}

/// Optimal and maximal magnitude per (ratio, seed) from grid outcomes.
pub fn grid_optima(specs: &[SchemeSpec], outcomes: &[SchemeOutcome]) -> BTreeMap<(u64, String), (Option<u8>, u8)> {
    let mut out = BTreeMap::new();
    for (spec, o) in specs.iter().zip(outcomes) {
        for (p, profile) in &o.profiles {
            out.insert((spec.model_seed, p.to_string()), (optimal_magnitude(profile), maximal_magnitude(profile)));
        }
    }
    out
}

/// Runs each spec in order and writes every artifact under `out`.
pub fn run_and_write(specs: &[SchemeSpec], data: &Split, out: &Path) -> Result<Vec<SchemeOutcome>> {
    let outcomes = super::run_comparison(specs, data)?;
    write_outcomes(specs, &outcomes, out)?;
    Ok(outcomes)
}

pub fn write_outcomes(specs: &[SchemeSpec], outcomes: &[SchemeOutcome], out: &Path) -> Result<()> {
    mkdir(out)?;
    let records: Vec<_> = outcomes.iter().flat_map(|o| o.records.iter().cloned()).collect();
    emit_results(&records, out)?;

    if outcomes.iter().any(|o| !o.models.is_empty()) {
        let dir = out.join("checkpoints");
        mkdir(&dir)?;
        for (run, m) in outcomes.iter().flat_map(|o| &o.models) {
            save_checkpoint(dir.join(format!("{}.adck", file_stem(run))), m.params())?;
        }
        for (run, mask) in outcomes.iter().flat_map(|o| &o.masks) {
            mask.save(dir.join(format!("{}.mask.adck", file_stem(run))))?;
        }
    }

    if outcomes.iter().any(|o| !o.profiles.is_empty()) {
        let dir = out.join("profiles");
        mkdir(&dir)?;
        for (spec, o) in specs.iter().zip(outcomes) {
            for (p, profile) in &o.profiles {
                profile.write_csv(&dir.join(format!("p{p}_s{}.csv", spec.model_seed)))?;
            }
        }
        let path = out.join("optima.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_io(&path, e))?;
        w.write_record(["seed", "pruning_ratio", "optimal_magnitude", "maximal_magnitude"])
            .map_err(|e| csv_io(&path, e))?;
        for ((seed, p), (opt, max)) in grid_optima(specs, outcomes) {
            let opt = opt.map(|m| m.to_string()).unwrap_or_default();
            w.write_record([seed.to_string(), p, opt, max.to_string()]).map_err(|e| csv_io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }

    if outcomes.iter().any(|o| o.handoff.is_some()) {
        let path = out.join("handoff.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_io(&path, e))?;
        w.write_record(["run", "expected", "actual", "ok"]).map_err(|e| csv_io(&path, e))?;
        for o in outcomes {
            if let (Some(h), Some(r)) = (&o.handoff, o.records.first()) {
                w.write_record([r.run.as_str(), &h.expected, &h.actual, if h.ok() { "true" } else { "false" }])
                    .map_err(|e| csv_io(&path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }

    for o in outcomes.iter().filter(|o| !o.selection_trace.is_empty()) {
        if let Some(r) = o.records.first() {
            write_selection_trace(&out.join(format!("selection_{}.csv", file_stem(&r.run))), &o.selection_trace)?;
        }
    }
    Ok(())
}

/// Runs every section present in `cfg`, each into its own subdirectory of `out`.
pub fn run_config(cfg: &super::Config, out: &Path) -> Result<Vec<(String, Vec<SchemeOutcome>)>> {
    let data = super::load_dataset(&cfg.data)?;
    let mut sections = Vec::new();
    if cfg.grid.is_some() {
        sections.push(("grid", cfg.grid_specs()?));
    }
    if let Some(p) = &cfg.prune {
        sections.push(("prune", cfg.prune_specs(p.schedule.parse()?)?));
    }
    if cfg.scheme.is_some() {
        sections.push(("scheme", cfg.scheme_specs()?));
    }
    if cfg.distill.is_some() {
        sections.push(("distill", cfg.distill_specs()?));
    }
    sections
        .into_iter()
        .map(|(name, specs)| Ok((name.to_string(), run_and_write(&specs, &data, &out.join(name))?)))
        .collect()
}
