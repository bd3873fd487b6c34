//! Magnitude selection: grid search for the best magnitude per model size,
//! optimal/maximal magnitude extraction, and decay schedules for iterative
//! pruning.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{csv_io, MAX_MAGNITUDE};
use crate::error::{config_err, Error, Result};
use crate::harness::{evaluate, train_stage, AugSpec, RunRecord, Split, StageContext, TrainSpec};
use crate::models::{Model, ModelSpec};
use crate::pruning::l1_prune;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub magnitude: u8,
    pub val_accuracy: f64,
    pub val_loss: f64,
    pub seed: u64,
}

/// Validation results over a grid of magnitudes plus the un-augmented baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeProfile {
    entries: Vec<ProfileEntry>,
    pub baseline_accuracy: f64,
    pub baseline_loss: f64,
    pub baseline_seed: u64,
}

impl MagnitudeProfile {
    pub fn new(entries: Vec<ProfileEntry>, baseline_accuracy: f64) -> Result<Self> {
        let mut seen = [false; MAX_MAGNITUDE as usize + 1];
        for e in &entries {
            if e.magnitude > MAX_MAGNITUDE {
                return Err(config_err!("magnitude {} outside [0, {MAX_MAGNITUDE}]", e.magnitude));
            }
            if std::mem::replace(&mut seen[e.magnitude as usize], true) {
                return Err(config_err!("magnitude {} listed twice", e.magnitude));
            }
        }
        Ok(MagnitudeProfile {
            entries,
            baseline_accuracy,
            baseline_loss: f64::NAN,
            baseline_seed: 0,
        })
    }

    pub fn entries(&self) -> &[ProfileEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Profile CSV: `magnitude,val_accuracy,val_loss,seed`, baseline row has magnitude −1.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        w.write_record(["magnitude", "val_accuracy", "val_loss", "seed"])
            .map_err(|e| csv_io(path, e))?;
        w.write_record([
            "-1".to_string(),
            self.baseline_accuracy.to_string(),
            self.baseline_loss.to_string(),
            self.baseline_seed.to_string(),
        ])
        .map_err(|e| csv_io(path, e))?;
        for e in &self.entries {
            w.write_record([
                e.magnitude.to_string(),
                e.val_accuracy.to_string(),
                e.val_loss.to_string(),
                e.seed.to_string(),
            ])
            .map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
        let mut entries = Vec::new();
        let mut baseline = None;
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| csv_io(path, e))?;
            let field = |i: usize| -> Result<&str> {
                rec.get(i).ok_or_else(|| Error::Format {
                    offset: line as u64,
                    message: format!("{}: row {line} too short", path.display()),
                })
            };
            let bad = |what: &str| Error::Format {
                offset: line as u64,
                message: format!("{}: row {line}: bad {what}", path.display()),
            };
            let m: i64 = field(0)?.parse().map_err(|_| bad("magnitude"))?;
            let acc: f64 = field(1)?.parse().map_err(|_| bad("accuracy"))?;
            let loss: f64 = field(2)?.parse().map_err(|_| bad("loss"))?;
            let seed: u64 = field(3)?.parse().map_err(|_| bad("seed"))?;
            if m < 0 {
                baseline = Some((acc, loss, seed));
            } else {
                let magnitude = u8::try_from(m).map_err(|_| bad("magnitude"))?;
                entries.push(ProfileEntry { magnitude, val_accuracy: acc, val_loss: loss, seed });
            }
        }
        let (acc, loss, seed) = baseline.ok_or_else(|| Error::Format {
            offset: 0,
            message: format!("{}: no baseline row", path.display()),
        })?;
        let mut p = MagnitudeProfile::new(entries, acc)?;
        p.baseline_loss = loss;
        p.baseline_seed = seed;
        Ok(p)
    }
}

/// Argmax of validation accuracy; ties go to the smaller magnitude.
pub fn optimal_magnitude(profile: &MagnitudeProfile) -> Option<u8> {
    profile
        .entries
        .iter()
        .max_by(|a, b| {
            a.val_accuracy
                .total_cmp(&b.val_accuracy)
                .then(b.magnitude.cmp(&a.magnitude))
        })
        .map(|e| e.magnitude)
}

/// Largest magnitude whose accuracy is at least the baseline's, else 0.
pub fn maximal_magnitude(profile: &MagnitudeProfile) -> u8 {
    profile
        .entries
        .iter()
        .filter(|e| e.val_accuracy >= profile.baseline_accuracy)
        .map(|e| e.magnitude)
        .max()
        .unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Magnitude of the largest pivot ratio ≤ p.
    #[default]
    Step,
    /// Linear between neighbouring pivots, rounded to the nearest integer.
    Linear,
}

/// Magnitude as a non-increasing function of pruning ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecaySchedule {
    pub pivots: Vec<(f64, u8)>,
    #[serde(default)]
    pub interpolation: Interpolation,
}

impl DecaySchedule {
    pub fn new(pivots: Vec<(f64, u8)>, interpolation: Interpolation) -> Result<Self> {
        let s = DecaySchedule { pivots, interpolation };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pivots.is_empty() {
            return Err(config_err!("decay schedule needs at least one pivot"));
        }
        for w in self.pivots.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(config_err!("decay pivots must have strictly ascending ratios"));
            }
            if w[1].1 > w[0].1 {
                return Err(config_err!("decay pivots must have non-increasing magnitudes"));
            }
        }
        if let Some(&(p, m)) = self.pivots.iter().find(|(p, m)| !(0.0..1.0).contains(p) || *m > MAX_MAGNITUDE) {
            return Err(config_err!("pivot ({p}, {m}) out of range"));
        }
        Ok(())
    }

    /// Pivots through the per-ratio optima, forced non-increasing by a running
    /// minimum over ascending ratio.
    pub fn from_optima(mut optima: Vec<(f64, u8)>, interpolation: Interpolation) -> Result<Self> {
        optima.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut floor = u8::MAX;
        for (_, m) in optima.iter_mut() {
            floor = floor.min(*m);
            *m = floor;
        }
        Self::new(optima, interpolation)
    }
}

pub fn decay_lookup(schedule: &DecaySchedule, p: f64) -> u8 {
    let pivots = &schedule.pivots;
    let idx = pivots.iter().rposition(|&(r, _)| r <= p);
    match (schedule.interpolation, idx) {
        (_, None) => pivots[0].1,
        (Interpolation::Step, Some(i)) => pivots[i].1,
        (Interpolation::Linear, Some(i)) => match pivots.get(i + 1) {
            None => pivots[i].1,
            Some(&(r1, m1)) => {
                let (r0, m0) = pivots[i];
                let t = (p - r0) / (r1 - r0);
                (m0 as f64 + t * (m1 as f64 - m0 as f64)).round() as u8
            }
        },
    }
}

/// How the model entering each grid cell is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneInit {
    /// Fresh initialisation, pruned by magnitude before training.
    #[default]
    Fresh,
    /// A supplied trained model, pruned then fine-tuned.
    Pretrained,
}

/// Result of one grid search: the profile and the training record of every cell.
#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub profile: MagnitudeProfile,
    pub records: Vec<RunRecord>,
}

/// Exhaustive search over `candidates` at pruning ratio `ratio`.
///
/// Every cell starts from the same model (fresh from `train_spec.seed`, or
/// `start` when given), is pruned to `ratio`, then trained with a fixed
/// magnitude and training seed `train_spec.seed ^ M`. A baseline cell without
/// augmentation uses training seed `train_spec.seed ^ 0xFF`. Accuracy decides;
/// validation images are never augmented.
pub fn grid_search_magnitude(
    spec: &ModelSpec,
    data: &Split,
    candidates: &[u8],
    train_spec: &TrainSpec,
    ratio: f64,
    start: Option<&Model>,
) -> Result<GridOutcome> {
    if candidates.is_empty() {
        return Err(config_err!("magnitude grid is empty"));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(config_err!("magnitude grid has duplicates: {candidates:?}"));
    }
    if let Some(m) = sorted.iter().find(|&&m| m > MAX_MAGNITUDE) {
        return Err(config_err!("magnitude {m} outside [0, {MAX_MAGNITUDE}]"));
    }
    let base_seed = train_spec.seed;
    let initial = match start {
        Some(m) => {
            if m.spec() != spec {
                return Err(config_err!("starting model does not match the grid's model spec"));
            }
            m.clone()
        }
        None => Model::build(spec, base_seed)?,
    };
    let mut cells: Vec<Option<u8>> = vec![None];
    cells.extend(sorted.iter().copied().map(Some));

    let results: Vec<Result<(Option<u8>, f64, f64, u64, RunRecord)>> = cells
        .par_iter()
        .map(|&cell| {
            let mut model = initial.clone();
            let state = l1_prune(&mut model, ratio, None)?;
            let mut ts = train_spec.clone();
            let (aug, seed, label) = match cell {
                Some(m) => (AugSpec::Fixed { magnitude: m }, base_seed ^ m as u64, format!("m{m}")),
                None => (AugSpec::None, base_seed ^ 0xFF, "baseline".to_string()),
            };
            ts.aug = aug;
            ts.seed = seed;
            let ctx = StageContext {
                stage: 0,
                mask: Some(&state),
                ..StageContext::default()
            };
            let out = train_stage(&mut model, data, &ts, &ctx)?;
            let (acc, loss) = evaluate(&model, &data.val)?;
            let record = RunRecord {
                run: format!("grid/p{ratio}/{label}/s{base_seed}"),
                scheme: "magnitude_grid".into(),
                seed: base_seed,
                rows: out.rows,
            };
            Ok((cell, acc, loss, seed, record))
        })
        .collect();

    let mut entries = Vec::with_capacity(sorted.len());
    let mut records = Vec::with_capacity(cells.len());
    let mut baseline = (f64::NAN, f64::NAN, 0);
    for r in results {
        let (cell, acc, loss, seed, record) = r?;
        match cell {
            Some(magnitude) => entries.push(ProfileEntry { magnitude, val_accuracy: acc, val_loss: loss, seed }),
            None => baseline = (acc, loss, seed),
        }
        records.push(record);
    }
    let mut profile = MagnitudeProfile::new(entries, baseline.0)?;
    profile.baseline_loss = baseline.1;
    profile.baseline_seed = baseline.2;
    Ok(GridOutcome { profile, records })
}
