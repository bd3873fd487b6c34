//! Teacher-filtered augmentation selection for distillation.
//!
//! For each training sample, `n` RandAugment candidates with random magnitudes
//! are scored as `α·CE(teacher(x), y) − β·KL(teacher(x) ‖ student(x); τ)` and the
//! lowest score is kept: the teacher must still get it right, and among those
//! the student should disagree with the teacher the most.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{csv_io, random_magnitude_augment, Image};
use crate::error::{config_err, contract_err, Error, Result};
use crate::harness::{train_stage, RunRecord, Split, StageContext, TrainSpec};
use crate::losses::{cross_entropy_per_row, kd_kl_per_row, KdConfig};
use crate::models::Model;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(config_err!("selection needs at least one candidate"));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) || !(self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(config_err!("selection weights must be non-negative, got α={} β={}", self.alpha, self.beta));
        }
        if self.alpha == 0.0 && self.beta == 0.0 {
            return Err(config_err!("selection weights α and β cannot both be zero"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(config_err!("selection temperature must be positive, got {}", self.tau));
        }
        Ok(())
    }
}

/// `n` independent random-magnitude RandAugment draws of `img`.
pub fn generate_candidates<R: Rng + ?Sized>(img: &Image, n: usize, rng: &mut R) -> Vec<(Image, u8)> {
    (0..n).map(|_| random_magnitude_augment(img, rng)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub scores: Vec<f64>,
}

/// Scores every candidate in one batched, gradient-free pass through each model
/// and returns the argmin (lowest index on ties).
pub fn select(candidates: &[Image], label: usize, teacher: &Model, student: &Model, cfg: &SelectionConfig) -> Result<Selection> {
    cfg.validate()?;
    if candidates.is_empty() {
        return Err(contract_err!("select needs at least one candidate"));
    }
    let x = Image::batch_tensor(candidates.iter())?;
    let t = teacher.logits(&x)?;
    let s = student.logits(&x)?;
    let labels = vec![label; candidates.len()];
    let ce = cross_entropy_per_row(&t, &labels)?;
    let kl = kd_kl_per_row(&t, &s, cfg.tau)?;
    let scores: Vec<f64> = ce.iter().zip(&kl).map(|(c, k)| cfg.alpha * c - cfg.beta * k).collect();
    let index = argmin(&scores);
    Ok(Selection { index, scores })
}

/// First index of the minimum.
pub fn argmin(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s < scores[best] {
            best = i;
        }
    }
    best
}

/// One row of the selection trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTraceRow {
    pub epoch: usize,
    pub sample_index: usize,
    pub chosen_magnitude: u8,
    pub score_chosen: f64,
    pub score_mean: f64,
}

pub fn write_selection_trace(path: &Path, rows: &[SelectionTraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(["epoch", "sample_index", "chosen_magnitude", "score_chosen", "score_mean"])
        .map_err(|e| csv_io(path, e))?;
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            r.sample_index.to_string(),
            r.chosen_magnitude.to_string(),
            r.score_chosen.to_string(),
            r.score_mean.to_string(),
        ])
        .map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Distils `teacher` into `student` training on the selected candidate of
/// every sample. `train_spec.aug` must be a selection spec and
/// `train_spec.loss` a distillation loss.
pub fn distill_with_selection(
    student: &Model,
    teacher: &Model,
    data: &Split,
    sel_cfg: &SelectionConfig,
    kd_cfg: &KdConfig,
    train_spec: &TrainSpec,
) -> Result<(Model, RunRecord, Vec<SelectionTraceRow>)> {
    sel_cfg.validate()?;
    kd_cfg.validate()?;
    let mut spec = train_spec.clone();
    spec.aug = crate::harness::AugSpec::Selection(*sel_cfg);
    spec.loss = crate::harness::LossSpec::Kd(*kd_cfg);
    let mut model = student.clone();
    let ctx = StageContext {
        stage: 0,
        teacher: Some(teacher),
        ..StageContext::default()
    };
    let out = train_stage(&mut model, data, &spec, &ctx)?;
    let record = RunRecord {
        run: format!("distill/n{}/a{}/b{}/s{}", sel_cfg.n, sel_cfg.alpha, sel_cfg.beta, spec.seed),
        scheme: "kd_filtered".into(),
        seed: spec.seed,
        rows: out.rows,
    };
    Ok((model, record, out.selection_trace))
}
