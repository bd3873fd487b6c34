use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Dataset, EpochRow, Split};
use crate::augment::{randaugment, random_magnitude_augment, sample_rng, AugPolicy, Image, MAX_MAGNITUDE};
use crate::error::{config_err, Result};
use crate::losses::{combined_loss, cross_entropy, cross_entropy_per_row, kd_kl, KdConfig};
use crate::models::Model;
use crate::policy::{decay_lookup, DecaySchedule};
use crate::pruning::{pruning_ratio, PruneState};
use crate::selection::{generate_candidates, select, SelectionConfig, SelectionTraceRow};
use crate::tensor::{Graph, Sgd};

/// Augmentation used while training a stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AugSpec {
    None,
    Fixed { magnitude: u8 },
    /// Magnitude drawn uniformly per sample.
    Random,
    /// Magnitude looked up from the stage's pruning ratio.
    Decay(DecaySchedule),
    /// Teacher-filtered choice among random-magnitude candidates.
    Selection(SelectionConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSpec {
    Ce,
    Kd(KdConfig),
}

/// Full configuration of one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub aug: AugSpec,
    pub loss: LossSpec,
    pub seed: u64,
    /// Seed for a classifier head re-initialised at the start of this stage.
    pub head_seed: u64,
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(config_err!("epochs and batch_size must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config_err!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(config_err!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        match &self.aug {
            AugSpec::Fixed { magnitude } if *magnitude > MAX_MAGNITUDE => {
                return Err(config_err!("magnitude {magnitude} outside [0, {MAX_MAGNITUDE}]"))
            }
            AugSpec::Decay(s) => s.validate()?,
            AugSpec::Selection(s) => s.validate()?,
            _ => {}
        }
        if let LossSpec::Kd(kd) = &self.loss {
            kd.validate()?;
        }
        Ok(())
    }

    pub fn needs_teacher(&self) -> bool {
        matches!(self.loss, LossSpec::Kd(_)) || matches!(self.aug, AugSpec::Selection(_))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StageContext<'a> {
    /// Stage index, recorded in every row and mixed into the data-order seed.
    pub stage: usize,
    pub mask: Option<&'a PruneState>,
    pub teacher: Option<&'a Model>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageOutput {
    pub rows: Vec<EpochRow>,
    pub selection_trace: Vec<SelectionTraceRow>,
}

const EVAL_BATCH: usize = 256;

/// Accuracy and mean cross-entropy on `data`, without augmentation.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut correct = 0usize;
    let mut loss = 0.0;
    for (imgs, labels) in data.images.chunks(EVAL_BATCH).zip(data.labels.chunks(EVAL_BATCH)) {
        let x = Image::batch_tensor(imgs.iter())?;
        let logits = model.logits(&x)?;
        loss += cross_entropy_per_row(&logits, labels)?.iter().sum::<f64>();
        for (row, &y) in logits.rows().zip(labels) {
            let pred = row
                .iter()
                .enumerate()
                .fold(0, |best, (i, v)| if *v > row[best] { i } else { best });
            correct += usize::from(pred == y);
        }
    }
    let n = data.len() as f64;
    Ok((correct as f64 / n, loss / n))
}

fn stage_seed(seed: u64, stage: usize) -> u64 {
    seed.wrapping_add((stage as u64).wrapping_mul(0xA24B_AED4_963E_E407))
}

/// Trains `model` in place for one stage and reports one row per epoch.
///
/// Each sample draws augmentation from its own stream keyed by
/// `(seed, stage, epoch, sample index)`. Masked weights stay exactly zero.
pub fn train_stage(model: &mut Model, data: &Split, spec: &TrainSpec, ctx: &StageContext) -> Result<StageOutput> {
    spec.validate()?;
    if spec.needs_teacher() && ctx.teacher.is_none() {
        return Err(config_err!("distillation loss or selection augmentation needs a teacher"));
    }
    if data.train.is_empty() {
        return Err(config_err!("training split is empty"));
    }
    model.params_mut().set_requires_grad(true);
    if let Some(mask) = ctx.mask {
        mask.apply(model.params_mut())?;
    }
    let ratio = ctx.mask.map_or(0.0, pruning_ratio);
    let decay_magnitude = match &spec.aug {
        AugSpec::Decay(s) => Some(decay_lookup(s, ctx.mask.map_or(0.0, |m| m.target_ratio()))),
        _ => None,
    };
    let mut opt = Sgd::new(spec.lr, spec.momentum)?;
    let seed = stage_seed(spec.seed, ctx.stage);
    let mut out = StageOutput::default();
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    for epoch in 0..spec.epochs {
        let started = Instant::now();
        order.shuffle(&mut sample_rng(seed, epoch as u64, u64::MAX));
        let mut loss_sum = 0.0;
        let mut magnitude_sum = 0.0;
        for batch in order.chunks(spec.batch_size) {
            let mut images = Vec::with_capacity(batch.len());
            let labels: Vec<usize> = batch.iter().map(|&i| data.train.labels[i]).collect();
            for &i in batch {
                let mut rng = sample_rng(seed, epoch as u64, i as u64);
                let img = &data.train.images[i];
                let y = data.train.labels[i];
                let (aug, m) = match &spec.aug {
                    AugSpec::None => (img.clone(), 0),
                    AugSpec::Fixed { magnitude } => {
                        (randaugment(img, AugPolicy::new(*magnitude)?, &mut rng), *magnitude)
                    }
                    AugSpec::Decay(_) => {
                        let m = decay_magnitude.expect("set for decay");
                        (randaugment(img, AugPolicy::new(m)?, &mut rng), m)
                    }
                    AugSpec::Random => random_magnitude_augment(img, &mut rng),
                    AugSpec::Selection(cfg) => {
                        let teacher = ctx.teacher.expect("checked above");
                        let (cands, mags): (Vec<Image>, Vec<u8>) =
                            generate_candidates(img, cfg.n, &mut rng).into_iter().unzip();
                        let sel = select(&cands, y, teacher, model, cfg)?;
                        out.selection_trace.push(SelectionTraceRow {
                            epoch,
                            sample_index: i,
                            chosen_magnitude: mags[sel.index],
                            score_chosen: sel.scores[sel.index],
                            score_mean: sel.scores.iter().sum::<f64>() / sel.scores.len() as f64,
                        });
                        let m = mags[sel.index];
                        (cands.into_iter().nth(sel.index).expect("index in range"), m)
                    }
                };
                magnitude_sum += m as f64;
                images.push(aug);
            }
            let x = Image::batch_tensor(images.iter())?;
            let mut graph = Graph::new();
            let bound = model.params().bind(&mut graph);
            let input = graph.constant(x.clone());
            let logits = model.forward(&mut graph, &bound, input)?;
            let loss = match &spec.loss {
                LossSpec::Ce => cross_entropy(&mut graph, logits, &labels)?,
                LossSpec::Kd(kd) => {
                    let teacher_logits = ctx.teacher.expect("checked above").logits(&x)?;
                    let ce = cross_entropy(&mut graph, logits, &labels)?;
                    let kl = kd_kl(&mut graph, &teacher_logits, logits, kd.tau)?;
                    combined_loss(&mut graph, ce, kl, kd.alpha)?
                }
            };
            loss_sum += graph.value(loss)?.item()? * batch.len() as f64;
            let mut grads = graph.backward(loss)?;
            model.params_mut().absorb(&bound, &mut grads)?;
            opt.step(model.params_mut(), ctx.mask)?;
        }
        for (name, t) in model.params().iter() {
            t.ensure_finite(name)?;
        }
        let (val_accuracy, _) = evaluate(model, &data.val)?;
        let n = data.train.len() as f64;
        let magnitude = match &spec.aug {
            AugSpec::None => None,
            _ => Some(magnitude_sum / n),
        };
        out.rows.push(EpochRow {
            stage: ctx.stage,
            epoch,
            train_loss: loss_sum / n,
            val_accuracy,
            pruning_ratio: ratio,
            magnitude,
            wall_time: started.elapsed().as_secs_f64(),
        });
    }
    model.params_mut().clear_grads();
    Ok(out)
}
