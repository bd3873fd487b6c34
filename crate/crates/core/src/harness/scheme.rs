use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{train_stage, AugSpec, RunRecord, Split, StageContext, StageOutput, TrainSpec};
use crate::error::{config_err, contract_err, Error, Result};
use crate::models::{transfer_weights, Model, ModelSpec};
use crate::policy::{grid_search_magnitude, DecaySchedule, MagnitudeProfile};
use crate::pruning::{iterative_prune, l1_prune, PruneState};
use crate::selection::SelectionTraceRow;
use crate::tensor::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    PruneInherit,
    PruneBaselineA,
    PruneBaselineB,
    ExtraInherit,
    ExtraBaselineA,
    ExtraBaselineB,
    KdFiltered,
    KdBaselineA,
    KdBaselineB,
    MagnitudeGrid,
    DecayVsConsistent,
}

/// Kinds whose members are compared against each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchemeFamily {
    Prune,
    Extra,
    Kd,
    Grid,
    Decay,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 11] = [
        SchemeKind::PruneInherit,
        SchemeKind::PruneBaselineA,
        SchemeKind::PruneBaselineB,
        SchemeKind::ExtraInherit,
        SchemeKind::ExtraBaselineA,
        SchemeKind::ExtraBaselineB,
        SchemeKind::KdFiltered,
        SchemeKind::KdBaselineA,
        SchemeKind::KdBaselineB,
        SchemeKind::MagnitudeGrid,
        SchemeKind::DecayVsConsistent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::PruneInherit => "prune_inherit",
            SchemeKind::PruneBaselineA => "prune_baseline_a",
            SchemeKind::PruneBaselineB => "prune_baseline_b",
            SchemeKind::ExtraInherit => "extra_inherit",
            SchemeKind::ExtraBaselineA => "extra_baseline_a",
            SchemeKind::ExtraBaselineB => "extra_baseline_b",
            SchemeKind::KdFiltered => "kd_filtered",
            SchemeKind::KdBaselineA => "kd_baseline_a",
            SchemeKind::KdBaselineB => "kd_baseline_b",
            SchemeKind::MagnitudeGrid => "magnitude_grid",
            SchemeKind::DecayVsConsistent => "decay_vs_consistent",
        }
    }

    pub fn family(self) -> SchemeFamily {
        use SchemeKind::*;
        match self {
            PruneInherit | PruneBaselineA | PruneBaselineB => SchemeFamily::Prune,
            ExtraInherit | ExtraBaselineA | ExtraBaselineB => SchemeFamily::Extra,
            KdFiltered | KdBaselineA | KdBaselineB => SchemeFamily::Kd,
            MagnitudeGrid => SchemeFamily::Grid,
            DecayVsConsistent => SchemeFamily::Decay,
        }
    }

    pub fn stage_count(self) -> usize {
        match self.family() {
            SchemeFamily::Grid | SchemeFamily::Decay => 1,
            _ => 2,
        }
    }

    /// Expected stage-1 and stage-2 augmentation for the two-stage kinds.
    fn expected_aug(self, strong: u8, weak: u8) -> Option<(AugSpec, Option<AugSpec>)> {
        use SchemeKind::*;
        let fixed = |magnitude| AugSpec::Fixed { magnitude };
        match self {
            PruneInherit | PruneBaselineA | ExtraInherit | ExtraBaselineA => Some((fixed(strong), Some(fixed(weak)))),
            PruneBaselineB | ExtraBaselineB => Some((fixed(weak), Some(fixed(weak)))),
            KdBaselineA => Some((fixed(strong), Some(AugSpec::Random))),
            KdBaselineB => Some((fixed(strong), Some(fixed(weak)))),
            KdFiltered => Some((fixed(strong), None)),
            MagnitudeGrid | DecayVsConsistent => None,
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| config_err!("unknown scheme kind {s:?}"))
    }
}

/// One scheme run for one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeSpec {
    pub kind: SchemeKind,
    pub stages: Vec<TrainSpec>,
    /// The model that is finally evaluated (the student for distillation).
    pub model: ModelSpec,
    /// Distillation teacher.
    pub teacher: Option<ModelSpec>,
    pub strong_magnitude: u8,
    pub weak_magnitude: u8,
    /// Pruning ratio for the prune kinds.
    pub prune_ratio: f64,
    /// Blocks attached for the extra kinds.
    pub extra_blocks: usize,
    pub model_seed: u64,
    /// Grid ratios, or iterative stage ratios for the decay comparison.
    pub ratios: Vec<f64>,
    /// Grid candidates, or the consistent magnitudes compared against decay.
    pub magnitudes: Vec<u8>,
    pub schedule: Option<DecaySchedule>,
}

impl SchemeSpec {
    pub fn validate(&self) -> Result<()> {
        let want = self.kind.stage_count();
        if self.stages.len() != want {
            return Err(config_err!("{} needs {want} stage specs, got {}", self.kind, self.stages.len()));
        }
        self.model.validate()?;
        for s in &self.stages {
            s.validate()?;
        }
        if let Some((first, second)) = self.kind.expected_aug(self.strong_magnitude, self.weak_magnitude) {
            if self.stages[0].aug != first {
                return Err(config_err!("{}: stage 1 augmentation must be {first:?}", self.kind));
            }
            match second {
                Some(a) if self.stages[1].aug != a => {
                    return Err(config_err!("{}: stage 2 augmentation must be {a:?}", self.kind))
                }
                None if !matches!(self.stages[1].aug, AugSpec::Selection(_)) => {
                    return Err(config_err!("{}: stage 2 augmentation must be a selection spec", self.kind))
                }
                _ => {}
            }
        }
        match self.kind.family() {
            SchemeFamily::Prune => {
                if !(0.0..1.0).contains(&self.prune_ratio) {
                    return Err(config_err!("prune_ratio must lie in [0, 1), got {}", self.prune_ratio));
                }
            }
            SchemeFamily::Extra => {
                if self.extra_blocks == 0 {
                    return Err(config_err!("{} needs extra_blocks > 0", self.kind));
                }
            }
            SchemeFamily::Kd => {
                let teacher = self.teacher.as_ref().ok_or_else(|| config_err!("{} needs a teacher", self.kind))?;
                teacher.validate()?;
                if teacher.num_classes != self.model.num_classes || teacher.input_shape != self.model.input_shape {
                    return Err(config_err!("teacher and student disagree on input or class count"));
                }
                if !matches!(self.stages[1].loss, super::LossSpec::Kd(_)) {
                    return Err(config_err!("{}: stage 2 must use the distillation loss", self.kind));
                }
            }
            SchemeFamily::Grid => {
                if self.ratios.is_empty() || self.magnitudes.is_empty() {
                    return Err(config_err!("magnitude_grid needs ratios and magnitudes"));
                }
            }
            SchemeFamily::Decay => {
                if self.ratios.is_empty() {
                    return Err(config_err!("decay_vs_consistent needs ratios"));
                }
                if self.schedule.is_none() && self.magnitudes.is_empty() {
                    return Err(config_err!("decay_vs_consistent needs a schedule or consistent magnitudes"));
                }
                if let Some(s) = &self.schedule {
                    s.validate()?;
                }
            }
        }
        Ok(())
    }

    pub fn stage2(&self) -> Option<&TrainSpec> {
        self.stages.get(1)
    }
}

/// Bit-level comparison of the weights handed from stage 1 to stage 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandoffCheck {
    pub expected: String,
    pub actual: String,
}

impl HandoffCheck {
    pub fn ok(&self) -> bool {
        self.expected == self.actual
    }
}

#[derive(Debug, Clone, Default)]
pub struct SchemeOutcome {
    pub records: Vec<RunRecord>,
    /// Final models keyed by run label.
    pub models: Vec<(String, Model)>,
    pub masks: Vec<(String, PruneState)>,
    pub handoff: Option<HandoffCheck>,
    pub profiles: Vec<(f64, MagnitudeProfile)>,
    pub selection_trace: Vec<SelectionTraceRow>,
}

const EXTRA_SEED: u64 = 0x5EED_0E77;

fn masked_copy(params: &ParamStore, mask: &PruneState) -> Result<ParamStore> {
    let mut out = params.clone();
    for (name, t) in out.iter_mut() {
        if let Some(keep) = mask.mask(name) {
            for (w, &k) in t.data_mut().iter_mut().zip(keep) {
                if !k {
                    *w = 0.0;
                }
            }
        }
    }
    Ok(out)
}

fn shared_only(params: &ParamStore, names: &[String]) -> ParamStore {
    params
        .iter()
        .filter(|(n, _)| names.iter().any(|k| k == n))
        .map(|(n, t)| (n.to_string(), t.clone()))
        .collect()
}

fn concat(a: StageOutput, b: StageOutput) -> StageOutput {
    let mut rows = a.rows;
    rows.extend(b.rows);
    let mut selection_trace = a.selection_trace;
    selection_trace.extend(b.selection_trace);
    StageOutput { rows, selection_trace }
}

fn ctx<'a>(stage: usize, mask: Option<&'a PruneState>, teacher: Option<&'a Model>) -> StageContext<'a> {
    StageContext { stage, mask, teacher }
}

/// Runs every stage of `spec` with the handoff its kind defines.
///
/// Handoffs are checked bit-for-bit; a mismatch is a contract error.
pub fn run_scheme(spec: &SchemeSpec, data: &Split) -> Result<SchemeOutcome> {
    spec.validate()?;
    let label = format!("{}/s{}", spec.kind, spec.model_seed);
    let record = |out: StageOutput| RunRecord {
        run: label.clone(),
        scheme: spec.kind.name().into(),
        seed: spec.model_seed,
        rows: out.rows,
    };
    let mut outcome = SchemeOutcome::default();
    let [s1, s2] = match spec.stages.as_slice() {
        [a, b] => [a, b],
        _ => return run_single_stage(spec, data),
    };

    match spec.kind.family() {
        SchemeFamily::Prune => {
            let (model, state, out) = if spec.kind == SchemeKind::PruneBaselineA {
                let mut m = Model::build(&spec.model, spec.model_seed)?;
                let state = l1_prune(&mut m, spec.prune_ratio, None)?;
                let a = train_stage(&mut m, data, s1, &ctx(0, Some(&state), None))?;
                let b = train_stage(&mut m, data, s2, &ctx(1, Some(&state), None))?;
                (m, state, concat(a, b))
            } else {
                let mut dense = Model::build(&spec.model, spec.model_seed)?;
                let a = train_stage(&mut dense, data, s1, &ctx(0, None, None))?;
                let mut m = Model::build(&spec.model, spec.model_seed)?;
                let report = transfer_weights(&dense, &mut m);
                if !report.skipped.is_empty() || report.copied.len() != m.params().len() {
                    return Err(contract_err!("weight transfer left parameters behind: {:?}", report.skipped));
                }
                let state = l1_prune(&mut m, spec.prune_ratio, None)?;
                let check = HandoffCheck {
                    expected: masked_copy(dense.params(), &state)?.checksum(),
                    actual: m.checksum(),
                };
                if !check.ok() {
                    return Err(contract_err!("prune handoff mismatch: {check:?}"));
                }
                outcome.handoff = Some(check);
                let b = train_stage(&mut m, data, s2, &ctx(1, Some(&state), None))?;
                (m, state, concat(a, b))
            };
            outcome.records.push(record(out));
            outcome.masks.push((label.clone(), state));
            outcome.models.push((label.clone(), model));
        }
        SchemeFamily::Extra => {
            let base = Model::build(&spec.model, spec.model_seed)?;
            let (model, out) = if spec.kind == SchemeKind::ExtraBaselineA {
                let mut m = base;
                let a = train_stage(&mut m, data, s1, &ctx(0, None, None))?;
                let b = train_stage(&mut m, data, s2, &ctx(1, None, None))?;
                (m, concat(a, b))
            } else {
                let mut big = base.attach_extra(spec.extra_blocks, spec.model_seed ^ EXTRA_SEED)?;
                let a = train_stage(&mut big, data, s1, &ctx(0, None, None))?;
                let mut m = big.detach_extra(&spec.model, s2.head_seed)?;
                let shared: Vec<String> = m
                    .params()
                    .names()
                    .filter(|n| !n.starts_with("head."))
                    .map(str::to_string)
                    .collect();
                let check = HandoffCheck {
                    expected: shared_only(big.params(), &shared).checksum(),
                    actual: shared_only(m.params(), &shared).checksum(),
                };
                if !check.ok() {
                    return Err(contract_err!("extra-block handoff mismatch: {check:?}"));
                }
                outcome.handoff = Some(check);
                let b = train_stage(&mut m, data, s2, &ctx(1, None, None))?;
                (m, concat(a, b))
            };
            outcome.records.push(record(out));
            outcome.models.push((label.clone(), model));
        }
        SchemeFamily::Kd => {
            let mut teacher = Model::build(spec.teacher.as_ref().expect("validated"), spec.model_seed ^ EXTRA_SEED)?;
            let a = train_stage(&mut teacher, data, s1, &ctx(0, None, None))?;
            let mut student = Model::build(&spec.model, spec.model_seed)?;
            let b = train_stage(&mut student, data, s2, &ctx(1, None, Some(&teacher)))?;
            let out = concat(a, b);
            outcome.selection_trace = out.selection_trace.clone();
            outcome.records.push(record(out));
            outcome.models.push((format!("{label}/teacher"), teacher));
            outcome.models.push((label.clone(), student));
        }
        SchemeFamily::Grid | SchemeFamily::Decay => unreachable!("single-stage kinds"),
    }
    Ok(outcome)
}

fn run_single_stage(spec: &SchemeSpec, data: &Split) -> Result<SchemeOutcome> {
    let template = &spec.stages[0];
    let mut outcome = SchemeOutcome::default();
    match spec.kind {
        SchemeKind::MagnitudeGrid => {
            let mut ts = template.clone();
            ts.seed = spec.model_seed;
            for &p in &spec.ratios {
                let g = grid_search_magnitude(&spec.model, data, &spec.magnitudes, &ts, p, None)?;
                outcome.records.extend(g.records);
                outcome.profiles.push((p, g.profile));
            }
        }
        SchemeKind::DecayVsConsistent => {
            let start = Model::build(&spec.model, spec.model_seed)?;
            let mut arms: Vec<(String, AugSpec)> =
                spec.schedule.iter().map(|s| ("decay".to_string(), AugSpec::Decay(s.clone()))).collect();
            arms.extend(
                spec.magnitudes
                    .iter()
                    .map(|&m| (format!("fixed{m}"), AugSpec::Fixed { magnitude: m })),
            );
            for (arm, aug) in arms {
                let per_stage: Vec<TrainSpec> = spec
                    .ratios
                    .iter()
                    .map(|_| TrainSpec { aug: aug.clone(), ..template.clone() })
                    .collect();
                let stages = iterative_prune(&start, &spec.ratios, &per_stage, data)?;
                let run = format!("{}/{arm}/s{}", spec.kind, spec.model_seed);
                let rows = stages.iter().flat_map(|s| s.output.rows.clone()).collect();
                let last = stages.into_iter().last().expect("ratios non-empty");
                outcome.records.push(RunRecord {
                    run: run.clone(),
                    scheme: spec.kind.name().into(),
                    seed: spec.model_seed,
                    rows,
                });
                outcome.masks.push((run.clone(), last.state));
                outcome.models.push((run, last.model));
            }
        }
        _ => unreachable!("two-stage kinds handled by run_scheme"),
    }
    Ok(outcome)
}

/// Refuses a comparison whose members of one family differ in stage-2
/// configuration, model or seed.
pub fn verify_controlled(specs: &[SchemeSpec]) -> Result<()> {
    for (i, a) in specs.iter().enumerate() {
        for b in &specs[i + 1..] {
            if a.kind.family() != b.kind.family() || a.model_seed != b.model_seed {
                continue;
            }
            let same_stage2 = match (a.kind.family(), a.stage2(), b.stage2()) {
                // Distillation arms differ in stage-2 augmentation by design.
                (SchemeFamily::Kd, Some(x), Some(y)) => {
                    TrainSpec { aug: AugSpec::None, ..x.clone() } == TrainSpec { aug: AugSpec::None, ..y.clone() }
                }
                (_, x, y) => x == y,
            };
            if !same_stage2 || a.model != b.model || a.prune_ratio != b.prune_ratio {
                return Err(config_err!("{} and {} differ in stage-2 configuration", a.kind, b.kind));
            }
        }
    }
    Ok(())
}

/// Validates every spec and the controlled-comparison rule, then runs them in order.
pub fn run_comparison(specs: &[SchemeSpec], data: &Split) -> Result<Vec<SchemeOutcome>> {
    for s in specs {
        s.validate()?;
    }
    verify_controlled(specs)?;
    specs.iter().map(|s| run_scheme(s, data)).collect()
}
