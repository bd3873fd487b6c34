use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{AugSpec, DataConfig, LossSpec, SchemeKind, SchemeSpec, TrainSpec};
use crate::error::{config_err, Error, Result};
use crate::losses::KdConfig;
use crate::models::ModelSpec;
use crate::policy::{DecaySchedule, Interpolation};
use crate::selection::SelectionConfig;

/// The experiment shipped with the binary, used when no config is given.
pub const DEFAULT_CONFIG: &str = include_str!("../../../../configs/desk.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub model: String,
    pub ratios: Vec<f64>,
    pub magnitudes: Vec<u8>,
    pub seeds: Vec<u64>,
    pub train: Option<TrainSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneSection {
    pub model: String,
    pub ratios: Vec<f64>,
    /// `decay`, `fixed:M`, or `compare` for decay plus every consistent magnitude.
    pub schedule: String,
    pub pivots: Vec<(f64, u8)>,
    pub interpolation: Interpolation,
    pub consistent: Vec<u8>,
    pub seeds: Vec<u64>,
    pub train: Option<TrainSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSection {
    pub model: String,
    pub teacher: Option<String>,
    pub kinds: Vec<SchemeKind>,
    pub strong_magnitude: u8,
    pub weak_magnitude: u8,
    pub prune_ratio: f64,
    pub extra_blocks: usize,
    pub seeds: Vec<u64>,
    pub kd: Option<KdConfig>,
    pub selection: Option<SelectionConfig>,
    pub stage1: Option<TrainSpec>,
    pub stage2: Option<TrainSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillSection {
    pub teacher: String,
    pub student: String,
    pub teacher_magnitude: u8,
    pub kd: KdConfig,
    pub selection: SelectionConfig,
    pub seeds: Vec<u64>,
    pub teacher_train: Option<TrainSpec>,
    pub student_train: Option<TrainSpec>,
}

/// A whole experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub name: String,
    pub data: DataConfig,
    pub models: IndexMap<String, ModelSpec>,
    /// Stage template for any section that does not give its own.
    pub train: TrainSpec,
    pub grid: Option<GridSection>,
    pub prune: Option<PruneSection>,
    pub scheme: Option<SchemeSection>,
    pub distill: Option<DistillSection>,
}

/// Augmentation used by the iterative pruning command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleChoice {
    Decay,
    Fixed(u8),
    /// Decay and each consistent magnitude side by side.
    Compare,
}

impl FromStr for ScheduleChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "decay" => Ok(ScheduleChoice::Decay),
            "compare" => Ok(ScheduleChoice::Compare),
            _ => s
                .strip_prefix("fixed:")
                .and_then(|m| m.parse().ok())
                .map(ScheduleChoice::Fixed)
                .ok_or_else(|| config_err!("schedule must be decay, compare or fixed:M, got {s:?}")),
        }
    }
}

fn seeded(t: &TrainSpec, seed: u64) -> TrainSpec {
    TrainSpec {
        seed: t.seed.wrapping_add(seed),
        head_seed: t.head_seed.wrapping_add(seed),
        ..t.clone()
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.parse()
    }

    pub fn builtin() -> Config {
        DEFAULT_CONFIG.parse().expect("embedded config is valid")
    }

    pub fn validate(&self) -> Result<()> {
        for (name, m) in &self.models {
            m.validate().map_err(|e| config_err!("model {name}: {e}"))?;
        }
        self.train.validate()?;
        Ok(())
    }

    pub fn model(&self, name: &str) -> Result<&ModelSpec> {
        self.models.get(name).ok_or_else(|| config_err!("no model named {name:?}"))
    }

    fn section<'a, T>(&self, s: &'a Option<T>, name: &str) -> Result<&'a T> {
        s.as_ref().ok_or_else(|| config_err!("config {:?} has no [{name}] section", self.name))
    }

    /// One grid scheme per seed.
    pub fn grid_specs(&self) -> Result<Vec<SchemeSpec>> {
        let g = self.section(&self.grid, "grid")?;
        let model = self.model(&g.model)?.clone();
        let template = g.train.as_ref().unwrap_or(&self.train);
        Ok(g.seeds
            .iter()
            .map(|&s| SchemeSpec {
                kind: SchemeKind::MagnitudeGrid,
                stages: vec![seeded(template, s)],
                model: model.clone(),
                teacher: None,
                strong_magnitude: 0,
                weak_magnitude: 0,
                prune_ratio: 0.0,
                extra_blocks: 0,
                model_seed: s,
                ratios: g.ratios.clone(),
                magnitudes: g.magnitudes.clone(),
                schedule: None,
            })
            .collect())
    }

    pub fn prune_specs(&self, choice: ScheduleChoice) -> Result<Vec<SchemeSpec>> {
        let p = self.section(&self.prune, "prune")?;
        let model = self.model(&p.model)?.clone();
        let template = p.train.as_ref().unwrap_or(&self.train);
        let schedule = DecaySchedule::new(p.pivots.clone(), p.interpolation)?;
        let (schedule, magnitudes) = match choice {
            ScheduleChoice::Decay => (Some(schedule), vec![]),
            ScheduleChoice::Fixed(m) => (None, vec![m]),
            ScheduleChoice::Compare => (Some(schedule), p.consistent.clone()),
        };
        Ok(p.seeds
            .iter()
            .map(|&s| SchemeSpec {
                kind: SchemeKind::DecayVsConsistent,
                stages: vec![seeded(template, s)],
                model: model.clone(),
                teacher: None,
                strong_magnitude: 0,
                weak_magnitude: 0,
                prune_ratio: 0.0,
                extra_blocks: 0,
                model_seed: s,
                ratios: p.ratios.clone(),
                magnitudes: magnitudes.clone(),
                schedule: schedule.clone(),
            })
            .collect())
    }

    /// Specs for each listed kind and seed, kind-major.
    pub fn scheme_specs(&self) -> Result<Vec<SchemeSpec>> {
        let sc = self.section(&self.scheme, "scheme")?;
        let model = self.model(&sc.model)?.clone();
        let teacher = sc.teacher.as_deref().map(|t| self.model(t).cloned()).transpose()?;
        let first = sc.stage1.as_ref().unwrap_or(&self.train);
        let second = sc.stage2.as_ref().unwrap_or(&self.train);
        let mut specs = Vec::new();
        for &kind in &sc.kinds {
            if kind.stage_count() != 2 {
                return Err(config_err!("[scheme] runs two-stage kinds only, got {kind}"));
            }
            let (aug1, aug2) = match kind {
                SchemeKind::PruneBaselineB | SchemeKind::ExtraBaselineB => (sc.weak_magnitude, sc.weak_magnitude),
                _ => (sc.strong_magnitude, sc.weak_magnitude),
            };
            let mut s1 = TrainSpec { aug: AugSpec::Fixed { magnitude: aug1 }, loss: LossSpec::Ce, ..first.clone() };
            let mut s2 = TrainSpec { aug: AugSpec::Fixed { magnitude: aug2 }, loss: LossSpec::Ce, ..second.clone() };
            if kind.family() == super::SchemeFamily::Kd {
                s1.aug = AugSpec::Fixed { magnitude: sc.strong_magnitude };
                let kd = sc.kd.ok_or_else(|| config_err!("{kind} needs [scheme.kd]"))?;
                s2.loss = LossSpec::Kd(kd);
                s2.aug = match kind {
                    SchemeKind::KdFiltered => AugSpec::Selection(
                        sc.selection.ok_or_else(|| config_err!("{kind} needs [scheme.selection]"))?,
                    ),
                    SchemeKind::KdBaselineA => AugSpec::Random,
                    _ => AugSpec::Fixed { magnitude: sc.weak_magnitude },
                };
            }
            for &seed in &sc.seeds {
                specs.push(SchemeSpec {
                    kind,
                    stages: vec![seeded(&s1, seed), seeded(&s2, seed)],
                    model: model.clone(),
                    teacher: teacher.clone(),
                    strong_magnitude: sc.strong_magnitude,
                    weak_magnitude: sc.weak_magnitude,
                    prune_ratio: sc.prune_ratio,
                    extra_blocks: sc.extra_blocks,
                    model_seed: seed,
                    ratios: vec![],
                    magnitudes: vec![],
                    schedule: None,
                });
            }
        }
        for s in &specs {
            s.validate()?;
        }
        Ok(specs)
    }

    /// Filtered distillation runs, one per seed.
    pub fn distill_specs(&self) -> Result<Vec<SchemeSpec>> {
        let d = self.section(&self.distill, "distill")?;
        let teacher = self.model(&d.teacher)?.clone();
        let student = self.model(&d.student)?.clone();
        let t1 = d.teacher_train.as_ref().unwrap_or(&self.train);
        let t2 = d.student_train.as_ref().unwrap_or(&self.train);
        let s1 = TrainSpec { aug: AugSpec::Fixed { magnitude: d.teacher_magnitude }, loss: LossSpec::Ce, ..t1.clone() };
        let s2 = TrainSpec { aug: AugSpec::Selection(d.selection), loss: LossSpec::Kd(d.kd), ..t2.clone() };
        d.seeds
            .iter()
            .map(|&seed| {
                let spec = SchemeSpec {
                    kind: SchemeKind::KdFiltered,
                    stages: vec![seeded(&s1, seed), seeded(&s2, seed)],
                    model: student.clone(),
                    teacher: Some(teacher.clone()),
                    strong_magnitude: d.teacher_magnitude,
                    weak_magnitude: 0,
                    prune_ratio: 0.0,
                    extra_blocks: 0,
                    model_seed: seed,
                    ratios: vec![],
                    magnitudes: vec![],
                    schedule: None,
                };
                spec.validate().map(|_| spec)
            })
            .collect()
    }
}

impl FromStr for Config {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(s).map_err(|e| config_err!("{e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
