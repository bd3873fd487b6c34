//! L1-norm unstructured pruning with persistent masks.
//!
//! Every prunable tensor (conv and head weights; biases are left alone) gets
//! its own quota of `⌊p·size⌋` zeros. Entries already masked by an earlier
//! stage count toward the quota, the rest are filled with the smallest `|w|`,
//! lowest flat index first on ties. Masks only ever grow.

use std::path::Path;

use indexmap::IndexMap;

use crate::error::{config_err, contract_err, Error, Result};
use crate::harness::{Split, StageContext, StageOutput, TrainSpec};
use crate::models::Model;
use crate::tensor::{load_checkpoint, save_checkpoint, ParamStore, Tensor};

/// Slack for `p·size` landing a hair below an integer in floating point.
const QUOTA_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    shape: Vec<usize>,
    keep: Vec<bool>,
}

impl Mask {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn zeros(&self) -> usize {
        self.keep.iter().filter(|k| !**k).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneState {
    masks: IndexMap<String, Mask>,
    target_ratio: f64,
}

impl PruneState {
    /// All-ones masks over the model's prunable tensors.
    pub fn dense(model: &Model) -> Self {
        let masks = model
            .prunable_names()
            .into_iter()
            .map(|name| {
                let t = model.params().get(&name).expect("listed by the model");
                let mask = Mask {
                    shape: t.shape().to_vec(),
                    keep: vec![true; t.numel()],
                };
                (name, mask)
            })
            .collect();
        PruneState {
            masks,
            target_ratio: 0.0,
        }
    }

    pub fn target_ratio(&self) -> f64 {
        self.target_ratio
    }

    pub fn mask(&self, name: &str) -> Option<&[bool]> {
        self.masks.get(name).map(|m| m.keep.as_slice())
    }

    pub fn masks(&self) -> impl Iterator<Item = (&str, &Mask)> {
        self.masks.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn total(&self) -> usize {
        self.masks.values().map(|m| m.keep.len()).sum()
    }

    pub fn zeros(&self) -> usize {
        self.masks.values().map(Mask::zeros).sum()
    }

    /// Forces masked weights to exactly zero.
    pub fn apply(&self, params: &mut ParamStore) -> Result<()> {
        for (name, mask) in &self.masks {
            let t = params
                .get_mut(name)
                .ok_or_else(|| contract_err!("masked parameter {name} missing from model"))?;
            if t.shape() != mask.shape.as_slice() {
                return Err(contract_err!("mask for {name} has shape {:?}, weight {:?}", mask.shape, t.shape()));
            }
            for (w, &k) in t.data_mut().iter_mut().zip(&mask.keep) {
                if !k {
                    *w = 0.0;
                }
            }
        }
        Ok(())
    }

    /// True when every entry masked here is also masked in `later`.
    pub fn is_subset_of(&self, later: &PruneState) -> bool {
        self.masks.iter().all(|(name, m)| match later.masks.get(name) {
            Some(l) => m.keep.iter().zip(&l.keep).all(|(&a, &b)| a || !b),
            None => false,
        })
    }

    /// Writes masks as a checkpoint with 0/1 payloads.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut store = ParamStore::new();
        for (name, m) in &self.masks {
            let data = m.keep.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect();
            store.insert(name.clone(), Tensor::new(m.shape.clone(), data)?)?;
        }
        save_checkpoint(path, &store)
    }

    pub fn load(path: impl AsRef<Path>, target_ratio: f64) -> Result<Self> {
        let store = load_checkpoint(path)?;
        let mut masks = IndexMap::new();
        for (name, t) in store.iter() {
            let keep = t
                .data()
                .iter()
                .map(|&v| match v {
                    0.0 => Ok(false),
                    1.0 => Ok(true),
                    other => Err(Error::Format {
                        offset: 0,
                        message: format!("mask {name} holds {other}, expected 0 or 1"),
                    }),
                })
                .collect::<Result<_>>()?;
            masks.insert(name.to_string(), Mask { shape: t.shape().to_vec(), keep });
        }
        Ok(PruneState { masks, target_ratio })
    }
}

/// `1 − Card/Num` over all prunable tensors jointly.
pub fn pruning_ratio(state: &PruneState) -> f64 {
    let total = state.total();
    if total == 0 {
        0.0
    } else {
        state.zeros() as f64 / total as f64
    }
}

/// Per-tensor number of entries to zero at ratio `p`.
pub fn quota(p: f64, size: usize) -> usize {
    ((p * size as f64 + QUOTA_EPS).floor() as usize).min(size)
}

/// Prunes `model` in place to ratio `p` and returns the cumulative masks.
pub fn l1_prune(model: &mut Model, p: f64, prior: Option<&PruneState>) -> Result<PruneState> {
    if !(0.0..1.0).contains(&p) {
        return Err(config_err!("pruning ratio must lie in [0, 1), got {p}"));
    }
    if let Some(prior) = prior {
        if p < prior.target_ratio {
            return Err(contract_err!(
                "pruning ratio may not decrease: {} then {p}",
                prior.target_ratio
            ));
        }
    }
    let mut masks = IndexMap::new();
    for name in model.prunable_names() {
        let weights = model.params().get(&name).expect("listed by the model");
        let n = weights.numel();
        let already: Vec<bool> = match prior {
            Some(prior) => {
                let m = prior
                    .masks
                    .get(&name)
                    .ok_or_else(|| contract_err!("prior state has no mask for {name}"))?;
                if m.shape != weights.shape() {
                    return Err(contract_err!("prior mask for {name} has shape {:?}", m.shape));
                }
                m.keep.iter().map(|k| !k).collect()
            }
            None => vec![false; n],
        };
        let want = quota(p, n);
        let prior_zeros = already.iter().filter(|m| **m).count();
        if prior_zeros > want {
            return Err(contract_err!(
                "{name}: {prior_zeros} entries already masked exceed quota {want} at ratio {p}"
            ));
        }
        let w = weights.data();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            already[b]
                .cmp(&already[a])
                .then(w[a].abs().total_cmp(&w[b].abs()))
                .then(a.cmp(&b))
        });
        let mut keep = vec![true; n];
        for &i in &order[..want] {
            keep[i] = false;
        }
        masks.insert(
            name,
            Mask {
                shape: weights.shape().to_vec(),
                keep,
            },
        );
    }
    let state = PruneState {
        masks,
        target_ratio: p,
    };
    state.apply(model.params_mut())?;
    Ok(state)
}

/// One prune-then-fine-tune stage of [`iterative_prune`].
#[derive(Debug, Clone)]
pub struct PruneStage {
    pub ratio: f64,
    pub model: Model,
    pub state: PruneState,
    pub output: StageOutput,
}

/// Prunes to each ratio in turn (masks accumulate) and fine-tunes under the
/// matching stage spec, whose augmentation may differ per stage.
pub fn iterative_prune(
    model: &Model,
    ratios: &[f64],
    per_stage: &[TrainSpec],
    data: &Split,
) -> Result<Vec<PruneStage>> {
    if ratios.len() != per_stage.len() {
        return Err(config_err!(
            "{} ratios but {} stage specs",
            ratios.len(),
            per_stage.len()
        ));
    }
    if ratios.windows(2).any(|w| w[1] <= w[0]) {
        return Err(config_err!("pruning ratios must be strictly ascending: {ratios:?}"));
    }
    let mut current = model.clone();
    let mut prior: Option<PruneState> = None;
    let mut stages = Vec::with_capacity(ratios.len());
    for (i, (&p, spec)) in ratios.iter().zip(per_stage).enumerate() {
        let state = l1_prune(&mut current, p, prior.as_ref())?;
        let ctx = StageContext {
            stage: i,
            mask: Some(&state),
            ..StageContext::default()
        };
        let output = crate::harness::train_stage(&mut current, data, spec, &ctx)?;
        stages.push(PruneStage {
            ratio: p,
            model: current.clone(),
            state: state.clone(),
            output,
        });
        prior = Some(state);
    }
    Ok(stages)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{BlockSpec, ModelSpec};

    fn linear_model(weights: &[f64]) -> Model {
        // zero-block model: the only prunable tensor is head.weight [n, 1]
        let spec = ModelSpec {
            input_shape: [1, 1, weights.len()],
            blocks: vec![],
            extra_blocks: 0,
            num_classes: 1,
        };
        let mut m = Model::build(&spec, 0).unwrap();
        m.params_mut()
            .get_mut("head.weight")
            .unwrap()
            .data_mut()
            .copy_from_slice(weights);
        m
    }

    /// Zero set by explicit sort on (|w|, index).
    fn sort_oracle(w: &[f64], p: f64) -> Vec<bool> {
        let k = (p * w.len() as f64 + 1e-9).floor() as usize;
        let mut idx: Vec<usize> = (0..w.len()).collect();
        idx.sort_by(|&a, &b| w[a].abs().partial_cmp(&w[b].abs()).unwrap().then(a.cmp(&b)));
        let mut keep = vec![true; w.len()];
        idx[..k].iter().for_each(|&i| keep[i] = false);
        keep
    }

    #[test]
    fn half_ratio_masks_smallest() {
        let w = [0.5, -0.1, 0.3, 0.02];
        let mut m = linear_model(&w);
        let s = l1_prune(&mut m, 0.5, None).unwrap();
        assert_eq!(s.mask("head.weight").unwrap(), &[true, false, true, false]);
        assert_eq!(s.mask("head.weight").unwrap(), sort_oracle(&w, 0.5).as_slice());
        assert_eq!(m.params().get("head.weight").unwrap().data(), &[0.5, 0.0, 0.3, 0.0]);
    }

    #[test]
    fn zero_ratio_keeps_everything() {
        let w = [0.5, -0.1, 0.3, 0.02];
        let mut m = linear_model(&w);
        let before = m.checksum();
        let s = l1_prune(&mut m, 0.0, None).unwrap();
        assert!(s.mask("head.weight").unwrap().iter().all(|k| *k));
        assert_eq!(before, m.checksum());
        assert_eq!(pruning_ratio(&s), 0.0);
    }

    #[test]
    fn ties_break_on_lowest_index() {
        let mut m = linear_model(&[0.2, -0.2, 0.2, 0.2]);
        let s = l1_prune(&mut m, 0.25, None).unwrap();
        assert_eq!(s.mask("head.weight").unwrap(), &[false, true, true, true]);
    }

    #[test]
    fn ratio_counts() {
        let mut m = linear_model(&[1.0, 2.0, 3.0, 4.0]);
        let mut s = l1_prune(&mut m, 0.0, None).unwrap();
        assert_eq!(pruning_ratio(&s), 0.0);
        s.masks.get_mut("head.weight").unwrap().keep = vec![false; 4];
        assert_eq!(pruning_ratio(&s), 1.0);
        s.masks.get_mut("head.weight").unwrap().keep = vec![false, true, false, true];
        assert_eq!(pruning_ratio(&s), 0.5);
    }

    #[test]
    fn decreasing_ratio_rejected() {
        let mut m = linear_model(&[1.0, 2.0, 3.0, 4.0]);
        let s = l1_prune(&mut m, 0.5, None).unwrap();
        assert!(matches!(l1_prune(&mut m, 0.25, Some(&s)), Err(Error::Contract(_))));
        assert!(matches!(l1_prune(&mut m, 1.0, None), Err(Error::Config(_))));
    }

    #[test]
    fn prior_masks_persist_and_count() {
        // weight 0 is masked first even though it later grows large
        let mut m = linear_model(&[0.01, 0.5, 0.6, 0.7]);
        let s1 = l1_prune(&mut m, 0.25, None).unwrap();
        m.params_mut().get_mut("head.weight").unwrap().data_mut()[0] = 9.0;
        let s2 = l1_prune(&mut m, 0.5, Some(&s1)).unwrap();
        assert_eq!(s2.mask("head.weight").unwrap(), &[false, false, true, true]);
        assert!(s1.is_subset_of(&s2));
        assert_eq!(m.params().get("head.weight").unwrap().data()[0], 0.0);
    }

    #[test]
    fn biases_not_pruned() {
        let spec = ModelSpec {
            input_shape: [1, 6, 6],
            blocks: vec![BlockSpec { channels: 3, stride: 1, pool: true }],
            extra_blocks: 0,
            num_classes: 2,
        };
        let mut m = Model::build(&spec, 3).unwrap();
        let s = l1_prune(&mut m, 0.5, None).unwrap();
        assert_eq!(s.masks().map(|(n, _)| n).collect::<Vec<_>>(), ["conv0.weight", "head.weight"]);
        assert!(m.params().get("conv0.bias").unwrap().data().iter().all(|v| *v != 0.0));
    }

    #[test]
    fn mask_file_round_trip() {
        let mut m = linear_model(&[0.5, -0.1, 0.3, 0.02]);
        let s = l1_prune(&mut m, 0.5, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.adck");
        s.save(&path).unwrap();
        assert_eq!(PruneState::load(&path, 0.5).unwrap(), s);
    }
}
