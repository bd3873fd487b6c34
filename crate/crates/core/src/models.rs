//! Small configurable CNN classifiers and weight handoff between them.
//!
//! A model is a stack of blocks (`conv3×3 → bias → relu → optional 2×2 max
//! pool`), flattened into a dense classifier head. The last `extra_blocks`
//! blocks of a spec are detachable: [`Model::attach_extra`] appends them in
//! front of a fresh head, [`Model::detach_extra`] drops them again.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, contract_err, dim_err, Error, Result};
use crate::tensor::{Bound, Graph, ParamStore, Tensor, Var};

pub const KERNEL: usize = 3;
pub const PAD: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub channels: usize,
    pub stride: usize,
    pub pool: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// (channels, height, width)
    pub input_shape: [usize; 3],
    pub blocks: Vec<BlockSpec>,
    pub extra_blocks: usize,
    pub num_classes: usize,
}

impl std::str::FromStr for ModelSpec {
    type Err = Error;

    /// Parses and validates a TOML model description.
    fn from_str(s: &str) -> Result<Self> {
        let spec: ModelSpec = toml::from_str(s).map_err(|e| config_err!("{e}"))?;
        spec.validate()?;
        Ok(spec)
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let [c, h, w] = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(config_err!("input shape {:?} must be positive", self.input_shape));
        }
        if self.num_classes == 0 {
            return Err(config_err!("num_classes must be positive"));
        }
        if self.extra_blocks > self.blocks.len() {
            return Err(config_err!(
                "{} extra blocks requested but only {} blocks exist",
                self.extra_blocks,
                self.blocks.len()
            ));
        }
        let (mut h, mut w) = (h, w);
        for (i, b) in self.blocks.iter().enumerate() {
            if b.channels == 0 || b.stride == 0 {
                return Err(config_err!("block {i}: channels and stride must be positive"));
            }
            if (h + 2 * PAD - KERNEL) % b.stride != 0 || (w + 2 * PAD - KERNEL) % b.stride != 0 {
                return Err(config_err!(
                    "block {i}: stride {} does not divide the {h}x{w} input exactly",
                    b.stride
                ));
            }
            h = (h + 2 * PAD - KERNEL) / b.stride + 1;
            w = (w + 2 * PAD - KERNEL) / b.stride + 1;
            if b.pool {
                if h < 2 || w < 2 {
                    return Err(config_err!("block {i}: cannot pool a {h}x{w} map"));
                }
                h /= 2;
                w /= 2;
            }
        }
        Ok(())
    }

    pub fn base_len(&self) -> usize {
        self.blocks.len() - self.extra_blocks
    }

    /// The spec with its detachable blocks removed.
    pub fn base_spec(&self) -> ModelSpec {
        ModelSpec {
            input_shape: self.input_shape,
            blocks: self.blocks[..self.base_len()].to_vec(),
            extra_blocks: 0,
            num_classes: self.num_classes,
        }
    }

    /// (channels, height, width) entering the head.
    pub fn feature_shape(&self) -> [usize; 3] {
        let [mut c, mut h, mut w] = self.input_shape;
        for b in &self.blocks {
            c = b.channels;
            h = (h + 2 * PAD - KERNEL) / b.stride + 1;
            w = (w + 2 * PAD - KERNEL) / b.stride + 1;
            if b.pool {
                h /= 2;
                w /= 2;
            }
        }
        [c, h, w]
    }

    pub fn feature_width(&self) -> usize {
        self.feature_shape().iter().product()
    }

    pub fn block_name(&self, i: usize) -> String {
        if i < self.base_len() {
            format!("conv{i}")
        } else {
            format!("extra{}", i - self.base_len())
        }
    }

    fn block_in_channels(&self, i: usize) -> usize {
        if i == 0 {
            self.input_shape[0]
        } else {
            self.blocks[i - 1].channels
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    params: ParamStore,
}

/// Outcome of [`transfer_weights`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransferReport {
    pub copied: Vec<String>,
    /// `(name, reason)` for every name not copied, from either side.
    pub skipped: Vec<(String, String)>,
}

impl TransferReport {
    /// Share of destination parameters that were overwritten.
    pub fn copied_fraction(&self, dst_len: usize) -> f64 {
        if dst_len == 0 {
            0.0
        } else {
            self.copied.len() as f64 / dst_len as f64
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound)).with_grad()
}

fn init_block(rng: &mut ChaCha8Rng, params: &mut ParamStore, name: &str, cin: usize, cout: usize) -> Result<()> {
    let fan_in = (cin * KERNEL * KERNEL) as f64;
    // Kaiming-uniform with ReLU gain
    params.insert(format!("{name}.weight"), uniform(rng, &[cout, cin, KERNEL, KERNEL], (6.0 / fan_in).sqrt()))?;
    params.insert(format!("{name}.bias"), uniform(rng, &[cout], 1.0 / fan_in.sqrt()))?;
    Ok(())
}

fn init_head(rng: &mut ChaCha8Rng, params: &mut ParamStore, fan_in: usize, classes: usize) -> Result<()> {
    let fan_in_f = fan_in as f64;
    // linear gain: no nonlinearity follows the logits
    params.insert("head.weight", uniform(rng, &[fan_in, classes], (3.0 / fan_in_f).sqrt()))?;
    params.insert("head.bias", uniform(rng, &[classes], 1.0 / fan_in_f.sqrt()))?;
    Ok(())
}

impl Model {
    /// Deterministically initialised model: same `(spec, seed)`, same bits.
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Model> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (i, b) in spec.blocks.iter().enumerate() {
            init_block(&mut rng, &mut params, &spec.block_name(i), spec.block_in_channels(i), b.channels)?;
        }
        init_head(&mut rng, &mut params, spec.feature_width(), spec.num_classes)?;
        Ok(Model {
            spec: spec.clone(),
            params,
        })
    }

    pub fn from_parts(spec: ModelSpec, params: ParamStore) -> Result<Model> {
        spec.validate()?;
        let reference = Model::build(&spec, 0)?;
        for (name, t) in reference.params.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => return Err(dim_err!("{name}: expected {:?}, got {:?}", t.shape(), p.shape())),
                None => return Err(contract_err!("parameter {name} missing")),
            }
        }
        if params.len() != reference.params.len() {
            return Err(contract_err!("unexpected extra parameters for this spec"));
        }
        let mut params = params;
        params.set_requires_grad(true);
        Ok(Model { spec, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.num_values()
    }

    pub fn checksum(&self) -> String {
        self.params.checksum()
    }

    /// Weight tensors of convolutions and the head; biases are not prunable.
    pub fn prunable_names(&self) -> Vec<String> {
        self.params
            .names()
            .filter(|n| n.ends_with(".weight"))
            .map(str::to_string)
            .collect()
    }

    /// Records the forward pass on `graph`; `input` is `[batch, c, h, w]`.
    pub fn forward(&self, graph: &mut Graph, bound: &Bound, input: Var) -> Result<Var> {
        let shape = graph.value(input)?.shape().to_vec();
        if shape.len() != 4 || shape[1..] != self.spec.input_shape {
            return Err(dim_err!(
                "model expects [batch, {:?}], got {shape:?}",
                self.spec.input_shape
            ));
        }
        let get = |name: String| {
            bound
                .get(&name)
                .copied()
                .ok_or_else(|| contract_err!("parameter {name} not bound"))
        };
        let mut x = input;
        for (i, b) in self.spec.blocks.iter().enumerate() {
            let name = self.spec.block_name(i);
            x = graph.conv2d(x, get(format!("{name}.weight"))?, b.stride, PAD)?;
            x = graph.channel_bias(x, get(format!("{name}.bias"))?)?;
            x = graph.relu(x)?;
            if b.pool {
                x = graph.maxpool2x2(x)?;
            }
        }
        let flat = graph.flatten(x)?;
        graph.dense(flat, get("head.weight".into())?, get("head.bias".into())?)
    }

    /// Gradient-free evaluation: `[batch, c, h, w] → [batch, num_classes]` logits.
    pub fn logits(&self, input: &Tensor) -> Result<Tensor> {
        let mut graph = Graph::new();
        let bound = self.params.bind_frozen(&mut graph);
        let x = graph.constant(input.clone());
        let out = self.forward(&mut graph, &bound, x)?;
        Ok(graph.value(out)?.clone())
    }

    /// Enlarged copy with `n_blocks` new blocks before a fresh head. The new
    /// blocks have twice the channels of the last base block.
    pub fn attach_extra(&self, n_blocks: usize, seed: u64) -> Result<Model> {
        if n_blocks == 0 {
            return Err(contract_err!("attach_extra needs at least one block; use the base model"));
        }
        let width = self
            .spec
            .blocks
            .last()
            .map_or(self.spec.input_shape[0], |b| b.channels)
            * 2;
        let mut spec = self.spec.clone();
        spec.blocks.extend((0..n_blocks).map(|_| BlockSpec {
            channels: width,
            stride: 1,
            pool: false,
        }));
        spec.extra_blocks += n_blocks;
        spec.validate()?;

        let mut params = ParamStore::new();
        for (name, t) in self.params.iter().filter(|(n, _)| !n.starts_with("head.")) {
            params.insert(name, t.clone())?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in self.spec.blocks.len()..spec.blocks.len() {
            init_block(&mut rng, &mut params, &spec.block_name(i), spec.block_in_channels(i), spec.blocks[i].channels)?;
        }
        init_head(&mut rng, &mut params, spec.feature_width(), spec.num_classes)?;
        Ok(Model { spec, params })
    }

    /// Base-spec model sharing every non-head parameter bit-for-bit; the head
    /// is re-initialised from `head_seed`.
    pub fn detach_extra(&self, base_spec: &ModelSpec, head_seed: u64) -> Result<Model> {
        if self.spec.extra_blocks == 0 {
            return Err(Error::Transfer {
                reason: "model carries no extra blocks".into(),
                missing: Vec::new(),
            });
        }
        let mut base = Model::build(base_spec, head_seed)?;
        let names: Vec<String> = base
            .params
            .names()
            .filter(|n| !n.starts_with("head."))
            .map(str::to_string)
            .collect();
        let missing: Vec<String> = names
            .iter()
            .filter(|n| {
                match (self.params.get(n), base.params.get(n)) {
                    (Some(a), Some(b)) => a.shape() != b.shape(),
                    _ => true,
                }
            })
            .cloned()
            .collect();
        if !missing.is_empty() || self.spec.base_spec() != *base_spec {
            return Err(Error::Transfer {
                reason: "enlarged model is not built over this base spec".into(),
                missing,
            });
        }
        for name in &names {
            let src = self.params.get(name).expect("checked above");
            base.params.get_mut(name).expect("checked above").data_mut().copy_from_slice(src.data());
        }
        Ok(base)
    }
}

/// Copies every parameter present in both models with equal shape.
pub fn transfer_weights(src: &Model, dst: &mut Model) -> TransferReport {
    let mut report = TransferReport::default();
    let dst_names: Vec<String> = dst.params.names().map(str::to_string).collect();
    for name in &dst_names {
        match src.params.get(name) {
            Some(s) => {
                let d = dst.params.get_mut(name).expect("name taken from dst");
                if s.shape() == d.shape() {
                    d.data_mut().copy_from_slice(s.data());
                    report.copied.push(name.clone());
                } else {
                    report
                        .skipped
                        .push((name.clone(), format!("shape {:?} vs {:?}", s.shape(), d.shape())));
                }
            }
            None => report.skipped.push((name.clone(), "absent from source".into())),
        }
    }
    for name in src.params.names().filter(|n| !dst.params.contains(n)) {
        report.skipped.push((name.to_string(), "absent from destination".into()));
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(blocks: &[(usize, bool)]) -> ModelSpec {
        ModelSpec {
            input_shape: [1, 8, 8],
            blocks: blocks
                .iter()
                .map(|&(channels, pool)| BlockSpec { channels, stride: 1, pool })
                .collect(),
            extra_blocks: 0,
            num_classes: 3,
        }
    }

    fn probe(batch: usize) -> Tensor {
        Tensor::from_fn(&[batch, 1, 8, 8], |i| ((i * 7919) % 97) as f64 / 97.0 - 0.5)
    }

    #[test]
    fn zero_blocks_is_linear_classifier() {
        let m = Model::build(&spec(&[]), 1).unwrap();
        assert_eq!(m.params().names().collect::<Vec<_>>(), ["head.weight", "head.bias"]);
        assert_eq!(m.params().get("head.weight").unwrap().shape(), &[64, 3]);
        let x = probe(2);
        let out = m.logits(&x).unwrap();
        let (w, b) = (m.params().get("head.weight").unwrap(), m.params().get("head.bias").unwrap());
        for bi in 0..2 {
            for o in 0..3 {
                let mut acc = b.data()[o];
                for i in 0..64 {
                    acc += x.data()[bi * 64 + i] * w.data()[i * 3 + o];
                }
                assert!((out.data()[bi * 3 + o] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn same_seed_same_bits() {
        let s = spec(&[(4, true), (6, false)]);
        assert_eq!(Model::build(&s, 9).unwrap().checksum(), Model::build(&s, 9).unwrap().checksum());
        assert_ne!(Model::build(&s, 9).unwrap().checksum(), Model::build(&s, 10).unwrap().checksum());
    }

    #[test]
    fn zero_image_follows_bias_path() {
        // On a zero image every conv output equals its bias, so each block map is
        // the constant relu(bias) per channel; the next conv sees a constant map
        // whose 3×3 window is clipped by zero padding at the border.
        let s = spec(&[(2, false)]);
        let m = Model::build(&s, 4).unwrap();
        let out = m.logits(&Tensor::zeros(&[1, 1, 8, 8])).unwrap();
        let cb = m.params().get("conv0.bias").unwrap().data();
        let hw = m.params().get("head.weight").unwrap();
        let hb = m.params().get("head.bias").unwrap().data();
        for o in 0..3 {
            let mut acc = hb[o];
            for c in 0..2 {
                let act = cb[c].max(0.0);
                for p in 0..64 {
                    acc += act * hw.data()[(c * 64 + p) * 3 + o];
                }
            }
            assert!((out.data()[o] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = spec(&[(4, true)]);
        s.extra_blocks = 2;
        assert!(matches!(Model::build(&s, 0), Err(Error::Config(_))));
        let mut s = spec(&[(4, false)]);
        s.blocks[0].stride = 3; // (8 - 1) % 3 != 0
        assert!(Model::build(&s, 0).is_err());
        let s = spec(&[(4, true), (4, true), (4, true), (4, true)]);
        assert!(Model::build(&s, 0).is_err());
    }

    #[test]
    fn attach_detach_round_trip() {
        let base_spec = spec(&[(4, true), (6, false)]);
        let base = Model::build(&base_spec, 3).unwrap();
        let big = base.attach_extra(2, 77).unwrap();
        assert_eq!(big.spec().extra_blocks, 2);
        assert!(big.param_count() > base.attach_extra(1, 77).unwrap().param_count());
        assert!(base.attach_extra(1, 77).unwrap().param_count() > base.param_count());
        for (name, t) in base.params().iter().filter(|(n, _)| !n.starts_with("head.")) {
            assert_eq!(big.params().get(name).unwrap(), t);
        }
        assert_ne!(big.logits(&probe(2)).unwrap().data(), base.logits(&probe(2)).unwrap().data());

        let back = big.detach_extra(&base_spec, 5).unwrap();
        assert_eq!(back.spec(), &base_spec);
        for (name, t) in base.params().iter().filter(|(n, _)| !n.starts_with("head.")) {
            let b = back.params().get(name).unwrap();
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(b), bits(t));
        }
        assert!(matches!(base.attach_extra(0, 1), Err(Error::Contract(_))));
    }

    #[test]
    fn detach_without_attach_is_transfer_error() {
        let s = spec(&[(4, true)]);
        let m = Model::build(&s, 1).unwrap();
        assert!(matches!(m.detach_extra(&s, 1), Err(Error::Transfer { .. })));
        let other = spec(&[(5, true)]);
        let big = m.attach_extra(1, 2).unwrap();
        match big.detach_extra(&other, 1) {
            Err(Error::Transfer { missing, .. }) => assert_eq!(missing, ["conv0.weight", "conv0.bias"]),
            r => panic!("unexpected {r:?}"),
        }
    }

    #[test]
    fn transfer_reports_copies_and_skips() {
        let s = spec(&[(4, true)]);
        let a = Model::build(&s, 1).unwrap();
        let mut b = Model::build(&s, 2).unwrap();
        let r = transfer_weights(&a, &mut b);
        assert_eq!(r.copied_fraction(b.params().len()), 1.0);
        assert!(r.skipped.is_empty());
        assert_eq!(a.checksum(), b.checksum());
        let once = b.clone();
        transfer_weights(&a, &mut b);
        assert_eq!(once, b);

        let mut lin_spec = spec(&[]);
        lin_spec.num_classes = 5;
        let mut lin = Model::build(&lin_spec, 3).unwrap();
        let before = lin.checksum();
        let r = transfer_weights(&a, &mut lin);
        assert!(r.copied.is_empty());
        assert!(!r.skipped.is_empty());
        assert_eq!(before, lin.checksum());
    }
}
