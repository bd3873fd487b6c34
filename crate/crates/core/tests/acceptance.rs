//! End-to-end acceptance checks. Prints one line per criterion and exits
//! non-zero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use dacomp::augment::{
    apply_op, randaugment, randaugment_traced, sample_rng, AugOp, AugPolicy, Image, MAX_MAGNITUDE,
};
use dacomp::harness::{
    grid_optima, load_dataset, mean_final_accuracy, run_config, run_scheme, train_stage, Config, SchemeKind,
    SchemeOutcome, SchemeSpec, Split, StageContext,
};
use dacomp::losses::{combined_loss, cross_entropy, kd_kl};
use dacomp::models::{transfer_weights, BlockSpec, Model, ModelSpec};
use dacomp::pruning::{l1_prune, pruning_ratio, PruneState};
use dacomp::selection::{select, SelectionConfig};
use dacomp::tensor::{Graph, ParamStore, Sgd, Tensor};
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond { Ok(()) } else { Err(msg()) }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    ensure(start.elapsed() <= limit, || format!("took {:?}, budget {limit:?}", start.elapsed()))
}

// ---------------------------------------------------------------- 1

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut checks = 0;
    for seed in 0..5u64 {
        let r = &mut rng(seed);
        let mut check = |name: &str, inputs: Vec<Tensor>, f: &dyn Fn(&mut Graph, &[dacomp::tensor::Var]) -> dacomp::Result<dacomp::tensor::Var>| {
            let e = fd_max_rel_err(&inputs, f);
            checks += 1;
            worst = worst.max(e);
            ensure(e < 1e-4, || format!("{name} seed {seed}: relative error {e:e}"))
        };
        check("dense", vec![random_tensor(&[3, 4], r), random_tensor(&[4, 5], r), random_tensor(&[5], r)], &|g, v| {
            let y = g.dense(v[0], v[1], v[2])?;
            project(g, y, seed)
        })?;
        check("conv2d s1 p1", vec![random_tensor(&[2, 2, 5, 5], r), random_tensor(&[3, 2, 3, 3], r)], &|g, v| {
            let y = g.conv2d(v[0], v[1], 1, 1)?;
            project(g, y, seed)
        })?;
        check("conv2d s2 p0", vec![random_tensor(&[1, 2, 7, 7], r), random_tensor(&[2, 2, 3, 3], r)], &|g, v| {
            let y = g.conv2d(v[0], v[1], 2, 0)?;
            project(g, y, seed)
        })?;
        check("channel_bias", vec![random_tensor(&[2, 3, 2, 2], r), random_tensor(&[3], r)], &|g, v| {
            let y = g.channel_bias(v[0], v[1])?;
            project(g, y, seed)
        })?;
        check("relu", vec![away_from_zero(&[2, 3, 4], r)], &|g, v| {
            let y = g.relu(v[0])?;
            project(g, y, seed)
        })?;
        check("maxpool2x2", vec![random_tensor(&[2, 2, 4, 6], r)], &|g, v| {
            let y = g.maxpool2x2(v[0])?;
            project(g, y, seed)
        })?;
        check("global_avg_pool", vec![random_tensor(&[2, 3, 3, 3], r)], &|g, v| {
            let y = g.global_avg_pool(v[0])?;
            project(g, y, seed)
        })?;
        check("reshape+flatten", vec![random_tensor(&[2, 3, 2, 2], r)], &|g, v| {
            let y = g.reshape(v[0], &[2, 2, 6])?;
            let y = g.flatten(y)?;
            project(g, y, seed)
        })?;
        check("log_softmax", vec![random_tensor(&[3, 5], r)], &|g, v| {
            let y = g.log_softmax(v[0])?;
            project(g, y, seed)
        })?;
        check("scale", vec![random_tensor(&[4], r)], &|g, v| {
            let y = g.scale(v[0], -2.5)?;
            project(g, y, seed)
        })?;
        check("add+mul", vec![random_tensor(&[2, 3], r), random_tensor(&[2, 3], r)], &|g, v| {
            let a = g.add(v[0], v[1])?;
            let y = g.mul(a, v[0])?;
            project(g, y, seed)
        })?;
        check("sum", vec![random_tensor(&[2, 2, 2], r)], &|g, v| {
            let y = g.mul(v[0], v[0])?;
            g.sum(y)
        })?;
        let labels: Vec<usize> = (0..4).map(|_| r.gen_range(0..5)).collect();
        check("nll_mean", vec![random_tensor(&[4, 5], r)], &|g, v| {
            let lp = g.log_softmax(v[0])?;
            g.nll_mean(lp, &labels)
        })?;
        let target = {
            let mut g = Graph::new();
            let t = g.constant(random_tensor(&[4, 5], r));
            let lp = g.log_softmax(t).unwrap();
            g.value(lp).unwrap().clone()
        };
        check("soft_target_kl", vec![random_tensor(&[4, 5], r)], &|g, v| {
            let lp = g.log_softmax(v[0])?;
            g.soft_target_kl(lp, &target)
        })?;
        let teacher = random_tensor(&[4, 5], r).reshape(&[4, 5]).unwrap();
        let tau = r.gen_range(1.0..6.0);
        let alpha = r.gen_range(0.0..1.0);
        check("cross_entropy", vec![random_tensor(&[4, 5], r)], &|g, v| cross_entropy(g, v[0], &labels))?;
        check("kd_kl", vec![random_tensor(&[4, 5], r)], &|g, v| kd_kl(g, &teacher, v[0], tau))?;
        check("combined_loss", vec![random_tensor(&[4, 5], r)], &|g, v| {
            let ce = cross_entropy(g, v[0], &labels)?;
            let kl = kd_kl(g, &teacher, v[0], tau)?;
            combined_loss(g, ce, kl, alpha)
        })?;

        // full network: combined loss against every parameter and the input
        let spec = ModelSpec {
            input_shape: [2, 6, 6],
            blocks: vec![
                BlockSpec { channels: 3, stride: 1, pool: true },
                BlockSpec { channels: 4, stride: 1, pool: false },
            ],
            extra_blocks: 0,
            num_classes: 3,
        };
        let model = Model::build(&spec, seed).unwrap();
        let names: Vec<String> = model.params().names().map(str::to_string).collect();
        let mut inputs: Vec<Tensor> = names.iter().map(|n| model.params().get(n).unwrap().clone()).collect();
        inputs.push(random_tensor(&[2, 2, 6, 6], r));
        let teacher = random_tensor(&[2, 3], r);
        let labels = vec![r.gen_range(0..3), r.gen_range(0..3)];
        let model_ref = &model;
        check("small cnn combined loss", inputs, &|g, v| {
            let bound = names.iter().cloned().zip(v.iter().copied()).collect();
            let logits = model_ref.forward(g, &bound, v[v.len() - 1])?;
            let ce = cross_entropy(g, logits, &labels)?;
            let kl = kd_kl(g, &teacher, logits, 2.0)?;
            combined_loss(g, ce, kl, 0.3)
        })?;
    }
    within(start, Duration::from_secs(60))?;
    Ok(format!("{checks} checks over 5 seeds, worst relative error {worst:.2e}, {:.1?}", start.elapsed()))
}

// ---------------------------------------------------------------- 2

/// Zero set chosen by sorting (prior-zeroed first, then |w|, then index).
fn prune_oracle(w: &[f64], prior: Option<&[bool]>, p: f64) -> Vec<bool> {
    let k = (p * w.len() as f64 + 1e-9).floor() as usize;
    let was_zeroed = |i: usize| prior.is_some_and(|m| !m[i]);
    let mut idx: Vec<usize> = (0..w.len()).collect();
    idx.sort_by(|&a, &b| {
        was_zeroed(b)
            .cmp(&was_zeroed(a))
            .then(w[a].abs().partial_cmp(&w[b].abs()).unwrap())
            .then(a.cmp(&b))
    });
    let mut keep = vec![true; w.len()];
    for &i in &idx[..k] {
        keep[i] = false;
    }
    keep
}

fn pruning_suite() -> Outcome {
    let start = Instant::now();
    let spec = ModelSpec {
        input_shape: [1, 8, 8],
        blocks: vec![
            BlockSpec { channels: 6, stride: 1, pool: true },
            BlockSpec { channels: 8, stride: 1, pool: true },
        ],
        extra_blocks: 0,
        num_classes: 5,
    };
    let ratios = [0.0, 0.25, 0.5, 0.75];
    let mut steps = 0;
    for seed in 0..3u64 {
        let base = Model::build(&spec, seed).unwrap();
        for &p in &ratios {
            let mut m = base.clone();
            let st = l1_prune(&mut m, p, None).map_err(|e| e.to_string())?;
            for (name, mask) in st.masks() {
                let size = mask.keep().len() as f64;
                ensure((mask.zeros() as f64 - p * size).abs() <= 1.0, || {
                    format!("{name} at p={p}: {} zeros of {size}", mask.zeros())
                })?;
                let w = base.params().get(name).unwrap().data();
                ensure(mask.keep() == prune_oracle(w, None, p).as_slice(), || format!("{name} at p={p}: wrong set"))?;
            }
        }

        // iterative: prune, train 100 steps under the mask, prune further
        let mut m = base.clone();
        let mut prior: Option<PruneState> = None;
        let mut opt = Sgd::new(0.05, 0.9).unwrap();
        let r = &mut rng(seed + 10);
        for &p in &ratios {
            let before = m.clone();
            let st = l1_prune(&mut m, p, prior.as_ref()).map_err(|e| e.to_string())?;
            for (name, mask) in st.masks() {
                let w = before.params().get(name).unwrap().data();
                let prior_keep = prior.as_ref().and_then(|s| s.mask(name));
                ensure(mask.keep() == prune_oracle(w, prior_keep, p).as_slice(), || {
                    format!("{name} stage p={p}: wrong set")
                })?;
            }
            if let Some(prev) = &prior {
                ensure(prev.is_subset_of(&st), || format!("mask shrank entering p={p}"))?;
            }
            m.params_mut().set_requires_grad(true);
            for _ in 0..100 {
                let x = random_tensor(&[4, 1, 8, 8], r);
                let labels: Vec<usize> = (0..4).map(|_| r.gen_range(0..5)).collect();
                let mut g = Graph::new();
                let bound = m.params().bind(&mut g);
                let xv = g.constant(x);
                let logits = m.forward(&mut g, &bound, xv).unwrap();
                let loss = cross_entropy(&mut g, logits, &labels).unwrap();
                let mut grads = g.backward(loss).unwrap();
                m.params_mut().absorb(&bound, &mut grads).unwrap();
                opt.step(m.params_mut(), Some(&st)).unwrap();
                steps += 1;
            }
            for (name, mask) in st.masks() {
                let w = m.params().get(name).unwrap().data();
                let bad = w.iter().zip(mask.keep()).filter(|(v, &k)| !k && **v != 0.0).count();
                ensure(bad == 0, || format!("{name}: {bad} masked weights moved after training at p={p}"))?;
                ensure((mask.zeros() as f64 - p * mask.keep().len() as f64).abs() <= 1.0, || {
                    format!("{name}: stage ratio off at p={p}")
                })?;
            }
            ensure((pruning_ratio(&st) - p).abs() < 0.01, || format!("overall ratio {} at p={p}", pruning_ratio(&st)))?;
            prior = Some(st);
        }
    }
    within(start, Duration::from_secs(60))?;
    Ok(format!("3 seeds x ratios {ratios:?}, {steps} masked steps, {:.1?}", start.elapsed()))
}

// ---------------------------------------------------------------- 3

fn augmentation_suite() -> Outcome {
    let start = Instant::now();
    let r = &mut rng(77);
    // determinism
    for i in 0..300u64 {
        let c = if i % 2 == 0 { 1 } else { 3 };
        let img = random_image(9, 7, c, r);
        let m = (i % 31) as u8;
        let pol = AugPolicy::new(m).unwrap();
        let a = randaugment(&img, pol, &mut sample_rng(i, 3, i * 7));
        let b = randaugment(&img, pol, &mut sample_rng(i, 3, i * 7));
        ensure(a == b, || format!("draw {i} not reproducible"))?;
    }
    // identity at magnitude 0
    let geometric: Vec<AugOp> = AugOp::ALL.into_iter().filter(|o| o.is_geometric()).collect();
    ensure(geometric.len() == 5, || "expected five geometric ops".into())?;
    for i in 0..200u64 {
        let img = random_image(6 + (i % 5) as usize, 5 + (i % 4) as usize, if i % 3 == 0 { 3 } else { 1 }, r);
        for &op in &geometric {
            let out = apply_op(&img, op, 0, &mut sample_rng(i, 0, 0)).unwrap();
            ensure(out == img, || format!("{op} at M=0 changed image {i}"))?;
        }
    }
    // op frequency: 50 000 samples x 2 ops
    let tiny = random_image(2, 2, 1, r);
    let mut counts = [0u64; 14];
    for i in 0..50_000u64 {
        let (_, ops) = randaugment_traced(&tiny, AugPolicy::new(10).unwrap(), &mut sample_rng(5, 0, i));
        for op in ops {
            counts[op.index()] += 1;
        }
    }
    let n = counts.iter().sum::<u64>() as f64;
    let p = 1.0 / 14.0;
    let (mean, sigma) = (n * p, (n * p * (1.0 - p)).sqrt());
    let worst_z = counts.iter().map(|&c| (c as f64 - mean).abs() / sigma).fold(0.0, f64::max);
    ensure(worst_z <= 3.0, || format!("op counts {counts:?} deviate {worst_z:.2} sigma"))?;
    // pixel range: every op at every magnitude keeps shape and maps into [-0.5, 0.5]
    for op in AugOp::ALL {
        for m in 0..=MAX_MAGNITUDE {
            for c in [1, 3] {
                let img = random_image(5, 6, c, r);
                let out = apply_op(&img, op, m, &mut sample_rng(m as u64, c as u64, op.index() as u64)).unwrap();
                ensure((out.height(), out.width(), out.channels()) == (5, 6, c), || format!("{op} changed shape"))?;
                let mut planar = vec![0.0; out.pixels().len()];
                out.write_planar(&mut planar);
                ensure(planar.iter().all(|v| (-0.5..=0.5).contains(v)), || format!("{op} M={m} out of range"))?;
            }
        }
    }
    ensure(apply_op(&tiny, AugOp::Rotate, 31, r).is_err(), || "magnitude 31 accepted".into())?;
    within(start, Duration::from_secs(120))?;
    Ok(format!("1e5 op draws, worst deviation {worst_z:.2} sigma, {:.1?}", start.elapsed()))
}

// ---------------------------------------------------------------- 4

fn log_softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    v.iter().map(|x| x - lse).collect()
}

/// One candidate at a time: teacher cross-entropy and tempered KL from scratch.
fn brute_force_scores(cands: &[Image], label: usize, t: &Model, s: &Model, cfg: &SelectionConfig) -> Vec<f64> {
    cands
        .iter()
        .map(|c| {
            let x = Image::batch_tensor(std::iter::once(c)).unwrap();
            let tl = t.logits(&x).unwrap().into_data();
            let sl = s.logits(&x).unwrap().into_data();
            let ce = -log_softmax(&tl)[label];
            let lt = log_softmax(&tl.iter().map(|v| v / cfg.tau).collect::<Vec<_>>());
            let ls = log_softmax(&sl.iter().map(|v| v / cfg.tau).collect::<Vec<_>>());
            let kl: f64 = lt.iter().zip(&ls).map(|(a, b)| a.exp() * (a - b)).sum();
            cfg.alpha * ce - cfg.beta * kl * cfg.tau * cfg.tau
        })
        .collect()
}

fn selection_oracle() -> Outcome {
    let start = Instant::now();
    let r = &mut rng(4242);
    let mut ties = 0;
    for inst in 0..100u64 {
        let c = if r.gen_bool(0.5) { 1 } else { 3 };
        let classes = r.gen_range(2..7);
        let mk = |ch: usize| ModelSpec {
            input_shape: [c, 6, 6],
            blocks: vec![BlockSpec { channels: ch, stride: 1, pool: true }],
            extra_blocks: 0,
            num_classes: classes,
        };
        let teacher = Model::build(&mk(r.gen_range(3..7)), inst).unwrap();
        let student = Model::build(&mk(r.gen_range(1..4)), inst + 1000).unwrap();
        let n = r.gen_range(1..=16);
        let mut cands: Vec<Image> = (0..n).map(|_| random_image(6, 6, c, r)).collect();
        let label = r.gen_range(0..classes);
        let cfg = SelectionConfig {
            n,
            alpha: if inst % 10 == 3 { 0.0 } else { r.gen_range(0.0..3.0) },
            beta: if inst % 10 == 7 { 0.0 } else { r.gen_range(0.1..3.0) },
            tau: r.gen_range(0.5..8.0),
        };
        // copy the best candidate in front of itself to force a tie
        if inst % 3 == 0 && n >= 2 {
            let sc = brute_force_scores(&cands, label, &teacher, &student, &cfg);
            let best = sc.iter().enumerate().fold(0, |b, (i, v)| if *v < sc[b] { i } else { b });
            let at = r.gen_range(0..=best);
            cands.insert(at, cands[best].clone());
            cands.pop();
        }
        let cfg = SelectionConfig { n: cands.len(), ..cfg };
        let oracle = brute_force_scores(&cands, label, &teacher, &student, &cfg);
        let min = oracle.iter().cloned().fold(f64::INFINITY, f64::min);
        let tol = 1e-9 * (1.0 + min.abs());
        let tied: Vec<usize> = (0..oracle.len()).filter(|&i| oracle[i] <= min + tol).collect();
        if tied.len() > 1 {
            ties += 1;
        }
        let got = select(&cands, label, &teacher, &student, &cfg).map_err(|e| e.to_string())?;
        ensure(got.index == tied[0], || format!("instance {inst}: select {} vs oracle {tied:?}", got.index))?;
        for (a, b) in got.scores.iter().zip(&oracle) {
            ensure((a - b).abs() <= 1e-9 * (1.0 + b.abs()), || format!("instance {inst}: score {a} vs {b}"))?;
        }
        for k in [1e-3, 0.5, 2.0, 37.0] {
            let scaled = SelectionConfig { alpha: cfg.alpha * k, beta: cfg.beta * k, ..cfg };
            let again = select(&cands, label, &teacher, &student, &scaled).map_err(|e| e.to_string())?;
            ensure(again.index == got.index, || format!("instance {inst}: rescale by {k} moved the choice"))?;
        }
    }
    ensure(ties >= 20, || format!("only {ties} tie instances"))?;
    within(start, Duration::from_secs(60))?;
    Ok(format!("100 instances ({ties} with ties), {:.1?}", start.elapsed()))
}

// ---------------------------------------------------------------- 5

fn bits(p: &ParamStore, name: &str) -> Vec<u64> {
    p.get(name).unwrap().data().iter().map(|v| v.to_bits()).collect()
}

fn handoff_integrity() -> Outcome {
    let start = Instant::now();
    let cfg = Config::load(&workspace_root().join("configs/smoke.toml")).map_err(|e| e.to_string())?;
    let data = load_dataset(&cfg.data).map_err(|e| e.to_string())?;
    let specs = cfg.scheme_specs().map_err(|e| e.to_string())?;
    let mut verified = 0;
    for spec in &specs {
        let out = run_scheme(spec, &data).map_err(|e| format!("{}: {e}", spec.kind))?;
        let expects_check = matches!(
            spec.kind,
            SchemeKind::PruneInherit | SchemeKind::PruneBaselineB | SchemeKind::ExtraInherit | SchemeKind::ExtraBaselineB
        );
        ensure(out.handoff.is_some() == expects_check, || format!("{}: handoff presence", spec.kind))?;
        if let Some(h) = &out.handoff {
            ensure(h.ok(), || format!("{}: {h:?}", spec.kind))?;
        }
        match spec.kind {
            SchemeKind::PruneInherit => verify_prune_handoff(spec, &data, &out)?,
            SchemeKind::ExtraInherit => verify_extra_handoff(spec, &data, &out)?,
            _ => continue,
        }
        verified += 1;
    }
    ensure(verified == 2, || "inheriting kinds missing from the smoke config".into())?;
    Ok(format!("{} scheme runs, both inheriting handoffs recomputed bit-exactly, {:.1?}", specs.len(), start.elapsed()))
}

fn verify_prune_handoff(spec: &SchemeSpec, data: &Split, out: &SchemeOutcome) -> Result<(), String> {
    let mut dense = Model::build(&spec.model, spec.model_seed).unwrap();
    train_stage(&mut dense, data, &spec.stages[0], &StageContext::default()).unwrap();
    let mut init = Model::build(&spec.model, spec.model_seed).unwrap();
    transfer_weights(&dense, &mut init);
    let state = l1_prune(&mut init, spec.prune_ratio, None).unwrap();
    for (name, t) in init.params().iter() {
        let src = dense.params().get(name).unwrap().data();
        for (i, (&a, &b)) in t.data().iter().zip(src).enumerate() {
            let kept = state.mask(name).is_none_or(|k| k[i]);
            let want = if kept { b } else { 0.0 };
            ensure(a.to_bits() == want.to_bits(), || format!("{name}[{i}] {a} vs {want}"))?;
        }
    }
    let h = out.handoff.as_ref().unwrap();
    ensure(h.actual == init.checksum(), || "scheme stage-2 init differs from recomputation".into())
}

fn verify_extra_handoff(spec: &SchemeSpec, data: &Split, out: &SchemeOutcome) -> Result<(), String> {
    let base = Model::build(&spec.model, spec.model_seed).unwrap();
    let mut big = base.attach_extra(spec.extra_blocks, spec.model_seed ^ 0x5EED_0E77).unwrap();
    train_stage(&mut big, data, &spec.stages[0], &StageContext::default()).unwrap();
    let small = big.detach_extra(&spec.model, spec.stages[1].head_seed).unwrap();
    let mut shared = 0;
    for name in small.params().names().filter(|n| !n.starts_with("head.")) {
        ensure(bits(small.params(), name) == bits(big.params(), name), || format!("{name} changed on detach"))?;
        shared += 1;
    }
    ensure(shared > 0, || "no shared parameters".into())?;
    let h = out.handoff.as_ref().unwrap();
    ensure(h.ok(), || "scheme handoff mismatch".into())
}

// ---------------------------------------------------------------- desk runs

struct DeskRun {
    outcomes: Vec<(String, Vec<SchemeOutcome>)>,
    cfg: Config,
    elapsed: Duration,
    _dir: tempfile::TempDir,
    dir: std::path::PathBuf,
}

fn desk_run() -> Result<DeskRun, String> {
    let cfg = Config::load(&workspace_root().join("configs/desk.toml")).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let outcomes = run_config(&cfg, dir.path()).map_err(|e| e.to_string())?;
    Ok(DeskRun { outcomes, cfg, elapsed: start.elapsed(), dir: dir.path().to_path_buf(), _dir: dir })
}

fn section<'a>(run: &'a DeskRun, name: &str) -> &'a [SchemeOutcome] {
    &run.outcomes.iter().find(|(n, _)| n == name).expect("section ran").1
}

// ---------------------------------------------------------------- 6

fn trend_reproduction(run: &DeskRun) -> Outcome {
    let specs = run.cfg.grid_specs().map_err(|e| e.to_string())?;
    let grid = section(run, "grid");
    let optima = grid_optima(&specs, grid);
    let mut lines = Vec::new();
    let mut monotone = 0;
    for spec in &specs {
        let per_ratio: Vec<u8> = spec
            .ratios
            .iter()
            .map(|p| optima[&(spec.model_seed, p.to_string())].0.expect("non-empty profile"))
            .collect();
        let ok = per_ratio.windows(2).all(|w| w[1] <= w[0]);
        monotone += usize::from(ok);
        lines.push(format!("seed {} M*={per_ratio:?}{}", spec.model_seed, if ok { "" } else { " (rises)" }));
    }
    let grid_time: f64 = grid
        .iter()
        .flat_map(|o| &o.records)
        .flat_map(|r| &r.rows)
        .map(|r| r.wall_time)
        .sum();
    let detail = format!("{}; {monotone}/3 non-increasing; {:.0}s training", lines.join(", "), grid_time);
    ensure(grid_time <= 45.0 * 60.0, || format!("{detail}: over budget"))?;
    ensure(specs.len() == 3 && monotone >= 2, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 7

fn scheme_ordering(run: &DeskRun) -> Outcome {
    let scheme = section(run, "scheme");
    let means = mean_final_accuracy(scheme);
    let get = |k: &str| means.iter().find(|(n, _, _)| n == k).cloned().expect("kind ran");
    let (inherit, b, a) = (get("prune_inherit"), get("prune_baseline_b"), get("prune_baseline_a"));
    let fmt = |(n, m, per): &(String, f64, Vec<(u64, f64)>)| {
        let s: Vec<String> = per.iter().map(|(s, v)| format!("s{s}={v:.3}")).collect();
        format!("{n} {m:.4} [{}]", s.join(" "))
    };
    let secs: f64 = scheme.iter().flat_map(|o| &o.records).flat_map(|r| &r.rows).map(|r| r.wall_time).sum();
    let detail = format!("{} >= {} >= {}; {secs:.0}s training", fmt(&inherit), fmt(&b), fmt(&a));
    ensure(secs <= 30.0 * 60.0, || format!("{detail}: over budget"))?;
    if !(inherit.1 >= b.1 && b.1 >= a.1) {
        println!("FINDING: desk-scale ordering does not hold: {detail}");
        return Err(detail);
    }
    Ok(detail)
}

// ---------------------------------------------------------------- 8

fn results_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| {
            let p = e.unwrap().path().join("results.csv");
            p.exists().then(|| (p.display().to_string(), std::fs::read(&p).unwrap()))
        })
        .collect();
    out.sort();
    out
}

fn determinism(desk: &DeskRun) -> Outcome {
    let mut configs: Vec<_> = std::fs::read_dir(workspace_root().join("configs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    configs.sort();
    let mut compared = 0;
    for path in &configs {
        let cfg = Config::load(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut held = None;
        let first = if cfg == desk.cfg {
            desk.dir.clone()
        } else {
            let d = tempfile::tempdir().unwrap();
            run_config(&cfg, d.path()).map_err(|e| e.to_string())?;
            held.insert(d).path().to_path_buf()
        };
        let second = tempfile::tempdir().unwrap();
        run_config(&cfg, second.path()).map_err(|e| e.to_string())?;
        let (a, b) = (results_files(&first), results_files(second.path()));
        drop(held);
        ensure(!a.is_empty() && a.len() == b.len(), || format!("{}: section count differs", path.display()))?;
        for ((pa, da), (_, db)) in a.iter().zip(&b) {
            ensure(da == db, || format!("{pa} differs between runs of {}", path.display()))?;
            compared += 1;
        }
    }
    Ok(format!("{} configs, {compared} results.csv files byte-identical", configs.len()))
}

// ----------------------------------------------------------------

fn main() {
    let mut failed = 0;
    let mut record = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match res {
            Ok(detail) => println!("[PRIMARY] {n}. {name}: PASS ({detail})"),
            Err(detail) => {
                failed += 1;
                println!("[PRIMARY] {n}. {name}: FAIL ({detail})");
            }
        }
    };
    record(1, "gradient suite", &mut gradient_suite);
    record(2, "pruning suite", &mut pruning_suite);
    record(3, "augmentation suite", &mut augmentation_suite);
    record(4, "selection oracle", &mut selection_oracle);
    record(5, "scheme handoff integrity", &mut handoff_integrity);
    let desk = desk_run();
    if let Ok(d) = &desk {
        println!("desk config ran in {:.1?}", d.elapsed);
    }
    let with_desk = |f: fn(&DeskRun) -> Outcome| {
        let desk = &desk;
        move || match desk {
            Ok(d) => f(d),
            Err(e) => Err(format!("desk run failed: {e}")),
        }
    };
    record(6, "desk-scale trend reproduction", &mut with_desk(trend_reproduction));
    record(7, "desk-scale scheme ordering", &mut with_desk(scheme_ordering));
    record(8, "determinism", &mut with_desk(determinism));
    println!("{} of 8 criteria passed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
