#![allow(dead_code)]

use dacomp::augment::Image;
use dacomp::harness::{synthetic, Split, SyntheticParams};
use dacomp::tensor::{Graph, Tensor, Var};
use dacomp::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Like `random_tensor` but with every magnitude at least 0.1, clear of kinks at zero.
pub fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.gen_range(0.1..1.0);
        if rng.gen_bool(0.5) { v } else { -v }
    })
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

/// Largest relative error between reverse-mode gradients of `f` and central
/// differences, over every element of every input.
pub fn fd_max_rel_err(inputs: &[Tensor], f: impl Fn(&mut Graph, &[Var]) -> Result<Var>) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(&t.clone().with_grad())).collect();
    let loss = f(&mut g, &vars).unwrap();
    let grads = g.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars.iter().map(|v| grads.get(*v).unwrap().to_vec()).collect();

    let eval = |xs: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let loss = f(&mut g, &vars).unwrap();
        g.value(loss).unwrap().item().unwrap()
    };
    let mut worst: f64 = 0.0;
    for (i, t) in inputs.iter().enumerate() {
        for j in 0..t.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[i][j], numeric));
        }
    }
    worst
}

/// Reduces `out` to a scalar through a fixed random projection.
pub fn project(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let shape = g.value(out)?.shape().to_vec();
    let r = random_tensor(&shape, &mut rng(seed ^ 0xABCD));
    let r = g.constant(r);
    let prod = g.mul(out, r)?;
    g.sum(prod)
}

pub fn random_image(h: usize, w: usize, c: usize, rng: &mut ChaCha8Rng) -> Image {
    Image::from_fn(h, w, c, |_, _, _| rng.gen())
}

pub fn tiny_split(seed: u64) -> Split {
    let d = synthetic(&SyntheticParams {
        samples: 96,
        classes: 3,
        height: 8,
        width: 8,
        channels: 1,
        strokes: 2,
        max_shift: 1,
        max_rotation: 10.0,
        scale_jitter: 0.1,
        noise: 0.05,
        seed,
    })
    .unwrap();
    Split::from_dataset(&d, 0.25, seed, None).unwrap()
}

pub fn workspace_root() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}
