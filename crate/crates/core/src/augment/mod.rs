//! RandAugment: two ops drawn with replacement from 14 atomic transforms, all
//! driven by one global integer magnitude in `[0, 30]`.
//!
//! Magnitude maps linearly to each op's physical range through
//! `level = M / 30`:
//!
//! | op | parameter at level `l` |
//! |----|------------------------|
//! | Rotate | ±30°·l |
//! | ShearX/Y | ±0.3·l |
//! | TranslateX/Y | ±0.45·l·extent |
//! | Solarize | threshold 255 − 255·l |
//! | Posterize | 8 − round(4·l) bits, at least 4 |
//! | Color/Contrast/Brightness/Sharpness | factor 1 ± 0.9·l |
//!
//! Signs are drawn from the caller's rng. Geometric ops resample with nearest
//! neighbour and replicate edge pixels.

mod image;
mod ops;

pub use image::Image;
pub use ops::{
    apply_op, rotate, shear_x, shear_y, translate_x, translate_y, AugOp, MAX_MAGNITUDE,
};

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

/// Number of ops composed per image.
pub const NUM_OPS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugPolicy {
    magnitude: u8,
}

impl AugPolicy {
    pub fn new(magnitude: u8) -> Result<Self> {
        if magnitude > MAX_MAGNITUDE {
            return Err(config_err!("magnitude {magnitude} outside [0, {MAX_MAGNITUDE}]"));
        }
        Ok(AugPolicy { magnitude })
    }

    pub fn magnitude(&self) -> u8 {
        self.magnitude
    }

    pub fn num_ops(&self) -> usize {
        NUM_OPS
    }
}

/// `o_i(o_j(img; M); M)` with `o_j` then `o_i` drawn uniformly with replacement.
pub fn randaugment<R: Rng + ?Sized>(img: &Image, policy: AugPolicy, rng: &mut R) -> Image {
    randaugment_traced(img, policy, rng).0
}

/// [`randaugment`] that also reports the ops in application order.
pub fn randaugment_traced<R: Rng + ?Sized>(img: &Image, policy: AugPolicy, rng: &mut R) -> (Image, [AugOp; 2]) {
    let first = AugOp::ALL[rng.gen_range(0..AugOp::ALL.len())];
    let second = AugOp::ALL[rng.gen_range(0..AugOp::ALL.len())];
    let m = policy.magnitude();
    let mid = apply_op(img, first, m, rng).expect("policy magnitude validated");
    let out = apply_op(&mid, second, m, rng).expect("policy magnitude validated");
    (out, [first, second])
}

/// Draws `M` uniformly from `[0, 30]` and applies [`randaugment`] at `M`.
pub fn random_magnitude_augment<R: Rng + ?Sized>(img: &Image, rng: &mut R) -> (Image, u8) {
    let m = rng.gen_range(0..=MAX_MAGNITUDE);
    let policy = AugPolicy::new(m).expect("drawn inside range");
    (randaugment(img, policy, rng), m)
}

/// Independent per-sample random stream: keyed by `(seed, epoch)`, stream id
/// `index`. Results do not depend on visiting order or thread count.
pub fn sample_rng(seed: u64, epoch: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}

/// One row of the optional augmentation audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugTraceRow {
    pub sample_index: u64,
    pub op1: AugOp,
    pub op2: AugOp,
    pub magnitude: u8,
}

pub fn write_aug_trace(path: &Path, rows: &[AugTraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format {
            offset: 0,
            message: format!("{}: {other:?}", path.display()),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img() -> Image {
        Image::from_fn(6, 5, 3, |x, y, c| ((x * 37 + y * 11 + c * 71) % 256) as u8)
    }

    #[test]
    fn policy_bounds() {
        assert!(AugPolicy::new(30).is_ok());
        assert!(matches!(AugPolicy::new(31), Err(Error::Config(_))));
        assert_eq!(AugPolicy::new(3).unwrap().num_ops(), 2);
    }

    #[test]
    fn seeded_runs_repeat() {
        let p = AugPolicy::new(17).unwrap();
        let a = randaugment(&img(), p, &mut sample_rng(5, 0, 3));
        let b = randaugment(&img(), p, &mut sample_rng(5, 0, 3));
        assert_eq!(a, b);
        let (x, m) = random_magnitude_augment(&img(), &mut sample_rng(1, 2, 3));
        let (y, n) = random_magnitude_augment(&img(), &mut sample_rng(1, 2, 3));
        assert_eq!((x, m), (y, n));
        assert!(m <= MAX_MAGNITUDE);
    }

    #[test]
    fn identity_pair_returns_input() {
        // find a stream whose two op draws are both Identity
        let p = AugPolicy::new(30).unwrap();
        let idx = (0..100_000u64)
            .find(|&i| {
                let mut r = sample_rng(0, 0, i);
                r.gen_range(0..14usize) == 0 && r.gen_range(0..14usize) == 0
            })
            .expect("some stream draws Identity twice");
        let (out, ops) = randaugment_traced(&img(), p, &mut sample_rng(0, 0, idx));
        assert_eq!(ops, [AugOp::Identity, AugOp::Identity]);
        assert_eq!(out, img());
    }

    #[test]
    fn trace_csv_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let rows = vec![AugTraceRow { sample_index: 4, op1: AugOp::Rotate, op2: AugOp::Identity, magnitude: 9 }];
        write_aug_trace(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "sample_index,op1,op2,magnitude\n4,Rotate,Identity,9\n");
    }
}
