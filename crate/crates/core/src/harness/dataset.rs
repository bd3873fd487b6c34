use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::augment::Image;
use crate::error::{config_err, Error, Result};

/// Overrides the directory that relative dataset paths resolve against.
pub const DATA_ROOT_ENV: &str = "DACOMP_DATA_ROOT";

const CIFAR_SIDE: usize = 32;
const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;
const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(images: Vec<Image>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(config_err!("{} images but {} labels", images.len(), labels.len()));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(config_err!("label {y} outside {num_classes} classes"));
        }
        if let Some(first) = images.first() {
            let shape = (first.height(), first.width(), first.channels());
            if images.iter().any(|i| (i.height(), i.width(), i.channels()) != shape) {
                return Err(config_err!("images differ in shape"));
            }
        }
        Ok(Dataset { images, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            images: idx.iter().map(|&i| self.images[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }
}

/// Training and validation partitions of one dataset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub val: Dataset,
}

impl Split {
    /// Seeded permutation, optional truncation to `limit`, then the first
    /// `val_fraction` of the permuted samples go to validation.
    pub fn from_dataset(data: &Dataset, val_fraction: f64, seed: u64, limit: Option<usize>) -> Result<Split> {
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(config_err!("val_fraction must lie in [0, 1), got {val_fraction}"));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        if let Some(n) = limit {
            order.truncate(n);
        }
        let n_val = (val_fraction * order.len() as f64).round() as usize;
        Ok(Split {
            val: data.subset(&order[..n_val]),
            train: data.subset(&order[n_val..]),
        })
    }
}

/// Procedurally generated classes: each class is a fixed arrangement of
/// strokes, and samples jitter position, contrast and pixel noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticParams {
    pub samples: usize,
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub strokes: usize,
    pub max_shift: usize,
    /// Per-sample rotation drawn from ±this many degrees.
    pub max_rotation: f64,
    /// Per-sample scale drawn from 1 ± this.
    pub scale_jitter: f64,
    pub noise: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "kebab-case")]
pub enum DataSource {
    /// Binary CIFAR-10 batches: 1 label byte then 3072 planar RGB bytes per record.
    Cifar10Bin { files: Vec<PathBuf> },
    /// IDX image and label files (MNIST layout).
    Idx { images: PathBuf, labels: PathBuf, num_classes: usize },
    Synthetic(SyntheticParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub val_fraction: f64,
    pub split_seed: u64,
    pub limit: Option<usize>,
}

fn resolve(path: &Path) -> PathBuf {
    match std::env::var_os(DATA_ROOT_ENV) {
        Some(root) if path.is_relative() => Path::new(&root).join(path),
        _ => path.to_path_buf(),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    let path = resolve(path);
    std::fs::read(&path).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(cfg: &DataConfig) -> Result<Split> {
    let data = match &cfg.source {
        DataSource::Cifar10Bin { files } => {
            if files.is_empty() {
                return Err(config_err!("cifar10-bin source lists no files"));
            }
            let mut all = Dataset { num_classes: 10, ..Dataset::default() };
            for f in files {
                let part = parse_cifar10_bin(&read(f)?)?;
                all.images.extend(part.images);
                all.labels.extend(part.labels);
            }
            all
        }
        DataSource::Idx { images, labels, num_classes } => {
            let imgs = parse_idx_images(&read(images)?)?;
            let labs = parse_idx_labels(&read(labels)?)?;
            Dataset::new(imgs, labs, *num_classes)?
        }
        DataSource::Synthetic(p) => synthetic(p)?,
    };
    Split::from_dataset(&data, cfg.val_fraction, cfg.split_seed, cfg.limit)
}

pub fn parse_cifar10_bin(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() % CIFAR_RECORD != 0 {
        let whole = bytes.len() / CIFAR_RECORD * CIFAR_RECORD;
        return Err(Error::Format {
            offset: whole as u64,
            message: format!("truncated record: {} trailing bytes", bytes.len() - whole),
        });
    }
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let mut images = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    let mut labels = Vec::with_capacity(images.capacity());
    for (r, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(Error::Format {
                offset: (r * CIFAR_RECORD) as u64,
                message: format!("label {} outside 0..10", rec[0]),
            });
        }
        labels.push(rec[0] as usize);
        let body = &rec[1..];
        let mut px = Vec::with_capacity(3 * plane);
        for i in 0..plane {
            px.extend([body[i], body[plane + i], body[2 * plane + i]]);
        }
        images.push(Image::new(CIFAR_SIDE, CIFAR_SIDE, 3, px)?);
    }
    Ok(Dataset { images, labels, num_classes: 10 })
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or(Error::Format { offset: at as u64, message: "unexpected end of header".into() })
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<Image>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format { offset: 0, message: format!("bad image magic {magic:#010x}") });
    }
    let n = be_u32(bytes, 4)? as usize;
    let h = be_u32(bytes, 8)? as usize;
    let w = be_u32(bytes, 12)? as usize;
    let body = &bytes[16..];
    if body.len() != n * h * w {
        return Err(Error::Format {
            offset: 16 + body.len().min(n * h * w) as u64,
            message: format!("expected {} pixel bytes, found {}", n * h * w, body.len()),
        });
    }
    body.chunks_exact((h * w).max(1))
        .take(n)
        .map(|c| Image::new(h, w, 1, c.to_vec()))
        .collect()
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format { offset: 0, message: format!("bad label magic {magic:#010x}") });
    }
    let n = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::Format {
            offset: 8 + body.len().min(n) as u64,
            message: format!("expected {n} labels, found {}", body.len()),
        });
    }
    Ok(body.iter().map(|&b| b as usize).collect())
}

struct Stroke {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    width: f64,
    colour: [f64; 3],
}

fn distance_to_segment(px: f64, py: f64, s: &Stroke) -> f64 {
    let (dx, dy) = (s.x1 - s.x0, s.y1 - s.y0);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((px - s.x0) * dx + (py - s.y0) * dy) / len2).clamp(0.0, 1.0) };
    ((px - s.x0 - t * dx).powi(2) + (py - s.y0 - t * dy).powi(2)).sqrt()
}

pub fn synthetic(p: &SyntheticParams) -> Result<Dataset> {
    if p.classes == 0 || p.height == 0 || p.width == 0 || p.strokes == 0 {
        return Err(config_err!("synthetic classes, extents and strokes must be positive"));
    }
    if p.channels != 1 && p.channels != 3 {
        return Err(config_err!("synthetic channels must be 1 or 3, got {}", p.channels));
    }
    if [p.noise, p.max_rotation, p.scale_jitter].iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(config_err!("synthetic noise, rotation and scale jitter must be finite and non-negative"));
    }
    if p.scale_jitter >= 1.0 {
        return Err(config_err!("synthetic scale_jitter must be below 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let (h, w) = (p.height as f64, p.width as f64);
    let classes: Vec<Vec<Stroke>> = (0..p.classes)
        .map(|_| {
            (0..p.strokes)
                .map(|_| Stroke {
                    x0: rng.gen_range(0.15..0.85) * w,
                    y0: rng.gen_range(0.15..0.85) * h,
                    x1: rng.gen_range(0.15..0.85) * w,
                    y1: rng.gen_range(0.15..0.85) * h,
                    width: rng.gen_range(0.6..1.4),
                    colour: [rng.gen_range(0.5..1.0), rng.gen_range(0.5..1.0), rng.gen_range(0.5..1.0)],
                })
                .collect()
        })
        .collect();
    let noise = Normal::new(0.0, p.noise).map_err(|e| config_err!("synthetic noise: {e}"))?;
    let shift = p.max_shift as i64;
    let mut images = Vec::with_capacity(p.samples);
    let mut labels = Vec::with_capacity(p.samples);
    for i in 0..p.samples {
        let y = i % p.classes;
        let (sx, sy) = (rng.gen_range(-shift..=shift) as f64, rng.gen_range(-shift..=shift) as f64);
        let angle = rng.gen_range(-1.0..=1.0) * p.max_rotation.to_radians();
        let scale = 1.0 + rng.gen_range(-1.0..=1.0) * p.scale_jitter;
        let (sin, cos) = angle.sin_cos();
        let (cx, cy) = (w / 2.0, h / 2.0);
        let gain = rng.gen_range(0.6..1.0);
        let floor = rng.gen_range(0.0..0.25);
        let strokes = &classes[y];
        let mut px = Vec::with_capacity(p.height * p.width * p.channels);
        for r in 0..p.height {
            for c in 0..p.width {
                let (ux, uy) = ((c as f64 + 0.5 - sx - cx) / scale, (r as f64 + 0.5 - sy - cy) / scale);
                let (fx, fy) = (cos * ux + sin * uy + cx, -sin * ux + cos * uy + cy);
                let mut acc = [0.0f64; 3];
                for s in strokes {
                    let v = (1.0 - distance_to_segment(fx, fy, s) / s.width).max(0.0);
                    for (a, col) in acc.iter_mut().zip(s.colour) {
                        *a = a.max(v * col);
                    }
                }
                for a in acc.iter().take(p.channels) {
                    let v = floor + gain * a + noise.sample(&mut rng);
                    px.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
        }
        images.push(Image::new(p.height, p.width, p.channels, px)?);
        labels.push(y);
    }
    Dataset::new(images, labels, p.classes)
}
