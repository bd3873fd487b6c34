use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Image;
use crate::error::{config_err, Error, Result};

pub const MAX_MAGNITUDE: u8 = 30;

const MAX_ROTATE_DEG: f64 = 30.0;
const MAX_SHEAR: f64 = 0.3;
const MAX_TRANSLATE_FRAC: f64 = 0.45;
const MAX_ENHANCE: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AugOp {
    Identity,
    AutoContrast,
    Equalize,
    Rotate,
    Solarize,
    Color,
    Posterize,
    Contrast,
    Brightness,
    Sharpness,
    ShearX,
    ShearY,
    TranslateX,
    TranslateY,
}

impl AugOp {
    pub const ALL: [AugOp; 14] = [
        AugOp::Identity,
        AugOp::AutoContrast,
        AugOp::Equalize,
        AugOp::Rotate,
        AugOp::Solarize,
        AugOp::Color,
        AugOp::Posterize,
        AugOp::Contrast,
        AugOp::Brightness,
        AugOp::Sharpness,
        AugOp::ShearX,
        AugOp::ShearY,
        AugOp::TranslateX,
        AugOp::TranslateY,
    ];

    pub fn index(self) -> usize {
        AugOp::ALL.iter().position(|&o| o == self).expect("listed")
    }

    pub fn is_geometric(self) -> bool {
        matches!(
            self,
            AugOp::Rotate | AugOp::ShearX | AugOp::ShearY | AugOp::TranslateX | AugOp::TranslateY
        )
    }
}

impl fmt::Display for AugOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for AugOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AugOp::ALL
            .into_iter()
            .find(|o| o.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| config_err!("unknown augmentation op {s:?}"))
    }
}

fn signed<R: Rng + ?Sized>(rng: &mut R, v: f64) -> f64 {
    if rng.gen_bool(0.5) {
        -v
    } else {
        v
    }
}

/// Applies one op at `magnitude`; signed parameters take their sign from `rng`.
pub fn apply_op<R: Rng + ?Sized>(img: &Image, op: AugOp, magnitude: u8, rng: &mut R) -> Result<Image> {
    if magnitude > MAX_MAGNITUDE {
        return Err(config_err!("magnitude {magnitude} outside [0, {MAX_MAGNITUDE}]"));
    }
    let level = magnitude as f64 / MAX_MAGNITUDE as f64;
    let out = match op {
        AugOp::Identity => img.clone(),
        AugOp::AutoContrast => auto_contrast(img),
        AugOp::Equalize => equalize(img),
        AugOp::Rotate => rotate(img, signed(rng, level * MAX_ROTATE_DEG)),
        AugOp::Solarize => solarize(img, 255.0 - level * 255.0),
        AugOp::Posterize => posterize(img, (8 - (level * 4.0).round() as u32).max(4)),
        AugOp::Color => color(img, 1.0 + signed(rng, level * MAX_ENHANCE)),
        AugOp::Contrast => contrast(img, 1.0 + signed(rng, level * MAX_ENHANCE)),
        AugOp::Brightness => brightness(img, 1.0 + signed(rng, level * MAX_ENHANCE)),
        AugOp::Sharpness => sharpness(img, 1.0 + signed(rng, level * MAX_ENHANCE)),
        AugOp::ShearX => shear_x(img, signed(rng, level * MAX_SHEAR)),
        AugOp::ShearY => shear_y(img, signed(rng, level * MAX_SHEAR)),
        AugOp::TranslateX => translate_x(img, signed(rng, level * MAX_TRANSLATE_FRAC * img.width() as f64)),
        AugOp::TranslateY => translate_y(img, signed(rng, level * MAX_TRANSLATE_FRAC * img.height() as f64)),
    };
    Ok(out)
}

/// Inverse-maps every output pixel through `src_of(x, y)`, nearest neighbour,
/// clamping to the border.
fn resample(img: &Image, src_of: impl Fn(f64, f64) -> (f64, f64)) -> Image {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let mut out = Vec::with_capacity(img.pixels().len());
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = src_of(x as f64, y as f64);
            let sx = (sx.round().max(0.0) as usize).min(w - 1);
            let sy = (sy.round().max(0.0) as usize).min(h - 1);
            for ch in 0..c {
                out.push(img.get(sx, sy, ch));
            }
        }
    }
    img.with_pixels(out)
}

fn center(img: &Image) -> (f64, f64) {
    ((img.width() as f64 - 1.0) / 2.0, (img.height() as f64 - 1.0) / 2.0)
}

/// Rotation about the image centre by `degrees` (counter-clockwise on screen).
pub fn rotate(img: &Image, degrees: f64) -> Image {
    if degrees == 0.0 {
        return img.clone();
    }
    let (cx, cy) = center(img);
    let (sin, cos) = degrees.to_radians().sin_cos();
    resample(img, |x, y| {
        let (dx, dy) = (x - cx, y - cy);
        (cos * dx - sin * dy + cx, sin * dx + cos * dy + cy)
    })
}

pub fn shear_x(img: &Image, factor: f64) -> Image {
    if factor == 0.0 {
        return img.clone();
    }
    let (_, cy) = center(img);
    resample(img, |x, y| (x + factor * (y - cy), y))
}

pub fn shear_y(img: &Image, factor: f64) -> Image {
    if factor == 0.0 {
        return img.clone();
    }
    let (cx, _) = center(img);
    resample(img, |x, y| (x, y + factor * (x - cx)))
}

pub fn translate_x(img: &Image, pixels: f64) -> Image {
    if pixels == 0.0 {
        return img.clone();
    }
    resample(img, |x, y| (x - pixels, y))
}

pub fn translate_y(img: &Image, pixels: f64) -> Image {
    if pixels == 0.0 {
        return img.clone();
    }
    resample(img, |x, y| (x, y - pixels))
}

fn map_channels(img: &Image, mut lut_for: impl FnMut(&[u32; 256]) -> Option<[u8; 256]>) -> Image {
    let c = img.channels();
    let mut out = img.pixels().to_vec();
    for ch in 0..c {
        let mut hist = [0u32; 256];
        for px in img.pixels().chunks(c) {
            hist[px[ch] as usize] += 1;
        }
        if let Some(lut) = lut_for(&hist) {
            for px in out.chunks_mut(c) {
                px[ch] = lut[px[ch] as usize];
            }
        }
    }
    img.with_pixels(out)
}

fn auto_contrast(img: &Image) -> Image {
    map_channels(img, |hist| {
        let lo = hist.iter().position(|&n| n > 0)?;
        let hi = hist.iter().rposition(|&n| n > 0)?;
        if hi <= lo {
            return None;
        }
        let mut lut = [0u8; 256];
        for (i, v) in lut.iter_mut().enumerate() {
            *v = ((i as f64 - lo as f64) * 255.0 / (hi - lo) as f64).trunc().clamp(0.0, 255.0) as u8;
        }
        Some(lut)
    })
}

fn equalize(img: &Image) -> Image {
    map_channels(img, |hist| {
        let last = hist.iter().rposition(|&n| n > 0)?;
        let total: u32 = hist.iter().sum();
        let step = (total - hist[last]) / 255;
        if step == 0 {
            return None;
        }
        let mut lut = [0u8; 256];
        let mut n = step / 2;
        for (i, v) in lut.iter_mut().enumerate() {
            *v = (n / step).min(255) as u8;
            n += hist[i];
        }
        Some(lut)
    })
}

fn solarize(img: &Image, threshold: f64) -> Image {
    let out = img
        .pixels()
        .iter()
        .map(|&p| if (p as f64) < threshold { p } else { 255 - p })
        .collect();
    img.with_pixels(out)
}

fn posterize(img: &Image, bits: u32) -> Image {
    let shift = 8 - bits;
    let out = img.pixels().iter().map(|&p| (p >> shift) << shift).collect();
    img.with_pixels(out)
}

/// `degenerate + factor·(img − degenerate)`, rounded and clamped.
fn blend(img: &Image, degenerate: &[f64], factor: f64) -> Image {
    let out = img
        .pixels()
        .iter()
        .zip(degenerate)
        .map(|(&p, &d)| (d + factor * (p as f64 - d)).round().clamp(0.0, 255.0) as u8)
        .collect();
    img.with_pixels(out)
}

fn luma(px: &[u8]) -> f64 {
    match px {
        [r, g, b] => (299.0 * *r as f64 + 587.0 * *g as f64 + 114.0 * *b as f64) / 1000.0,
        [v] => *v as f64,
        _ => unreachable!("1 or 3 channels"),
    }
}

fn color(img: &Image, factor: f64) -> Image {
    let c = img.channels();
    let degenerate: Vec<f64> = img
        .pixels()
        .chunks(c)
        .flat_map(|px| std::iter::repeat(luma(px).round()).take(c))
        .collect();
    if c == 1 {
        return img.clone();
    }
    blend(img, &degenerate, factor)
}

fn contrast(img: &Image, factor: f64) -> Image {
    let c = img.channels();
    let n = (img.width() * img.height()) as f64;
    let mean = (img.pixels().chunks(c).map(|px| luma(px).round()).sum::<f64>() / n).round();
    let degenerate = vec![mean; img.pixels().len()];
    blend(img, &degenerate, factor)
}

fn brightness(img: &Image, factor: f64) -> Image {
    let degenerate = vec![0.0; img.pixels().len()];
    blend(img, &degenerate, factor)
}

/// Blend towards a 3×3 smoothing of the interior (centre weight 5, total 13);
/// border pixels are their own degenerate.
fn sharpness(img: &Image, factor: f64) -> Image {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let mut degenerate: Vec<f64> = img.pixels().iter().map(|&p| p as f64).collect();
    if w >= 3 && h >= 3 {
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for dy in 0..3 {
                        for dx in 0..3 {
                            let weight = if dx == 1 && dy == 1 { 5.0 } else { 1.0 };
                            acc += weight * img.get(x + dx - 1, y + dy - 1, ch) as f64;
                        }
                    }
                    degenerate[(y * w + x) * c + ch] = (acc / 13.0).round();
                }
            }
        }
    }
    blend(img, &degenerate, factor)
}
