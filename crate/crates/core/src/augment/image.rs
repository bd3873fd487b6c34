use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

/// 8-bit image, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(dim_err!("image extents must be positive, got {height}x{width}"));
        }
        if channels != 1 && channels != 3 {
            return Err(dim_err!("images have 1 or 3 channels, got {channels}"));
        }
        if pixels.len() != height * width * channels {
            return Err(dim_err!(
                "{height}x{width}x{channels} image needs {} bytes, got {}",
                height * width * channels,
                pixels.len()
            ));
        }
        Ok(Image { height, width, channels, pixels })
    }

    /// Panics when `channels` is not 1 or 3.
    pub fn from_fn(height: usize, width: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> u8) -> Self {
        let mut pixels = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    pixels.push(f(x, y, c));
                }
            }
        }
        Image::new(height, width, channels, pixels).expect("valid extents")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    pub(crate) fn with_pixels(&self, pixels: Vec<u8>) -> Image {
        debug_assert_eq!(pixels.len(), self.pixels.len());
        Image { pixels, ..*self }
    }

    /// Writes the image as planar `[c, h, w]` floats scaled to `[-0.5, 0.5]`.
    pub fn write_planar(&self, out: &mut [f64]) {
        let plane = self.height * self.width;
        debug_assert_eq!(out.len(), plane * self.channels);
        for (i, px) in self.pixels.chunks(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * plane + i] = v as f64 / 255.0 - 0.5;
            }
        }
    }

    /// Stacks same-shaped images into a `[batch, c, h, w]` tensor.
    pub fn batch_tensor<'a>(images: impl ExactSizeIterator<Item = &'a Image>) -> Result<Tensor> {
        let n = images.len();
        let mut data = Vec::new();
        let mut dims = None;
        for img in images {
            let d = (img.channels, img.height, img.width);
            if *dims.get_or_insert(d) != d {
                return Err(dim_err!("mixed image shapes in one batch"));
            }
            let start = data.len();
            data.resize(start + img.pixels.len(), 0.0);
            img.write_planar(&mut data[start..]);
        }
        let (c, h, w) = dims.ok_or_else(|| dim_err!("empty batch"))?;
        Tensor::new(vec![n, c, h, w], data)
    }
}
