use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// An 8-bit RGB raster, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageU8 {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl ImageU8 {
    pub const CHANNELS: usize = 3;

    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Size(format!(
                "image extent {width}×{height} must be positive"
            )));
        }
        if pixels.len() != width * height * Self::CHANNELS {
            return Err(Error::Size(format!(
                "{width}×{height} RGB image needs {} bytes, got {}",
                width * height * Self::CHANNELS,
                pixels.len()
            )));
        }
        Ok(ImageU8 {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(width * height * 3)
            .collect();
        Self::new(width, height, pixels)
    }

    /// Builds an image by evaluating `f(x, y)` for every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Largest centered square.
    pub fn center_crop(&self) -> ImageU8 {
        let side = self.width.min(self.height);
        let (x0, y0) = ((self.width - side) / 2, (self.height - side) / 2);
        Self::from_fn(side, side, |x, y| self.pixel(x0 + x, y0 + y)).expect("crop is nonempty")
    }

    /// Area-weighted box filter resampling to `width`×`height`.
    pub fn resize(&self, width: usize, height: usize) -> Result<ImageU8> {
        if width == 0 || height == 0 {
            return Err(Error::Size(format!(
                "resize target {width}×{height} must be positive"
            )));
        }
        let xs = box_weights(self.width, width);
        let ys = box_weights(self.height, height);
        let mut pixels = Vec::with_capacity(width * height * 3);
        for wy in &ys {
            for wx in &xs {
                let mut acc = [0.0f64; 3];
                for &(sy, fy) in wy {
                    for &(sx, fx) in wx {
                        let p = self.pixel(sx, sy);
                        for c in 0..3 {
                            acc[c] += fx * fy * p[c] as f64;
                        }
                    }
                }
                for v in acc {
                    pixels.push(v.round_ties_even().clamp(0.0, 255.0) as u8);
                }
            }
        }
        Self::new(width, height, pixels)
    }
}

// For each output cell, the source cells it overlaps and their normalized weights.
fn box_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let (lo, hi) = (i as f64 * scale, (i + 1) as f64 * scale);
            let mut cells = Vec::new();
            let mut s = lo.floor() as usize;
            while (s as f64) < hi && s < src {
                let overlap = (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0);
                if overlap > 0.0 {
                    cells.push((s, overlap / scale));
                }
                s += 1;
            }
            cells
        })
        .collect()
}

/// Reads a PNG. Grayscale and alpha inputs are converted to RGB.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageU8> {
    let path = path.as_ref();
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    if reader.format() != Some(image::ImageFormat::Png) {
        return Err(Error::Image {
            path: path.to_path_buf(),
            message: "unsupported format, expected PNG".into(),
        });
    }
    let decoded = reader.decode().map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = decoded.to_rgb8();
    let (w, h) = rgb.dimensions();
    ImageU8::new(w as usize, h as usize, rgb.into_raw())
}

/// Reads a PNG, center-crops it to a square and resizes it to `size`×`size`.
pub fn load_image_resized(path: impl AsRef<Path>, size: usize) -> Result<ImageU8> {
    let img = load_image(path)?;
    if img.width() == size && img.height() == size {
        return Ok(img);
    }
    img.center_crop().resize(size, size)
}

pub fn save_image(image: &ImageU8, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    image::save_buffer_with_format(
        path,
        image.pixels(),
        image.width() as u32,
        image.height() as u32,
        image::ExtendedColorType::Rgb8,
        image::ImageFormat::Png,
    )
    .map_err(|e| match e {
        image::ImageError::IoError(source) => Error::io(path, source),
        other => Error::Image {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })
}

/// `v ↦ v/127.5 − 1`, laid out as a 3×H×W tensor.
pub fn to_model_range<T: Real>(image: &ImageU8) -> Tensor<T> {
    let (w, h) = (image.width(), image.height());
    let mut data = vec![T::zero(); 3 * w * h];
    for (i, px) in image.pixels().chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * w * h + i] = T::from_f64(px[c] as f64 / 127.5 - 1.0);
        }
    }
    Tensor::from_vec(&[3, h, w], data).expect("length matches")
}

/// Inverse of [`to_model_range`]: clamps to [−1, 1], then rounds half to even.
pub fn from_model_range<T: Real>(tensor: &Tensor<T>) -> Result<ImageU8> {
    let &[c, h, w] = tensor.shape() else {
        return Err(Error::Rank(format!(
            "expected a 3×H×W tensor, got {:?}",
            tensor.shape()
        )));
    };
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    let data = tensor.data();
    let mut pixels = vec![0u8; 3 * h * w];
    for i in 0..h * w {
        for ch in 0..3 {
            let v = data[ch * h * w + i].as_f64();
            if v.is_nan() {
                return Err(Error::NonFinite("image tensor".into()));
            }
            pixels[i * 3 + ch] = ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round_ties_even() as u8;
        }
    }
    ImageU8::new(w, h, pixels)
}
