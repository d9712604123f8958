//! 8-bit grayscale images and their file IO.

use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};

use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("image buffer of {actual} bytes does not match {width}×{height}")]
    Size {
        width: usize,
        height: usize,
        actual: usize,
    },
    #[error("{path}: {source}")]
    Decode {
        path: String,
        source: image::ImageError,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if pixels.len() != width * height {
            return Err(ImageError::Size {
                width,
                height,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    /// Rounds and clamps real gray levels to 8 bits.
    pub fn from_levels(width: usize, height: usize, levels: &[f64]) -> Self {
        assert_eq!(levels.len(), width * height);
        let pixels = levels
            .iter()
            .map(|&g| g.round().clamp(0.0, 255.0) as u8)
            .collect();
        Self {
            width,
            height,
            pixels,
        }
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

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn levels(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| f64::from(p)).collect()
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| self.get(self.width - 1 - x, y))
    }

    /// `[3, H, W]` planes in [0, 1], the gray channel replicated.
    pub fn to_rgb_planes(&self) -> Vec<f32> {
        let plane: Vec<f32> = self.pixels.iter().map(|&p| f32::from(p) / 255.0).collect();
        let mut out = Vec::with_capacity(3 * plane.len());
        for _ in 0..3 {
            out.extend_from_slice(&plane);
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self, ImageError> {
        let img = image::open(path).map_err(|source| ImageError::Decode {
            path: path.display().to_string(),
            source,
        })?;
        let gray = img.into_luma8();
        let (w, h) = gray.dimensions();
        Self::new(w as usize, h as usize, gray.into_raw())
    }

    /// Writes a binary (P5) PGM.
    pub fn write_pgm(&self, path: &Path) -> Result<(), ImageError> {
        let io_err = |source| ImageError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = std::fs::File::create(path).map_err(io_err)?;
        let encoder = PnmEncoder::new(std::io::BufWriter::new(file))
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary));
        encoder
            .write_image(
                &self.pixels,
                self.width as u32,
                self.height as u32,
                ExtendedColorType::L8,
            )
            .map_err(|source| ImageError::Decode {
                path: path.display().to_string(),
                source,
            })
    }
}

/// Stacks images into an `N×3×H×W` network input.
pub fn batch_tensor(images: &[&GrayImage]) -> Tensor<f32> {
    let (w, h) = (images[0].width(), images[0].height());
    let mut data = Vec::with_capacity(images.len() * 3 * w * h);
    for img in images {
        assert_eq!((img.width(), img.height()), (w, h), "batch images differ in size");
        data.extend(img.to_rgb_planes());
    }
    Tensor::new(&[images.len(), 3, h, w], data).expect("length matches shape")
}
