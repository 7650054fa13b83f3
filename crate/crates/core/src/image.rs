//! 8-bit raster types shared by data generation, I/O and evaluation.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Interleaved 8-bit RGB, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Dimension {
                op: "rgb image",
                axis: "data",
                expected: width * height * 3,
                found: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Self {
            width,
            height,
            data: rgb.iter().copied().cycle().take(width * height * 3).collect(),
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Single-channel 8-bit raster (probability maps, masks on disk).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension {
                op: "gray image",
                axis: "data",
                expected: width * height,
                found: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }
}

/// Binary map, one byte per pixel holding 0 (pristine) or 1 (tampered).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::Dimension {
                op: "mask",
                axis: "data",
                expected: width * height,
                found: bits.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data: bits.into_iter().map(|b| u8::from(b != 0)).collect(),
        })
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.data[y * self.width + x] = u8::from(on);
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b != 0).count()
    }

    pub fn ratio(&self) -> f64 {
        self.count() as f64 / self.data.len() as f64
    }

    /// `{0, 255}` rendering for PGM output.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&b| if b != 0 { 255 } else { 0 }).collect(),
        }
    }

    /// Pixels at or above mid-gray count as tampered.
    pub fn from_gray(g: &GrayImage) -> Self {
        Self {
            width: g.width,
            height: g.height,
            data: g.data.iter().map(|&v| u8::from(v >= 128)).collect(),
        }
    }
}

/// Per-channel normalization applied to network inputs.
pub const PIXEL_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const PIXEL_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// `(1, 3, H, W)` network input.
pub fn image_tensor(img: &RgbImage) -> Tensor {
    Tensor::from_fn(Shape::new(1, 3, img.height, img.width), |_, c, y, x| {
        let v = img.data[(y * img.width + x) * 3 + c] as f64 / 255.0;
        (v - PIXEL_MEAN[c]) / PIXEL_STD[c]
    })
}

/// `round(255 p)` rendering of a probability plane.
pub fn probability_image(probs: &[f64], width: usize, height: usize) -> GrayImage {
    GrayImage {
        width,
        height,
        data: probs
            .iter()
            .map(|&p| (255.0 * p.clamp(0.0, 1.0)).round() as u8)
            .collect(),
    }
}
