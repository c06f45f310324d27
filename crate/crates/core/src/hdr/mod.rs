//! HDR/LDR images, their codecs and tone mapping operators.

mod ldr;
mod rgbe;
mod tmo;

pub use ldr::{read_ldr, write_ldr};
pub use rgbe::{decode_pixel, encode_pixel, read_rgbe, write_rgbe, write_rgbe_flat};
pub use tmo::{generate_ldr_random, luminance, tmo_apply, Tonemapped, TmoKind, TmoParams};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Linear radiance, RGB interleaved, all components finite and ≥ 0.
#[derive(Debug, Clone, PartialEq)]
pub struct HdrImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl HdrImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "{width}×{height} RGB image needs {} values, got {}",
                width * height * 3,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Invalid(format!(
                "radiance must be finite and non-negative, got {} at index {i}",
                data[i]
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let o = (y * self.width + x) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    /// `1 × H × W × 3` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_f32([1, self.height, self.width, 3], self.data.clone())
            .expect("consistent image")
    }

    /// From the first image of an N×H×W×3 tensor; negative values clamp to 0.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let [_, h, w, c] = t.shape();
        if c != 3 {
            return Err(Error::Shape(format!("expected 3 channels, got {c}")));
        }
        let v = t.as_f32()?;
        Self::new(w, h, v[..h * w * 3].iter().map(|&x| x.max(0.0)).collect())
    }
}

/// 8-bit display-referred RGB, interleaved.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LdrImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl LdrImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "{width}×{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// `1 × H × W × 3` tensor with values `v / 255`.
    pub fn to_tensor(&self) -> Tensor {
        let v = self.data.iter().map(|&b| b as f32 / 255.0).collect();
        Tensor::from_f32([1, self.height, self.width, 3], v).expect("consistent image")
    }
}
