//! Dense NHWC tensors and the float kernels the network is assembled from.

mod conv;
pub(crate) mod ops;

pub use conv::{
    conv2d, conv_mac_count, conv_output_size, depthwise_conv2d, fold_batch_norm, same_padding,
    BatchNorm, ConvGeometry, ConvSpec, Padding,
};
pub use ops::{
    activation, add, concat_channels, global_avg_pool, instance_norm, mul_broadcast,
    upsample_nearest, ActKind,
};

use crate::error::{Error, Result};

/// Element type of a [`Tensor`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    I8,
    I16,
    I32,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::I8 => 1,
            DType::I16 => 2,
            DType::I32 => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::I8),
            2 => Some(DType::I16),
            3 => Some(DType::I32),
            _ => None,
        }
    }

    pub fn size_bytes(self) -> usize {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::I16 => 2,
            DType::I8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    I8(Vec<i8>),
    I16(Vec<i16>),
    I32(Vec<i32>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::I8(_) => DType::I8,
            TensorData::I16(_) => DType::I16,
            TensorData::I32(_) => DType::I32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::I8(v) => v.len(),
            TensorData::I16(v) => v.len(),
            TensorData::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A 4-D row-major tensor in (N, H, W, C) order.
///
/// Weight tensors reuse the same container with (kh, kw, Cin, Cout) extents and
/// bias vectors are stored as (1, 1, 1, C).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: TensorData,
}

fn check_len(shape: [usize; 4], len: usize) -> Result<()> {
    let expected: usize = shape.iter().product();
    if expected != len {
        return Err(Error::Shape(format!(
            "shape {shape:?} needs {expected} elements, buffer has {len}"
        )));
    }
    Ok(())
}

impl Tensor {
    pub fn new(shape: [usize; 4], data: TensorData) -> Result<Self> {
        check_len(shape, data.len())?;
        Ok(Self { shape, data })
    }

    pub fn from_f32(shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        Self::new(shape, TensorData::F32(data))
    }

    pub fn from_i8(shape: [usize; 4], data: Vec<i8>) -> Result<Self> {
        Self::new(shape, TensorData::I8(data))
    }

    pub fn from_i16(shape: [usize; 4], data: Vec<i16>) -> Result<Self> {
        Self::new(shape, TensorData::I16(data))
    }

    pub fn from_i32(shape: [usize; 4], data: Vec<i32>) -> Result<Self> {
        Self::new(shape, TensorData::I32(data))
    }

    /// A (1, 1, 1, C) float vector.
    pub fn vector(values: Vec<f32>) -> Self {
        let c = values.len();
        Self {
            shape: [1, 1, 1, c],
            data: TensorData::F32(values),
        }
    }

    pub fn zeros(shape: [usize; 4], dtype: DType) -> Self {
        let n: usize = shape.iter().product();
        let data = match dtype {
            DType::F32 => TensorData::F32(vec![0.0; n]),
            DType::I8 => TensorData::I8(vec![0; n]),
            DType::I16 => TensorData::I16(vec![0; n]),
            DType::I32 => TensorData::I32(vec![0; n]),
        };
        Self { shape, data }
    }

    pub fn full(shape: [usize; 4], value: f32) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: TensorData::F32(vec![value; n]),
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn n(&self) -> usize {
        self.shape[0]
    }

    pub fn h(&self) -> usize {
        self.shape[1]
    }

    pub fn w(&self) -> usize {
        self.shape[2]
    }

    pub fn c(&self) -> usize {
        self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn into_data(self) -> TensorData {
        self.data
    }

    pub fn as_f32(&self) -> Result<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Ok(v),
            other => Err(Error::DType {
                expected: DType::F32,
                found: other.dtype(),
            }),
        }
    }

    pub fn as_i8(&self) -> Result<&[i8]> {
        match &self.data {
            TensorData::I8(v) => Ok(v),
            other => Err(Error::DType {
                expected: DType::I8,
                found: other.dtype(),
            }),
        }
    }

    pub fn as_i16(&self) -> Result<&[i16]> {
        match &self.data {
            TensorData::I16(v) => Ok(v),
            other => Err(Error::DType {
                expected: DType::I16,
                found: other.dtype(),
            }),
        }
    }

    pub fn as_i32(&self) -> Result<&[i32]> {
        match &self.data {
            TensorData::I32(v) => Ok(v),
            other => Err(Error::DType {
                expected: DType::I32,
                found: other.dtype(),
            }),
        }
    }

    pub fn into_f32(self) -> Result<Vec<f32>> {
        match self.data {
            TensorData::F32(v) => Ok(v),
            other => Err(Error::DType {
                expected: DType::F32,
                found: other.dtype(),
            }),
        }
    }

    /// Integer elements widened to i32, regardless of storage width.
    pub fn int_values(&self) -> Result<Vec<i32>> {
        match &self.data {
            TensorData::I8(v) => Ok(v.iter().map(|&x| x as i32).collect()),
            TensorData::I16(v) => Ok(v.iter().map(|&x| x as i32).collect()),
            TensorData::I32(v) => Ok(v.clone()),
            TensorData::F32(_) => Err(Error::Invalid("expected an integer tensor".into())),
        }
    }

    pub fn offset(&self, index: [usize; 4]) -> Result<usize> {
        let s = self.shape;
        if index.iter().zip(s.iter()).any(|(i, d)| i >= d) {
            return Err(Error::OutOfBounds { index, shape: s });
        }
        Ok(((index[0] * s[1] + index[1]) * s[2] + index[2]) * s[3] + index[3])
    }

    /// Element at `index` converted to f32 (integers are returned as their code).
    pub fn get(&self, index: [usize; 4]) -> Result<f32> {
        let o = self.offset(index)?;
        Ok(match &self.data {
            TensorData::F32(v) => v[o],
            TensorData::I8(v) => v[o] as f32,
            TensorData::I16(v) => v[o] as f32,
            TensorData::I32(v) => v[o] as f32,
        })
    }

    pub fn map_f32(&self, f: impl Fn(f32) -> f32) -> Result<Tensor> {
        let v = self.as_f32()?;
        Ok(Tensor {
            shape: self.shape,
            data: TensorData::F32(v.iter().map(|&x| f(x)).collect()),
        })
    }

    /// Channels `[start, start + len)` of every pixel.
    pub fn channel_slice(&self, start: usize, len: usize) -> Result<Tensor> {
        let c = self.c();
        if start + len > c {
            return Err(Error::Shape(format!(
                "channel slice {start}..{} exceeds {c} channels",
                start + len
            )));
        }
        let pixels = self.n() * self.h() * self.w();
        let src = self.as_f32()?;
        let mut out = Vec::with_capacity(pixels * len);
        for p in 0..pixels {
            out.extend_from_slice(&src[p * c + start..p * c + start + len]);
        }
        Tensor::from_f32([self.n(), self.h(), self.w(), len], out)
    }

    /// Reinterprets the buffer with a new shape of equal element count.
    pub fn reshape(self, shape: [usize; 4]) -> Result<Tensor> {
        Tensor::new(shape, self.data)
    }

    /// Minimum and maximum of a float tensor; `None` when empty.
    pub fn min_max(&self) -> Result<Option<(f32, f32)>> {
        let v = self.as_f32()?;
        Ok(v.iter().fold(None, |acc, &x| match acc {
            None => Some((x, x)),
            Some((lo, hi)) => Some((lo.min(x), hi.max(x))),
        }))
    }
}
