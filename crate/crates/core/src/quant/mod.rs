//! Affine integer quantization.
//!
//! Real values map to integers by `q = clamp(round(x / scale) + zero_point)`
//! with round-half-away-from-zero. Weights use per-channel symmetric params,
//! activations per-tensor asymmetric params.

mod calibrate;
mod fixed;
mod kernels;
mod scheme;

pub use calibrate::{calibrate_activations, calibrate_tensors, CalibrationRecord, NormStats};
pub use fixed::{rounding_shift_right, FixedMultiplier};
pub use kernels::{
    dynamic_conv2d, fixed_activation_params, input_params, quantized_activation, quantized_add, quantized_avg_pool,
    quantized_concat, quantized_conv2d, quantized_conv2d_fused, quantized_mul, quantized_upsample,
    requantize, Accumulation,
};
pub(crate) use scheme::apply_plan_structure;
pub use scheme::{quantize_model, QuantPlan, QuantScheme};

use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor, TensorData};

/// Integer storage type of quantized values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QuantDType {
    I8,
    I16,
    /// Only used for biases, which carry `s_in · s_w` with zero-point 0.
    I32,
}

impl QuantDType {
    pub fn qmin(self) -> i32 {
        match self {
            QuantDType::I8 => i8::MIN as i32,
            QuantDType::I16 => i16::MIN as i32,
            QuantDType::I32 => i32::MIN,
        }
    }

    pub fn qmax(self) -> i32 {
        match self {
            QuantDType::I8 => i8::MAX as i32,
            QuantDType::I16 => i16::MAX as i32,
            QuantDType::I32 => i32::MAX,
        }
    }

    pub fn dtype(self) -> DType {
        match self {
            QuantDType::I8 => DType::I8,
            QuantDType::I16 => DType::I16,
            QuantDType::I32 => DType::I32,
        }
    }

    pub fn from_dtype(d: DType) -> Option<Self> {
        match d {
            DType::I8 => Some(QuantDType::I8),
            DType::I16 => Some(QuantDType::I16),
            DType::I32 => Some(QuantDType::I32),
            DType::F32 => None,
        }
    }
}

/// Scale / zero-point pairs, either one per tensor or one per slice along `axis`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantParams {
    pub dtype: QuantDType,
    pub axis: Option<usize>,
    pub scales: Vec<f32>,
    pub zero_points: Vec<i32>,
}

impl QuantParams {
    pub fn per_tensor(scale: f32, zero_point: i32, dtype: QuantDType) -> Result<Self> {
        let p = Self {
            dtype,
            axis: None,
            scales: vec![scale],
            zero_points: vec![zero_point],
        };
        p.validate()?;
        Ok(p)
    }

    pub fn per_channel(
        axis: usize,
        scales: Vec<f32>,
        zero_points: Vec<i32>,
        dtype: QuantDType,
    ) -> Result<Self> {
        let p = Self {
            dtype,
            axis: Some(axis),
            scales,
            zero_points,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() || self.scales.len() != self.zero_points.len() {
            return Err(Error::Invalid(format!(
                "quant params need matching non-empty scales/zero-points ({} vs {})",
                self.scales.len(),
                self.zero_points.len()
            )));
        }
        if self.axis.is_none() && self.scales.len() != 1 {
            return Err(Error::Invalid("per-tensor params carry one scale".into()));
        }
        if let Some(a) = self.axis {
            if a > 3 {
                return Err(Error::Invalid(format!("quant axis {a} out of range")));
            }
        }
        for (&s, &z) in self.scales.iter().zip(&self.zero_points) {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::Invalid(format!("scale must be positive, got {s}")));
            }
            if z < self.dtype.qmin() || z > self.dtype.qmax() {
                return Err(Error::Invalid(format!(
                    "zero point {z} not representable in {:?}",
                    self.dtype
                )));
            }
        }
        Ok(())
    }

    pub fn scale(&self) -> f32 {
        self.scales[0]
    }

    pub fn zero_point(&self) -> i32 {
        self.zero_points[0]
    }

    pub fn qmin(&self) -> i32 {
        self.dtype.qmin()
    }

    pub fn qmax(&self) -> i32 {
        self.dtype.qmax()
    }

    pub fn is_per_channel(&self) -> bool {
        self.axis.is_some()
    }

    pub fn channel(&self, i: usize) -> (f32, i32) {
        if self.axis.is_some() {
            (self.scales[i], self.zero_points[i])
        } else {
            (self.scales[0], self.zero_points[0])
        }
    }

    /// Quantizes one value against the params of channel `ch`.
    #[inline]
    pub fn quantize_value(&self, x: f32, ch: usize) -> i32 {
        let (s, z) = self.channel(ch);
        quantize_scalar(x, s, z, self.qmin(), self.qmax())
    }

    #[inline]
    pub fn dequantize_value(&self, q: i32, ch: usize) -> f32 {
        let (s, z) = self.channel(ch);
        (s as f64 * (q as i64 - z as i64) as f64) as f32
    }

    /// Smallest and largest real values the params can represent.
    pub fn real_range(&self) -> (f32, f32) {
        (
            self.dequantize_value(self.qmin(), 0),
            self.dequantize_value(self.qmax(), 0),
        )
    }
}

#[inline]
pub(crate) fn quantize_scalar(x: f32, scale: f32, zero_point: i32, qmin: i32, qmax: i32) -> i32 {
    if x.is_nan() {
        return zero_point.clamp(qmin, qmax);
    }
    // f64 quotient of two f32 values rounds correctly at half-integer ties
    let r = (x as f64 / scale as f64).round() + zero_point as f64;
    r.clamp(qmin as f64, qmax as f64) as i32
}

/// Affine parameters covering `[min, max]`, widened to contain 0.
///
/// Asymmetric: `scale = (max − min)/(qmax − qmin)`,
/// `zero_point = round(qmin − min/scale)`. Symmetric (weights):
/// `scale = max(|min|, |max|)/qmax`, `zero_point = 0`. An all-zero range gives
/// scale 1, zero-point 0.
pub fn affine_params_from_range(
    min: f32,
    max: f32,
    dtype: QuantDType,
    symmetric: bool,
) -> Result<QuantParams> {
    if min.is_nan() || max.is_nan() {
        return Err(Error::Invalid("NaN in quantization range".into()));
    }
    if min > max {
        return Err(Error::Invalid(format!("range min {min} > max {max}")));
    }
    let lo = min.min(0.0) as f64;
    let hi = max.max(0.0) as f64;
    if lo == 0.0 && hi == 0.0 {
        return QuantParams::per_tensor(1.0, 0, dtype);
    }
    let (qmin, qmax) = (dtype.qmin() as f64, dtype.qmax() as f64);
    let (scale, zp) = if symmetric {
        (lo.abs().max(hi) / qmax, 0)
    } else {
        let scale = (hi - lo) / (qmax - qmin);
        let zp = (qmin - lo / scale).round().clamp(qmin, qmax) as i32;
        (scale, zp)
    };
    let scale = (scale as f32).max(f32::MIN_POSITIVE);
    QuantParams::per_tensor(scale, zp, dtype)
}

/// Per-channel symmetric params along `axis`, one pair per slice.
pub fn per_channel_symmetric(t: &Tensor, axis: usize, dtype: QuantDType) -> Result<QuantParams> {
    let v = t.as_f32()?;
    let shape = t.shape();
    let dim = shape[axis];
    let stride: usize = shape[axis + 1..].iter().product();
    let mut max_abs = vec![0.0f32; dim];
    for (i, &x) in v.iter().enumerate() {
        let ch = (i / stride) % dim;
        max_abs[ch] = max_abs[ch].max(x.abs());
    }
    let mut scales = Vec::with_capacity(dim);
    for m in max_abs {
        let p = affine_params_from_range(-m, m, dtype, true)?;
        scales.push(p.scale());
    }
    QuantParams::per_channel(axis, scales, vec![0; dim], dtype)
}

fn channel_of(params: &QuantParams, shape: [usize; 4]) -> Result<Option<(usize, usize)>> {
    match params.axis {
        None => Ok(None),
        Some(a) => {
            if shape[a] != params.scales.len() {
                return Err(Error::Shape(format!(
                    "per-channel params with {} entries vs axis {a} of {shape:?}",
                    params.scales.len()
                )));
            }
            Ok(Some((shape[a + 1..].iter().product(), shape[a])))
        }
    }
}

pub(crate) fn codes_to_tensor(shape: [usize; 4], codes: Vec<i32>, dtype: QuantDType) -> Result<Tensor> {
    let data = match dtype {
        QuantDType::I8 => TensorData::I8(codes.into_iter().map(|q| q as i8).collect()),
        QuantDType::I16 => TensorData::I16(codes.into_iter().map(|q| q as i16).collect()),
        QuantDType::I32 => TensorData::I32(codes),
    };
    Tensor::new(shape, data)
}

/// `q = clamp(round(x/scale) + zero_point, qmin, qmax)`; saturating.
pub fn quantize_tensor(x: &Tensor, params: &QuantParams) -> Result<Tensor> {
    params.validate()?;
    let shape = x.shape();
    let per = channel_of(params, shape)?;
    let v = x.as_f32()?;
    let codes = v
        .iter()
        .enumerate()
        .map(|(i, &val)| {
            let ch = per.map_or(0, |(stride, dim)| (i / stride) % dim);
            params.quantize_value(val, ch)
        })
        .collect();
    codes_to_tensor(shape, codes, params.dtype)
}

/// `x̂ = scale · (q − zero_point)`.
pub fn dequantize_tensor(q: &Tensor, params: &QuantParams) -> Result<Tensor> {
    if q.dtype() != params.dtype.dtype() {
        return Err(Error::DType {
            expected: params.dtype.dtype(),
            found: q.dtype(),
        });
    }
    let shape = q.shape();
    let per = channel_of(params, shape)?;
    let codes = q.int_values()?;
    let out = codes
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let ch = per.map_or(0, |(stride, dim)| (i / stride) % dim);
            params.dequantize_value(c, ch)
        })
        .collect();
    Tensor::from_f32(shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_range() {
        let p = affine_params_from_range(0.0, 0.0, QuantDType::I8, false).unwrap();
        assert_eq!((p.scale(), p.zero_point()), (1.0, 0));
    }

    #[test]
    fn symmetric_unit_range() {
        let p = affine_params_from_range(-1.0, 1.0, QuantDType::I8, true).unwrap();
        assert_eq!(p.scale(), 1.0 / 127.0);
        assert_eq!(p.zero_point(), 0);
    }

    #[test]
    fn asymmetric_relu6_range() {
        let p = affine_params_from_range(0.0, 6.0, QuantDType::I8, false).unwrap();
        assert_eq!(p.scale(), 6.0 / 255.0);
        assert_eq!(p.zero_point(), -128);
    }

    #[test]
    fn range_is_widened_to_zero() {
        let p = affine_params_from_range(2.0, 4.0, QuantDType::I8, false).unwrap();
        assert_eq!(p.zero_point(), -128);
        assert_eq!(p.scale(), 4.0 / 255.0);
        assert!(affine_params_from_range(1.0, 0.0, QuantDType::I8, false).is_err());
    }

    #[test]
    fn scalar_quantization() {
        let p = QuantParams::per_tensor(0.5, 0, QuantDType::I8).unwrap();
        assert_eq!(p.quantize_value(1.2, 0), 2);
        assert_eq!(p.quantize_value(1.25, 0), 3);
        assert_eq!(p.quantize_value(-1.25, 0), -3);
        let p = QuantParams::per_tensor(1.0 / 127.0, 0, QuantDType::I8).unwrap();
        assert_eq!(p.quantize_value(100.0, 0), 127);
        let p = QuantParams::per_tensor(0.37, -17, QuantDType::I8).unwrap();
        assert_eq!(p.quantize_value(0.0, 0), -17);
        assert_eq!(p.dequantize_value(-17, 0), 0.0);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(QuantParams::per_tensor(0.0, 0, QuantDType::I8).is_err());
        assert!(QuantParams::per_tensor(1.0, 128, QuantDType::I8).is_err());
        assert!(QuantParams::per_tensor(1.0, 300, QuantDType::I16).is_ok());
        assert!(QuantParams::per_channel(3, vec![1.0, 1.0], vec![0], QuantDType::I8).is_err());
    }

    #[test]
    fn per_channel_weights() {
        let w = Tensor::from_f32([1, 1, 2, 2], vec![0.9, -0.5, -2.0, 0.2]).unwrap();
        let p = per_channel_symmetric(&w, 3, QuantDType::I8).unwrap();
        assert_eq!(p.scales, vec![2.0 / 127.0, 0.5 / 127.0]);
        let q = quantize_tensor(&w, &p).unwrap();
        assert_eq!(q.as_i8().unwrap(), &[57, -127, -127, 51]);
        let d = dequantize_tensor(&q, &p).unwrap();
        for (a, b) in d.as_f32().unwrap().iter().zip(w.as_f32().unwrap()) {
            assert!((a - b).abs() <= 1.0 / 127.0);
        }
    }

    #[test]
    fn dtype_mismatch_on_dequantize() {
        let p = QuantParams::per_tensor(1.0, 0, QuantDType::I16).unwrap();
        let q = Tensor::zeros([1, 1, 1, 1], DType::I8);
        assert!(dequantize_tensor(&q, &p).is_err());
    }
}
