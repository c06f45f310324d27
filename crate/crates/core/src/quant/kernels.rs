use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;

use super::fixed::{rounding_shift_right, FixedMultiplier};
use super::{affine_params_from_range, codes_to_tensor, quantize_tensor, QuantDType, QuantParams};
use crate::error::{Error, Result};
use crate::tensor::ops::Broadcast;
use crate::tensor::{ActKind, ConvGeometry, ConvSpec, DType, Tensor};

/// Accumulator width used by an integer convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Accumulation {
    I32,
    I64,
}

impl Accumulation {
    /// i32 whenever the worst case fits, i64 otherwise (and always for
    /// 16-bit activations).
    pub fn select(in_dtype: QuantDType, taps: usize, max_bias: i64) -> Self {
        if in_dtype != QuantDType::I8 {
            return Accumulation::I64;
        }
        let bound = taps as i64 * 255 * 128 + max_bias;
        if bound <= i32::MAX as i64 {
            Accumulation::I32
        } else {
            Accumulation::I64
        }
    }
}

trait Acc: Copy + Send + Sync + Default {
    fn mac(&mut self, x: i32, w: i32);
    fn add(&mut self, b: i32);
}

impl Acc for i32 {
    #[inline(always)]
    fn mac(&mut self, x: i32, w: i32) {
        *self += x * w;
    }
    #[inline(always)]
    fn add(&mut self, b: i32) {
        *self += b;
    }
}

impl Acc for i64 {
    #[inline(always)]
    fn mac(&mut self, x: i32, w: i32) {
        *self += x as i64 * w as i64;
    }
    #[inline(always)]
    fn add(&mut self, b: i32) {
        *self += b as i64;
    }
}

struct IntConv<'a> {
    x: &'a [i32],
    in_shape: [usize; 4],
    w: &'a [i8],
    kh: usize,
    kw: usize,
    c_out: usize,
    depthwise: bool,
    stride: usize,
    geom: ConvGeometry,
    bias: Option<&'a [i32]>,
}

impl IntConv<'_> {
    fn run<A: Acc, T: Copy + Send + Default>(&self, finish: &(dyn Fn(usize, A) -> T + Sync)) -> Vec<T> {
        let [n, h, w, c_in] = self.in_shape;
        let g = self.geom;
        let c_out = self.c_out;
        let row_len = g.out_w * c_out;
        let mut out = vec![T::default(); n * g.out_h * row_len];
        out.par_chunks_mut(row_len.max(1))
            .enumerate()
            .for_each(|(row, dst)| {
                let (b, oy) = (row / g.out_h, row % g.out_h);
                let mut acc = vec![A::default(); c_out];
                for ox in 0..g.out_w {
                    acc.iter_mut().for_each(|a| *a = A::default());
                    for ky in 0..self.kh {
                        let iy = (oy * self.stride + ky) as isize - g.pad_top as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..self.kw {
                            let ix = (ox * self.stride + kx) as isize - g.pad_left as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let src = &self.x[((b * h + iy as usize) * w + ix as usize) * c_in..]
                                [..c_in];
                            if self.depthwise {
                                let wrow = &self.w[(ky * self.kw + kx) * c_in..][..c_in];
                                for ((a, &xv), &wv) in acc.iter_mut().zip(src).zip(wrow) {
                                    a.mac(xv, wv as i32);
                                }
                            } else {
                                let wbase = (ky * self.kw + kx) * c_in * c_out;
                                for (ci, &xv) in src.iter().enumerate() {
                                    if xv == 0 {
                                        continue;
                                    }
                                    let wrow = &self.w[wbase + ci * c_out..][..c_out];
                                    for (a, &wv) in acc.iter_mut().zip(wrow) {
                                        a.mac(xv, wv as i32);
                                    }
                                }
                            }
                        }
                    }
                    if let Some(bias) = self.bias {
                        for (a, &bv) in acc.iter_mut().zip(bias) {
                            a.add(bv);
                        }
                    }
                    for (co, (d, &a)) in dst[ox * c_out..(ox + 1) * c_out]
                        .iter_mut()
                        .zip(&acc)
                        .enumerate()
                    {
                        *d = finish(co, a);
                    }
                }
            });
        out
    }
}

fn zero_centered(t: &Tensor, p: &QuantParams) -> Result<Vec<i32>> {
    if p.is_per_channel() {
        return Err(Error::Invalid("activation params must be per-tensor".into()));
    }
    if t.dtype() != p.dtype.dtype() {
        return Err(Error::DType {
            expected: p.dtype.dtype(),
            found: t.dtype(),
        });
    }
    let z = p.zero_point();
    Ok(t.int_values()?.into_iter().map(|q| q - z).collect())
}

/// Validates weight geometry and returns (c_out, depthwise, output axis).
fn weight_layout(input: [usize; 4], weights: &Tensor, spec: &ConvSpec) -> Result<(usize, bool)> {
    let [kh, kw, wc, wo] = weights.shape();
    let c_in = input[3];
    if kh != spec.kernel_h || kw != spec.kernel_w || wc != c_in {
        return Err(Error::Shape(format!(
            "weights {:?} incompatible with input {input:?}",
            weights.shape()
        )));
    }
    if spec.groups == 1 {
        Ok((wo, false))
    } else if spec.groups == c_in && wo == 1 {
        Ok((c_in, true))
    } else {
        Err(Error::Invalid(format!(
            "unsupported grouping: groups {} with weights {:?}",
            spec.groups,
            weights.shape()
        )))
    }
}

fn check_weight_params(w: &Tensor, p: &QuantParams, c_out: usize, depthwise: bool) -> Result<()> {
    if w.dtype() != DType::I8 || p.dtype != QuantDType::I8 {
        return Err(Error::Invalid("integer kernels take i8 weights".into()));
    }
    if p.zero_points.iter().any(|&z| z != 0) {
        return Err(Error::Invalid("weight quantization must be symmetric".into()));
    }
    if let Some(axis) = p.axis {
        let expected = if depthwise { 2 } else { 3 };
        if axis != expected || p.scales.len() != c_out {
            return Err(Error::Shape(format!(
                "per-channel weight params on axis {axis} with {} entries, expected axis {expected} with {c_out}",
                p.scales.len()
            )));
        }
    }
    Ok(())
}

/// Integer convolution without a fused activation.
#[allow(clippy::too_many_arguments)]
pub fn quantized_conv2d(
    input: &Tensor,
    in_params: &QuantParams,
    weights: &Tensor,
    w_params: &QuantParams,
    bias: &[i32],
    spec: &ConvSpec,
    out_params: &QuantParams,
) -> Result<Tensor> {
    quantized_conv2d_fused(input, in_params, weights, w_params, bias, spec, out_params, None)
}

/// Integer convolution (standard or depthwise, per `spec.groups`).
///
/// `acc = Σ (q_in − z_in)·q_w + bias` in exact integer arithmetic, then
/// `q_out = clamp(round(acc · s_in·s_w/s_out) + z_out)` through a Q31 fixed-point
/// multiplier. A fused ReLU/ReLU6 narrows the clamp range.
#[allow(clippy::too_many_arguments)]
pub fn quantized_conv2d_fused(
    input: &Tensor,
    in_params: &QuantParams,
    weights: &Tensor,
    w_params: &QuantParams,
    bias: &[i32],
    spec: &ConvSpec,
    out_params: &QuantParams,
    act: Option<ActKind>,
) -> Result<Tensor> {
    let shape = input.shape();
    let (c_out, depthwise) = weight_layout(shape, weights, spec)?;
    check_weight_params(weights, w_params, c_out, depthwise)?;
    if bias.len() != c_out {
        return Err(Error::Shape(format!(
            "bias has {} entries, expected {c_out}",
            bias.len()
        )));
    }
    if out_params.is_per_channel() {
        return Err(Error::Invalid("output params must be per-tensor".into()));
    }
    let x = zero_centered(input, in_params)?;
    let geom = spec.geometry(shape[1], shape[2])?;
    let s_in = in_params.scale() as f64;
    let s_out = out_params.scale() as f64;
    let mults: Vec<FixedMultiplier> = (0..c_out)
        .map(|c| FixedMultiplier::from_real(s_in * w_params.channel(c).0 as f64 / s_out))
        .collect();
    let z_out = out_params.zero_point();
    let (mut lo, mut hi) = (out_params.qmin(), out_params.qmax());
    match act {
        None => {}
        Some(ActKind::Relu) => lo = lo.max(z_out),
        Some(ActKind::Relu6) => {
            lo = lo.max(z_out);
            hi = hi.min(out_params.quantize_value(6.0, 0));
        }
        Some(other) => {
            return Err(Error::Invalid(format!(
                "{} cannot be fused into an integer conv",
                other.name()
            )))
        }
    }
    let conv = IntConv {
        x: &x,
        in_shape: shape,
        w: weights.as_i8()?,
        kh: spec.kernel_h,
        kw: spec.kernel_w,
        c_out,
        depthwise,
        stride: spec.stride,
        geom,
        bias: Some(bias),
    };
    let taps = spec.kernel_h * spec.kernel_w * if depthwise { 1 } else { shape[3] };
    let max_bias = bias.iter().map(|b| (*b as i64).abs()).max().unwrap_or(0);
    let codes = match Accumulation::select(in_params.dtype, taps, max_bias) {
        Accumulation::I32 => conv.run::<i32, i32>(&|c, acc| {
            (mults[c].apply_i32(acc) + z_out as i64).clamp(lo as i64, hi as i64) as i32
        }),
        Accumulation::I64 => {
            let overflow = AtomicBool::new(false);
            let wide_ok = in_params.dtype != QuantDType::I8;
            let codes = conv.run::<i64, i32>(&|c, acc| {
                if !wide_ok && (acc > i32::MAX as i64 || acc < i32::MIN as i64) {
                    overflow.store(true, Ordering::Relaxed);
                }
                (mults[c].apply(acc) + z_out as i64).clamp(lo as i64, hi as i64) as i32
            });
            if overflow.load(Ordering::Relaxed) {
                return Err(Error::Overflow("quantized_conv2d".into()));
            }
            codes
        }
    };
    codes_to_tensor([shape[0], geom.out_h, geom.out_w, c_out], codes, out_params.dtype)
}

/// Dynamic-range convolution: int8 weights, float activations.
///
/// The input is quantized on the fly with per-tensor asymmetric int8 params
/// taken from its own min/max, accumulated in integers, rescaled by
/// `s_in · s_w` and offset by the float bias.
pub fn dynamic_conv2d(
    input: &Tensor,
    weights: &Tensor,
    w_params: &QuantParams,
    bias: &[f32],
    spec: &ConvSpec,
) -> Result<Tensor> {
    let shape = input.shape();
    let (c_out, depthwise) = weight_layout(shape, weights, spec)?;
    check_weight_params(weights, w_params, c_out, depthwise)?;
    if bias.len() != c_out {
        return Err(Error::Shape(format!(
            "bias has {} entries, expected {c_out}",
            bias.len()
        )));
    }
    let (lo, hi) = input.min_max()?.unwrap_or((0.0, 0.0));
    let in_params = affine_params_from_range(lo, hi, QuantDType::I8, false)?;
    let q = quantize_tensor(input, &in_params)?;
    let x = zero_centered(&q, &in_params)?;
    let geom = spec.geometry(shape[1], shape[2])?;
    let s_in = in_params.scale() as f64;
    let scales: Vec<f64> = (0..c_out)
        .map(|c| s_in * w_params.channel(c).0 as f64)
        .collect();
    let conv = IntConv {
        x: &x,
        in_shape: shape,
        w: weights.as_i8()?,
        kh: spec.kernel_h,
        kw: spec.kernel_w,
        c_out,
        depthwise,
        stride: spec.stride,
        geom,
        bias: None,
    };
    let taps = spec.kernel_h * spec.kernel_w * if depthwise { 1 } else { shape[3] };
    let out = match Accumulation::select(QuantDType::I8, taps, 0) {
        Accumulation::I32 => {
            conv.run::<i32, f32>(&|c, acc| (acc as f64 * scales[c]) as f32 + bias[c])
        }
        Accumulation::I64 => {
            conv.run::<i64, f32>(&|c, acc| (acc as f64 * scales[c]) as f32 + bias[c])
        }
    };
    Tensor::from_f32([shape[0], geom.out_h, geom.out_w, c_out], out)
}

/// Fixed input quantization: 8-bit pixels are exactly representable.
pub fn input_params(dtype: QuantDType) -> QuantParams {
    QuantParams {
        dtype,
        axis: None,
        scales: vec![1.0 / 255.0],
        zero_points: vec![dtype.qmin()],
    }
}

/// Output params fixed by the activation's range, independent of calibration.
pub fn fixed_activation_params(kind: ActKind, dtype: QuantDType) -> Option<QuantParams> {
    let (qmin, qmax) = (dtype.qmin(), dtype.qmax());
    match kind {
        ActKind::Sigmoid => Some(QuantParams {
            dtype,
            axis: None,
            scales: vec![(1.0 / (qmax as f64 - qmin as f64)) as f32],
            zero_points: vec![qmin],
        }),
        ActKind::Tanh => Some(QuantParams {
            dtype,
            axis: None,
            scales: vec![(1.0 / qmax as f64) as f32],
            zero_points: vec![0],
        }),
        ActKind::Relu | ActKind::Relu6 => None,
    }
}

fn check_out(p: &QuantParams) -> Result<()> {
    if p.is_per_channel() {
        return Err(Error::Invalid("output params must be per-tensor".into()));
    }
    Ok(())
}

/// Re-expresses codes under new params.
pub fn requantize(t: &Tensor, from: &QuantParams, to: &QuantParams) -> Result<Tensor> {
    check_out(to)?;
    if from == to {
        zero_centered(t, from)?;
        return Ok(t.clone());
    }
    let x = zero_centered(t, from)?;
    let m = FixedMultiplier::from_real(from.scale() as f64 / to.scale() as f64);
    let z = to.zero_point() as i64;
    let codes = x
        .into_iter()
        .map(|v| (m.apply(v as i64) + z).clamp(to.qmin() as i64, to.qmax() as i64) as i32)
        .collect();
    codes_to_tensor(t.shape(), codes, to.dtype)
}

const ADD_SHIFT: u32 = 20;

/// Integer residual add.
pub fn quantized_add(
    a: &Tensor,
    pa: &QuantParams,
    b: &Tensor,
    pb: &QuantParams,
    out: &QuantParams,
) -> Result<Tensor> {
    check_out(out)?;
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "add of {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (xa, xb) = (zero_centered(a, pa)?, zero_centered(b, pb)?);
    let s_out = out.scale() as f64;
    let ma = FixedMultiplier::from_real(pa.scale() as f64 / s_out);
    let mb = FixedMultiplier::from_real(pb.scale() as f64 / s_out);
    let z = out.zero_point() as i128;
    let codes = xa
        .iter()
        .zip(&xb)
        .map(|(&va, &vb)| {
            let ta = ma.apply((va as i64) << ADD_SHIFT) as i128;
            let tb = mb.apply((vb as i64) << ADD_SHIFT) as i128;
            (rounding_shift_right(ta + tb, ADD_SHIFT) + z).clamp(out.qmin() as i128, out.qmax() as i128)
                as i32
        })
        .collect();
    codes_to_tensor(a.shape(), codes, out.dtype)
}

/// Integer gating product with the same broadcasting rules as
/// [`mul_broadcast`](crate::tensor::mul_broadcast).
pub fn quantized_mul(
    x: &Tensor,
    px: &QuantParams,
    gate: &Tensor,
    pg: &QuantParams,
    out: &QuantParams,
) -> Result<Tensor> {
    check_out(out)?;
    let shape = x.shape();
    let mode = Broadcast::classify(shape, gate.shape())?;
    let (xv, gv) = (zero_centered(x, px)?, zero_centered(gate, pg)?);
    let m = FixedMultiplier::from_real(px.scale() as f64 * pg.scale() as f64 / out.scale() as f64);
    let z = out.zero_point() as i64;
    let codes = xv
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let p = v as i64 * gv[mode.index(i, shape)] as i64;
            (m.apply(p) + z).clamp(out.qmin() as i64, out.qmax() as i64) as i32
        })
        .collect();
    codes_to_tensor(shape, codes, out.dtype)
}

/// Channel concatenation, both inputs requantized to `out`.
pub fn quantized_concat(
    a: &Tensor,
    pa: &QuantParams,
    b: &Tensor,
    pb: &QuantParams,
    out: &QuantParams,
) -> Result<Tensor> {
    let [n, h, w, ca] = a.shape();
    let [nb, hb, wb, cb] = b.shape();
    if (n, h, w) != (nb, hb, wb) {
        return Err(Error::Shape(format!(
            "concat of {:?} and {:?}: spatial extents differ",
            a.shape(),
            b.shape()
        )));
    }
    let ra = requantize(a, pa, out)?.int_values()?;
    let rb = requantize(b, pb, out)?.int_values()?;
    let mut codes = Vec::with_capacity(ra.len() + rb.len());
    for p in 0..n * h * w {
        codes.extend_from_slice(&ra[p * ca..(p + 1) * ca]);
        codes.extend_from_slice(&rb[p * cb..(p + 1) * cb]);
    }
    codes_to_tensor([n, h, w, ca + cb], codes, out.dtype)
}

/// Integer global average pool: exact sums, one fixed-point rescale by
/// `s_in / (s_out · H·W)`.
pub fn quantized_avg_pool(x: &Tensor, px: &QuantParams, out: &QuantParams) -> Result<Tensor> {
    check_out(out)?;
    let [n, h, w, c] = x.shape();
    if h == 0 || w == 0 {
        return Err(Error::Shape("global pool over zero spatial size".into()));
    }
    let v = zero_centered(x, px)?;
    let m = FixedMultiplier::from_real(px.scale() as f64 / (out.scale() as f64 * (h * w) as f64));
    let z = out.zero_point() as i64;
    let mut codes = Vec::with_capacity(n * c);
    for b in 0..n {
        let mut sums = vec![0i64; c];
        for px in v[b * h * w * c..(b + 1) * h * w * c].chunks_exact(c) {
            for (s, &q) in sums.iter_mut().zip(px) {
                *s += q as i64;
            }
        }
        codes.extend(
            sums.into_iter()
                .map(|s| (m.apply(s) + z).clamp(out.qmin() as i64, out.qmax() as i64) as i32),
        );
    }
    codes_to_tensor([n, 1, 1, c], codes, out.dtype)
}

/// Nearest upsampling of codes; params are unchanged.
pub fn quantized_upsample(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(Error::Invalid("upsample factor must be >= 1".into()));
    }
    let [n, h, w, c] = x.shape();
    let v = x.int_values()?;
    let (oh, ow) = (h * factor, w * factor);
    let mut codes = Vec::with_capacity(n * oh * ow * c);
    for b in 0..n {
        for oy in 0..oh {
            let row = &v[(b * h + oy / factor) * w * c..][..w * c];
            for ox in 0..ow {
                let ix = ox / factor;
                codes.extend_from_slice(&row[ix * c..(ix + 1) * c]);
            }
        }
    }
    let dtype = QuantDType::from_dtype(x.dtype())
        .ok_or_else(|| Error::Invalid("expected an integer tensor".into()))?;
    codes_to_tensor([n, oh, ow, c], codes, dtype)
}

/// Element-wise activation through a lookup table over every input code.
pub fn quantized_activation(
    x: &Tensor,
    px: &QuantParams,
    kind: ActKind,
    out: &QuantParams,
) -> Result<Tensor> {
    check_out(out)?;
    let qmin = px.qmin();
    let table: Vec<i32> = (qmin..=px.qmax())
        .map(|q| out.quantize_value(kind.apply(px.dequantize_value(q, 0)), 0))
        .collect();
    zero_centered(x, px)?;
    let codes = x
        .int_values()?
        .into_iter()
        .map(|q| table[(q - qmin) as usize])
        .collect();
    codes_to_tensor(x.shape(), codes, out.dtype)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(scale: f32, zp: i32) -> QuantParams {
        QuantParams::per_tensor(scale, zp, QuantDType::I8).unwrap()
    }

    #[test]
    fn zero_input_propagates_to_zero_point() {
        let pin = p(0.1, -5);
        let x = Tensor::from_i8([1, 3, 3, 2], vec![-5; 18]).unwrap();
        let w = Tensor::from_i8([3, 3, 2, 4], (0..72).map(|i| (i % 11) as i8 - 5).collect()).unwrap();
        let pw = QuantParams::per_channel(3, vec![0.02; 4], vec![0; 4], QuantDType::I8).unwrap();
        let pout = p(0.05, 17);
        let y = quantized_conv2d(&x, &pin, &w, &pw, &[0; 4], &ConvSpec::new(3, 1), &pout).unwrap();
        assert!(y.as_i8().unwrap().iter().all(|&q| q == 17));
    }

    #[test]
    fn unit_scales_identity() {
        let x = Tensor::from_i8([1, 2, 2, 1], vec![-128, -1, 0, 127]).unwrap();
        let w = Tensor::from_i8([1, 1, 1, 1], vec![1]).unwrap();
        let one = p(1.0, 0);
        let y = quantized_conv2d(&x, &one, &w, &one, &[0], &ConvSpec::pointwise(), &one).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn rejects_asymmetric_weights() {
        let x = Tensor::from_i8([1, 1, 1, 1], vec![1]).unwrap();
        let w = Tensor::from_i8([1, 1, 1, 1], vec![1]).unwrap();
        let pw = p(1.0, 3);
        let one = p(1.0, 0);
        assert!(quantized_conv2d(&x, &one, &w, &pw, &[0], &ConvSpec::pointwise(), &one).is_err());
    }

    #[test]
    fn fused_relu6_clamps() {
        let x = Tensor::from_i8([1, 1, 1, 2], vec![100, -100]).unwrap();
        let w = Tensor::from_i8([1, 1, 1, 1], vec![1]).unwrap();
        let pin = p(0.1, 0);
        let pw = p(1.0, 0);
        let pout = p(8.0 / 255.0, -128);
        let y = quantized_conv2d_fused(
            &x.clone().reshape([1, 1, 2, 1]).unwrap(),
            &pin,
            &w,
            &pw,
            &[0],
            &ConvSpec::pointwise(),
            &pout,
            Some(ActKind::Relu6),
        )
        .unwrap();
        let six = pout.quantize_value(6.0, 0) as i8;
        assert_eq!(y.as_i8().unwrap(), &[six, -128]);
    }

    #[test]
    fn dynamic_conv_zero_input_gives_bias() {
        let x = Tensor::zeros([1, 3, 3, 2], DType::F32);
        let w = Tensor::from_i8([3, 3, 2, 2], vec![7; 36]).unwrap();
        let pw = QuantParams::per_channel(3, vec![0.1, 0.2], vec![0, 0], QuantDType::I8).unwrap();
        let y = dynamic_conv2d(&x, &w, &pw, &[0.25, -1.5], &ConvSpec::new(3, 1)).unwrap();
        for px in y.as_f32().unwrap().chunks(2) {
            assert_eq!(px, &[0.25, -1.5]);
        }
    }

    #[test]
    fn requantize_and_add() {
        let pa = p(0.1, 0);
        let pb = p(0.2, 10);
        let out = p(0.1, -20);
        let a = Tensor::from_i8([1, 1, 1, 3], vec![10, -30, 0]).unwrap();
        let b = Tensor::from_i8([1, 1, 1, 3], vec![15, 10, 11]).unwrap();
        // reals: a = 1.0, -3.0, 0.0 ; b = 1.0, 0.0, 0.2
        let y = quantized_add(&a, &pa, &b, &pb, &out).unwrap();
        assert_eq!(y.as_i8().unwrap(), &[0, -50, -18]);
        let r = requantize(&b, &pb, &out).unwrap();
        assert_eq!(r.as_i8().unwrap(), &[-10, -20, -18]);
    }

    #[test]
    fn pool_and_mul() {
        let px = p(0.5, 0);
        let x = Tensor::from_i8([1, 2, 2, 1], vec![1, 2, 3, 4]).unwrap();
        let y = quantized_avg_pool(&x, &px, &p(0.25, 0)).unwrap();
        // mean real = 1.25 -> 5 codes at 0.25
        assert_eq!(y.as_i8().unwrap(), &[5]);
        let g = Tensor::from_i8([1, 1, 1, 1], vec![64]).unwrap();
        let pg = p(1.0 / 128.0, 0);
        let m = quantized_mul(&x, &px, &g, &pg, &px).unwrap();
        assert_eq!(m.as_i8().unwrap(), &[1, 1, 2, 2]);
    }

    #[test]
    fn sigmoid_lut_uses_fixed_params() {
        let px = p(0.05, 0);
        let out = fixed_activation_params(ActKind::Sigmoid, QuantDType::I8).unwrap();
        assert_eq!(out.scale(), 1.0 / 255.0);
        let x = Tensor::from_i8([1, 1, 1, 3], vec![0, 127, -128]).unwrap();
        let y = quantized_activation(&x, &px, ActKind::Sigmoid, &out).unwrap();
        let v = y.as_i8().unwrap();
        // the f32 scale sits just above 1/255, so 0.5 falls below the 127.5 tie
        assert_eq!(v[0], -1);
        assert!(v[1] > 120 && v[2] < -120);
    }

    #[test]
    fn upsample_codes() {
        let x = Tensor::from_i16([1, 1, 2, 1], vec![-300, 5]).unwrap();
        let y = quantized_upsample(&x, 2).unwrap();
        assert_eq!(y.as_i16().unwrap(), &[-300, -300, 5, 5, -300, -300, 5, 5]);
    }
}
