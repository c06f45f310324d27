//! Wide-integer reference for the integer convolution.

use mqn_core::quant::QuantParams;
use mqn_core::tensor::{ActKind, ConvSpec};
use mqn_core::Tensor;

use crate::conv::axis_geometry;
use crate::idx;

/// Q31 decomposition of a positive multiplier taken straight from the f64
/// bit pattern: `m = mantissa · 2^(−shift)` with `mantissa ∈ [2^30, 2^31)`.
pub fn q31(m: f64) -> (i128, i32) {
    assert!(m > 0.0 && m.is_finite() && m.is_normal());
    let bits = m.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i32 - 1023;
    let frac = bits & ((1u64 << 52) - 1);
    // m = full · 2^(exp − 52) with full in [2^52, 2^53); keep the top 31
    // bits, rounding half up
    let full = (1u64 << 52) | frac;
    let mut mant = ((full >> 22) + ((full >> 21) & 1)) as i128;
    let mut e = exp + 1;
    if mant == 1 << 31 {
        mant >>= 1;
        e += 1;
    }
    (mant, 31 - e)
}

/// `round(v / 2^s)` with ties away from zero, exact.
pub fn shift_round(v: i128, s: i32) -> i128 {
    if s <= 0 {
        return v << (-s);
    }
    let d = 1i128 << s;
    let q = v.abs() / d;
    let r = v.abs() % d;
    let q = if 2 * r >= d { q + 1 } else { q };
    if v < 0 {
        -q
    } else {
        q
    }
}

/// Integer convolution computed entirely in i128: the centred input times
/// the int8 weights plus the int32 bias, requantized through the Q31
/// multiplier and clamped (narrowed for a fused ReLU/ReLU6).
#[allow(clippy::too_many_arguments)]
pub fn wide_quantized_conv(
    x: &Tensor,
    px: &QuantParams,
    w: &Tensor,
    pw: &QuantParams,
    bias: &[i32],
    spec: &ConvSpec,
    out: &QuantParams,
    act: Option<ActKind>,
) -> Vec<i32> {
    let xs = x.shape();
    let ws = w.shape();
    let xv = x.int_values().unwrap();
    let wv = w.int_values().unwrap();
    let depthwise = spec.groups > 1;
    let c_out = if depthwise { ws[2] } else { ws[3] };
    let (oh, pt) = axis_geometry(xs[1], ws[0], spec.stride, spec.padding);
    let (ow, pl) = axis_geometry(xs[2], ws[1], spec.stride, spec.padding);
    let os = [xs[0], oh, ow, c_out];
    let zx = px.zero_point() as i128;
    let zo = out.zero_point() as i128;
    let (mut lo, mut hi) = (out.qmin() as i128, out.qmax() as i128);
    match act {
        Some(ActKind::Relu) => lo = lo.max(zo),
        Some(ActKind::Relu6) => {
            lo = lo.max(zo);
            let six = crate::round_away(6.0 / out.scale() as f64) as i128 + zo;
            hi = hi.min(six);
        }
        _ => {}
    }
    let mut codes = vec![0i32; os.iter().product()];
    for n in 0..xs[0] {
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..c_out {
                    let mut acc: i128 = 0;
                    for ky in 0..ws[0] {
                        for kx in 0..ws[1] {
                            let iy = (oy * spec.stride + ky) as i64 - pt as i64;
                            let ix = (ox * spec.stride + kx) as i64 - pl as i64;
                            if iy < 0 || ix < 0 || iy >= xs[1] as i64 || ix >= xs[2] as i64 {
                                continue;
                            }
                            let (iy, ix) = (iy as usize, ix as usize);
                            if depthwise {
                                let q = xv[idx(xs, n, iy, ix, co)] as i128 - zx;
                                acc += q * wv[idx(ws, ky, kx, co, 0)] as i128;
                            } else {
                                for ci in 0..xs[3] {
                                    let q = xv[idx(xs, n, iy, ix, ci)] as i128 - zx;
                                    acc += q * wv[idx(ws, ky, kx, ci, co)] as i128;
                                }
                            }
                        }
                    }
                    acc += bias[co] as i128;
                    let m = px.scale() as f64 * pw.channel(co).0 as f64 / out.scale() as f64;
                    let (mant, shift) = q31(m);
                    let y = shift_round(acc * mant, shift) + zo;
                    codes[idx(os, n, oy, ox, co)] = y.clamp(lo, hi) as i32;
                }
            }
        }
    }
    codes
}

/// Element-wise bound on `|dynamic_conv2d − conv2d|` for float weights `w`
/// and their int8 form `(wq, pw)`: input rounding against the dequantized
/// weights, weight rounding against the true input, plus f32 slack.
pub fn dynamic_error_bound(
    x: &Tensor,
    w: &Tensor,
    wq: &Tensor,
    pw: &QuantParams,
    bias: &[f32],
    spec: &ConvSpec,
) -> Vec<f64> {
    let xs = x.shape();
    let ws = w.shape();
    let xv = x.as_f32().unwrap();
    let wf = w.as_f32().unwrap();
    let wi = wq.int_values().unwrap();
    let (mut lo, mut hi) = (0.0f32, 0.0f32);
    for &v in xv {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let s_in = if hi > lo { (hi as f64 - lo as f64) / 255.0 * (1.0 + 1e-6) } else { 1.0 };
    let depthwise = spec.groups > 1;
    let c_out = if depthwise { ws[2] } else { ws[3] };
    let (oh, pt) = axis_geometry(xs[1], ws[0], spec.stride, spec.padding);
    let (ow, pl) = axis_geometry(xs[2], ws[1], spec.stride, spec.padding);
    let os = [xs[0], oh, ow, c_out];
    let mut out = vec![0.0f64; os.iter().product()];
    for n in 0..xs[0] {
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..c_out {
                    let sw = pw.channel(co).0 as f64;
                    let (mut bound, mut mag) = (0.0f64, bias[co].abs() as f64);
                    for ky in 0..ws[0] {
                        for kx in 0..ws[1] {
                            let iy = (oy * spec.stride + ky) as i64 - pt as i64;
                            let ix = (ox * spec.stride + kx) as i64 - pl as i64;
                            if iy < 0 || ix < 0 || iy >= xs[1] as i64 || ix >= xs[2] as i64 {
                                continue;
                            }
                            let (iy, ix) = (iy as usize, ix as usize);
                            let chans: Vec<(usize, usize)> = if depthwise {
                                vec![(co, idx(ws, ky, kx, co, 0))]
                            } else {
                                (0..xs[3]).map(|ci| (ci, idx(ws, ky, kx, ci, co))).collect()
                            };
                            for (ci, wi_idx) in chans {
                                let xval = xv[idx(xs, n, iy, ix, ci)] as f64;
                                let w_hat = wi[wi_idx] as f64 * sw;
                                let w_true = wf[wi_idx] as f64;
                                bound += 0.5 * s_in * w_hat.abs() + xval.abs() * (w_hat - w_true).abs();
                                mag += (xval * w_true).abs() + s_in * w_hat.abs();
                            }
                        }
                    }
                    out[idx(os, n, oy, ox, co)] = bound * (1.0 + 1e-6) + 1e-6 * mag + 1e-7;
                }
            }
        }
    }
    out
}
