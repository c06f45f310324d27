//! Loop-nest references for the float kernels and block compositions.

use mqn_core::blocks::{BlockConfig, CaMode, CaWeights, ConvWeights, CsaWeights, IrlbWeights, SaWeights};
use mqn_core::tensor::{ActKind, ConvSpec, Padding};
use mqn_core::Tensor;

use crate::{idx, same_geometry};

/// `(out, pad_before)` along one axis for `spec`'s padding mode.
pub fn axis_geometry(input: usize, kernel: usize, stride: usize, padding: Padding) -> (usize, usize) {
    match padding {
        Padding::Same => same_geometry(input, kernel, stride),
        Padding::Valid => ((input - kernel) / stride + 1, 0),
    }
}

/// Six nested loops over (n, oy, ox, co) × (ky, kx, ci); products are summed
/// in kernel-row, kernel-col, input-channel order starting from 0, bias last.
pub fn naive_conv2d(x: &Tensor, w: &Tensor, bias: &[f32], spec: &ConvSpec) -> Tensor {
    let xs = x.shape();
    let ws = w.shape();
    let (xv, wv) = (x.as_f32().unwrap(), w.as_f32().unwrap());
    let (oh, pt) = axis_geometry(xs[1], ws[0], spec.stride, spec.padding);
    let (ow, pl) = axis_geometry(xs[2], ws[1], spec.stride, spec.padding);
    let os = [xs[0], oh, ow, ws[3]];
    let mut out = vec![0.0f32; os.iter().product()];
    for n in 0..xs[0] {
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..ws[3] {
                    let mut acc = 0.0f32;
                    for ky in 0..ws[0] {
                        for kx in 0..ws[1] {
                            let iy = (oy * spec.stride + ky) as i64 - pt as i64;
                            let ix = (ox * spec.stride + kx) as i64 - pl as i64;
                            if iy < 0 || ix < 0 || iy >= xs[1] as i64 || ix >= xs[2] as i64 {
                                continue;
                            }
                            for ci in 0..xs[3] {
                                let a = xv[idx(xs, n, iy as usize, ix as usize, ci)];
                                let b = wv[idx(ws, ky, kx, ci, co)];
                                acc += a * b;
                            }
                        }
                    }
                    out[idx(os, n, oy, ox, co)] = acc + bias[co];
                }
            }
        }
    }
    Tensor::from_f32(os, out).unwrap()
}

/// Expands `(kh, kw, C, 1)` depthwise weights into a `(kh, kw, C, C)` kernel
/// whose cross-channel entries are zero.
pub fn block_diagonal(dw: &Tensor) -> Tensor {
    let [kh, kw, c, _] = dw.shape();
    let v = dw.as_f32().unwrap();
    let shape = [kh, kw, c, c];
    let mut out = vec![0.0f32; kh * kw * c * c];
    for ky in 0..kh {
        for kx in 0..kw {
            for ch in 0..c {
                out[idx(shape, ky, kx, ch, ch)] = v[idx([kh, kw, c, 1], ky, kx, ch, 0)];
            }
        }
    }
    Tensor::from_f32(shape, out).unwrap()
}

/// Depthwise conv as per-channel single-channel loops.
pub fn naive_depthwise(x: &Tensor, w: &Tensor, bias: &[f32], spec: &ConvSpec) -> Tensor {
    let xs = x.shape();
    let [kh, kw, c, _] = w.shape();
    let (xv, wv) = (x.as_f32().unwrap(), w.as_f32().unwrap());
    let (oh, pt) = axis_geometry(xs[1], kh, spec.stride, spec.padding);
    let (ow, pl) = axis_geometry(xs[2], kw, spec.stride, spec.padding);
    let os = [xs[0], oh, ow, c];
    let mut out = vec![0.0f32; os.iter().product()];
    for n in 0..xs[0] {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f32;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * spec.stride + ky) as i64 - pt as i64;
                            let ix = (ox * spec.stride + kx) as i64 - pl as i64;
                            if iy < 0 || ix < 0 || iy >= xs[1] as i64 || ix >= xs[2] as i64 {
                                continue;
                            }
                            acc += xv[idx(xs, n, iy as usize, ix as usize, ch)]
                                * wv[idx([kh, kw, c, 1], ky, kx, ch, 0)];
                        }
                    }
                    out[idx(os, n, oy, ox, ch)] = acc + bias[ch];
                }
            }
        }
    }
    Tensor::from_f32(os, out).unwrap()
}

pub fn map(x: &Tensor, f: impl Fn(f32) -> f32) -> Tensor {
    Tensor::from_f32(x.shape(), x.as_f32().unwrap().iter().map(|&v| f(v)).collect()).unwrap()
}

pub fn act(x: &Tensor, kind: Option<ActKind>) -> Tensor {
    match kind {
        Some(k) => map(x, |v| k.apply(v)),
        None => x.clone(),
    }
}

pub fn add(a: &Tensor, b: &Tensor) -> Tensor {
    let v = a.as_f32().unwrap().iter().zip(b.as_f32().unwrap()).map(|(x, y)| x + y).collect();
    Tensor::from_f32(a.shape(), v).unwrap()
}

/// `x ⊙ g` where `g` is `[N,1,1,C]`, `[N,H,W,1]` or the same shape as `x`.
pub fn gate(x: &Tensor, g: &Tensor) -> Tensor {
    let xs = x.shape();
    let gs = g.shape();
    let (xv, gv) = (x.as_f32().unwrap(), g.as_f32().unwrap());
    let mut out = vec![0.0f32; xv.len()];
    for n in 0..xs[0] {
        for y in 0..xs[1] {
            for xx in 0..xs[2] {
                for c in 0..xs[3] {
                    let gi = idx(
                        gs,
                        n,
                        if gs[1] == 1 { 0 } else { y },
                        if gs[2] == 1 { 0 } else { xx },
                        if gs[3] == 1 { 0 } else { c },
                    );
                    out[idx(xs, n, y, xx, c)] = xv[idx(xs, n, y, xx, c)] * gv[gi];
                }
            }
        }
    }
    Tensor::from_f32(xs, out).unwrap()
}

/// Spatial mean per channel, summed in f64 in raster order.
pub fn mean_pool(x: &Tensor) -> Tensor {
    let s = x.shape();
    let v = x.as_f32().unwrap();
    let mut out = Vec::with_capacity(s[0] * s[3]);
    for n in 0..s[0] {
        for c in 0..s[3] {
            let mut acc = 0.0f64;
            for y in 0..s[1] {
                for xx in 0..s[2] {
                    acc += v[idx(s, n, y, xx, c)] as f64;
                }
            }
            out.push((acc / (s[1] * s[2]) as f64) as f32);
        }
    }
    Tensor::from_f32([s[0], 1, 1, s[3]], out).unwrap()
}

fn apply(x: &Tensor, w: &ConvWeights, spec: &ConvSpec, a: Option<ActKind>) -> Tensor {
    let y = if spec.groups > 1 {
        naive_depthwise(x, &w.weight, &w.bias, spec)
    } else {
        naive_conv2d(x, &w.weight, &w.bias, spec)
    };
    act(&y, a)
}

pub fn irlb_ref(x: &Tensor, cfg: &BlockConfig, w: &IrlbWeights) -> Tensor {
    let h = match &w.expand {
        Some(e) => apply(x, e, &ConvSpec::pointwise(), Some(cfg.act)),
        None => x.clone(),
    };
    let d = apply(&h, &w.depthwise, &ConvSpec::depthwise(3, cfg.stride, h.c()), Some(cfg.act));
    let p = apply(&d, &w.project, &ConvSpec::pointwise(), None);
    if cfg.stride == 1 && x.c() == cfg.out_channels {
        add(x, &p)
    } else {
        p
    }
}

pub fn sa_ref(x: &Tensor, w: &SaWeights) -> Tensor {
    let g = apply(x, &w.gate, &ConvSpec::pointwise(), Some(ActKind::Sigmoid));
    gate(x, &g)
}

pub fn csa_ref(x: &Tensor, w: &CsaWeights) -> Tensor {
    let s = sa_ref(x, &SaWeights { gate: w.gate.clone() });
    let d = apply(x, &w.depthwise, &ConvSpec::depthwise(3, 1, x.c()), Some(ActKind::Sigmoid));
    gate(&s, &d)
}

pub fn ca_ref(x: &Tensor, w: &CaWeights, _r: usize, _mode: CaMode) -> Tensor {
    let p = mean_pool(x);
    let s = apply(&p, &w.squeeze, &ConvSpec::pointwise(), Some(ActKind::Relu));
    let g = apply(&s, &w.excite, &ConvSpec::pointwise(), Some(ActKind::Sigmoid));
    gate(x, &g)
}

pub fn cbr_ref(x: &Tensor, w: &ConvWeights) -> Tensor {
    apply(x, w, &ConvSpec::pointwise(), Some(ActKind::Relu))
}
