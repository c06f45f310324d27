//! Float64 simulation of a (possibly quantized) model graph.
//!
//! Every node is evaluated in f64 on real values. Wherever the production
//! executor produces integer codes, the simulator rounds the real result
//! onto the same grid (same params, same half-away rounding, same clamp),
//! so the only thing it leaves out is the fixed-point arithmetic itself.

use mqn_core::model::{ExecMode, ModelGraph, NodeKind};
use mqn_core::quant::{affine_params_from_range, QuantDType, QuantParams};
use mqn_core::tensor::{ActKind, ConvSpec};
use mqn_core::Tensor;

use crate::conv::axis_geometry;
use crate::{idx, round_away};

#[derive(Debug, Clone)]
struct Val {
    data: Vec<f64>,
    shape: [usize; 4],
    quant: Option<QuantParams>,
}

fn snap(x: f64, p: &QuantParams) -> f64 {
    let s = p.scale() as f64;
    let z = p.zero_point() as f64;
    let q = (round_away(x / s) + z).clamp(p.qmin() as f64, p.qmax() as f64);
    s * (q - z)
}

fn snap_all(v: Vec<f64>, shape: [usize; 4], p: &QuantParams) -> Val {
    Val {
        data: v.into_iter().map(|x| snap(x, p)).collect(),
        shape,
        quant: Some(p.clone()),
    }
}

pub fn act64(kind: ActKind, x: f64) -> f64 {
    match kind {
        ActKind::Relu => x.max(0.0),
        ActKind::Relu6 => x.clamp(0.0, 6.0),
        ActKind::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        ActKind::Tanh => x.tanh(),
    }
}

/// f64 convolution (standard or depthwise); `w` is laid out like the
/// weight tensor.
pub fn conv64(
    x: &[f64],
    xs: [usize; 4],
    w: &[f64],
    ws: [usize; 4],
    bias: &[f64],
    spec: &ConvSpec,
) -> (Vec<f64>, [usize; 4]) {
    let depthwise = spec.groups > 1;
    let c_out = if depthwise { ws[2] } else { ws[3] };
    let (oh, pt) = axis_geometry(xs[1], ws[0], spec.stride, spec.padding);
    let (ow, pl) = axis_geometry(xs[2], ws[1], spec.stride, spec.padding);
    let os = [xs[0], oh, ow, c_out];
    let mut out = vec![0.0; os.iter().product()];
    for n in 0..xs[0] {
        for oy in 0..oh {
            for ox in 0..ow {
                let o = idx(os, n, oy, ox, 0);
                out[o..o + c_out].copy_from_slice(bias);
                for ky in 0..ws[0] {
                    let iy = (oy * spec.stride + ky) as i64 - pt as i64;
                    if iy < 0 || iy >= xs[1] as i64 {
                        continue;
                    }
                    for kx in 0..ws[1] {
                        let ix = (ox * spec.stride + kx) as i64 - pl as i64;
                        if ix < 0 || ix >= xs[2] as i64 {
                            continue;
                        }
                        let src = idx(xs, n, iy as usize, ix as usize, 0);
                        if depthwise {
                            for c in 0..c_out {
                                out[o + c] += x[src + c] * w[idx(ws, ky, kx, c, 0)];
                            }
                        } else {
                            for ci in 0..xs[3] {
                                let xv = x[src + ci];
                                let wb = idx(ws, ky, kx, ci, 0);
                                for co in 0..c_out {
                                    out[o + co] += xv * w[wb + co];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (out, os)
}

fn f64s(t: &Tensor) -> Vec<f64> {
    t.as_f32().unwrap().iter().map(|&v| v as f64).collect()
}

/// Per-channel scales of `p`, expanded over the output channel of `ws`.
fn dequant_weights(t: &Tensor, p: &QuantParams) -> Vec<f64> {
    let ws = t.shape();
    let axis = p.axis.unwrap_or(3);
    let stride: usize = ws[axis + 1..].iter().product();
    t.int_values()
        .unwrap()
        .iter()
        .enumerate()
        .map(|(i, &q)| {
            let ch = if p.is_per_channel() { (i / stride) % ws[axis] } else { 0 };
            let (s, z) = p.channel(ch);
            s as f64 * (q - z) as f64
        })
        .collect()
}

fn binary(a: &Val, b: &Val, f: impl Fn(f64, f64) -> f64) -> (Vec<f64>, [usize; 4]) {
    let s = a.shape;
    let g = b.shape;
    let mut out = Vec::with_capacity(a.data.len());
    for n in 0..s[0] {
        for y in 0..s[1] {
            for x in 0..s[2] {
                for c in 0..s[3] {
                    let gi = idx(
                        g,
                        n,
                        if g[1] == 1 { 0 } else { y },
                        if g[2] == 1 { 0 } else { x },
                        if g[3] == 1 { 0 } else { c },
                    );
                    out.push(f(a.data[idx(s, n, y, x, c)], b.data[gi]));
                }
            }
        }
    }
    (out, s)
}

fn concat(a: &Val, b: &Val) -> (Vec<f64>, [usize; 4]) {
    let (ca, cb) = (a.shape[3], b.shape[3]);
    let pixels = a.data.len() / ca;
    let mut out = Vec::with_capacity(a.data.len() + b.data.len());
    for p in 0..pixels {
        out.extend_from_slice(&a.data[p * ca..(p + 1) * ca]);
        out.extend_from_slice(&b.data[p * cb..(p + 1) * cb]);
    }
    let mut s = a.shape;
    s[3] = ca + cb;
    (out, s)
}

fn upsample(a: &Val, f: usize) -> (Vec<f64>, [usize; 4]) {
    let s = a.shape;
    let os = [s[0], s[1] * f, s[2] * f, s[3]];
    let mut out = vec![0.0; os.iter().product()];
    for n in 0..s[0] {
        for y in 0..os[1] {
            for x in 0..os[2] {
                for c in 0..s[3] {
                    out[idx(os, n, y, x, c)] = a.data[idx(s, n, y / f, x / f, c)];
                }
            }
        }
    }
    (out, os)
}

fn mean_pool(a: &Val) -> (Vec<f64>, [usize; 4]) {
    let s = a.shape;
    let mut out = vec![0.0; s[0] * s[3]];
    let cnt = (s[1] * s[2]) as f64;
    for n in 0..s[0] {
        for p in 0..s[1] * s[2] {
            for c in 0..s[3] {
                out[n * s[3] + c] += a.data[(n * s[1] * s[2] + p) * s[3] + c] / cnt;
            }
        }
    }
    (out, [s[0], 1, 1, s[3]])
}

fn instance_norm(a: &Val, gamma: &[f64], beta: &[f64], eps: f64) -> (Vec<f64>, [usize; 4]) {
    let s = a.shape;
    let hw = s[1] * s[2];
    let mut out = a.data.clone();
    for n in 0..s[0] {
        for c in 0..s[3] {
            let at = |p: usize| a.data[(n * hw + p) * s[3] + c];
            let mean = (0..hw).map(at).sum::<f64>() / hw as f64;
            let var = (0..hw).map(|p| (at(p) - mean).powi(2)).sum::<f64>() / hw as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for p in 0..hw {
                out[(n * hw + p) * s[3] + c] = (at(p) - mean) * inv * gamma[c] + beta[c];
            }
        }
    }
    (out, s)
}

/// Runs `graph` on `input` in f64 and returns the output as f32.
pub fn simulate(graph: &ModelGraph, input: &Tensor) -> Tensor {
    let nodes = graph.nodes();
    let mut vals: Vec<Option<Val>> = vec![None; nodes.len()];
    for (id, node) in nodes.iter().enumerate() {
        let arg = |k: usize| vals[node.inputs[k]].as_ref().expect("topological order");
        // the operand a static node sees: float producers are quantized
        // with their own output params
        let qarg = |k: usize| -> Val {
            let v = arg(k);
            match &v.quant {
                Some(_) => v.clone(),
                None => {
                    let p = nodes[node.inputs[k]]
                        .out_params
                        .as_ref()
                        .expect("float producer of a static node has params");
                    snap_all(v.data.clone(), v.shape, p)
                }
            }
        };
        let v = match (&node.kind, node.mode) {
            (NodeKind::Input, _) => Val {
                data: f64s(input),
                shape: input.shape(),
                quant: None,
            },
            (NodeKind::Conv { spec, act, weight, bias }, ExecMode::Static) => {
                let x = qarg(0);
                let out = node.out_params.as_ref().unwrap();
                let w = graph.weight(weight).unwrap();
                let wp = w.quant.as_ref().unwrap();
                let wr = dequant_weights(&w.tensor, wp);
                let s_in = x.quant.as_ref().unwrap().scale() as f64;
                let bq = graph.weight(bias).unwrap().tensor.as_i32().unwrap();
                let b: Vec<f64> = bq
                    .iter()
                    .enumerate()
                    .map(|(c, &q)| q as f64 * s_in * wp.channel(c).0 as f64)
                    .collect();
                let (y, s) = conv64(&x.data, x.shape, &wr, w.tensor.shape(), &b, spec);
                let y = y.into_iter().map(|v| act.map_or(v, |a| act64(a, v))).collect();
                snap_all(y, s, out)
            }
            (NodeKind::Conv { spec, act, weight, bias }, mode) => {
                let x = arg(0);
                let w = graph.weight(weight).unwrap();
                let b = f64s(&graph.weight(bias).unwrap().tensor);
                let (y, s) = if mode == ExecMode::Dynamic {
                    let wp = w.quant.as_ref().unwrap();
                    let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
                    for &v in &x.data {
                        lo = lo.min(v as f32);
                        hi = hi.max(v as f32);
                    }
                    let pin = affine_params_from_range(lo, hi, QuantDType::I8, false).unwrap();
                    let xq: Vec<f64> = x.data.iter().map(|&v| snap(v as f32 as f64, &pin)).collect();
                    conv64(&xq, x.shape, &dequant_weights(&w.tensor, wp), w.tensor.shape(), &b, spec)
                } else {
                    conv64(&x.data, x.shape, &f64s(&w.tensor), w.tensor.shape(), &b, spec)
                };
                Val {
                    data: y.into_iter().map(|v| act.map_or(v, |a| act64(a, v))).collect(),
                    shape: s,
                    quant: None,
                }
            }
            (kind, ExecMode::Static) => {
                let out = node.out_params.as_ref().unwrap();
                let (y, s) = match kind {
                    NodeKind::Act(k) => {
                        let x = qarg(0);
                        (x.data.iter().map(|&v| act64(*k, v)).collect(), x.shape)
                    }
                    NodeKind::Add => binary(&qarg(0), &qarg(1), |a, b| a + b),
                    NodeKind::Mul => binary(&qarg(0), &qarg(1), |a, b| a * b),
                    NodeKind::Concat => concat(&qarg(0), &qarg(1)),
                    NodeKind::Upsample(f) => upsample(&qarg(0), *f),
                    NodeKind::GlobalAvgPool => mean_pool(&qarg(0)),
                    other => panic!("no static simulation for {}", other.name()),
                };
                snap_all(y, s, out)
            }
            (kind, _) => {
                let (y, s) = match kind {
                    NodeKind::Act(k) => {
                        let x = arg(0);
                        (x.data.iter().map(|&v| act64(*k, v)).collect(), x.shape)
                    }
                    NodeKind::Add => binary(arg(0), arg(1), |a, b| a + b),
                    NodeKind::Mul => binary(arg(0), arg(1), |a, b| a * b),
                    NodeKind::Concat => concat(arg(0), arg(1)),
                    NodeKind::Upsample(f) => upsample(arg(0), *f),
                    NodeKind::GlobalAvgPool => mean_pool(arg(0)),
                    NodeKind::InstanceNorm { gamma, beta, eps } => instance_norm(
                        arg(0),
                        &f64s(&graph.weight(gamma).unwrap().tensor),
                        &f64s(&graph.weight(beta).unwrap().tensor),
                        *eps as f64,
                    ),
                    NodeKind::Input | NodeKind::Conv { .. } => unreachable!(),
                };
                Val {
                    data: y,
                    shape: s,
                    quant: None,
                }
            }
        };
        vals[id] = Some(v);
    }
    let out = vals[graph.output()].take().unwrap();
    Tensor::from_f32(out.shape, out.data.iter().map(|&v| v as f32).collect()).unwrap()
}
