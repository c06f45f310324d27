use super::{ExecMode, ModelGraph, Node, NodeId, NodeKind};
use crate::error::{Error, Result};
use crate::hdr::LdrImage;
use crate::quant::{
    dequantize_tensor, dynamic_conv2d, quantize_tensor, quantized_activation, quantized_add,
    quantized_avg_pool, quantized_concat, quantized_conv2d_fused, quantized_mul,
    quantized_upsample, requantize, QuantParams,
};
use crate::tensor::{
    activation, add, concat_channels, conv2d, depthwise_conv2d, global_avg_pool, instance_norm,
    mul_broadcast, upsample_nearest, Tensor,
};

/// A node output: float activations or integer codes with their params.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Float(Tensor),
    Quant(Tensor, QuantParams),
}

impl Value {
    pub fn shape(&self) -> [usize; 4] {
        match self {
            Value::Float(t) | Value::Quant(t, _) => t.shape(),
        }
    }

    pub fn to_f32(&self) -> Result<Tensor> {
        match self {
            Value::Float(t) => Ok(t.clone()),
            Value::Quant(q, p) => dequantize_tensor(q, p),
        }
    }

    pub fn into_f32(self) -> Result<Tensor> {
        match self {
            Value::Float(t) => Ok(t),
            Value::Quant(q, p) => dequantize_tensor(&q, &p),
        }
    }
}

fn float_arg(v: &Value) -> Result<std::borrow::Cow<'_, Tensor>> {
    Ok(match v {
        Value::Float(t) => std::borrow::Cow::Borrowed(t),
        Value::Quant(q, p) => std::borrow::Cow::Owned(dequantize_tensor(q, p)?),
    })
}

fn quant_arg<'a>(graph: &'a ModelGraph, producer: NodeId, v: &'a Value) -> Result<(std::borrow::Cow<'a, Tensor>, &'a QuantParams)> {
    match v {
        Value::Quant(q, p) => Ok((std::borrow::Cow::Borrowed(q), p)),
        Value::Float(t) => {
            let node = graph.node(producer);
            let p = node
                .out_params
                .as_ref()
                .ok_or_else(|| Error::MissingCalibration(node.name.clone()))?;
            Ok((std::borrow::Cow::Owned(quantize_tensor(t, p)?), p))
        }
    }
}

fn check_input(graph: &ModelGraph, input: &Tensor) -> Result<()> {
    let [n, h, w, c] = input.shape();
    if c != 3 || n == 0 || h == 0 || w == 0 {
        return Err(Error::Shape(format!(
            "network input must be N×H×W×3, got {:?}",
            input.shape()
        )));
    }
    if h % 32 != 0 || w % 32 != 0 {
        return Err(Error::Shape(format!(
            "input {h}×{w} is not a multiple of 32 (use forward_padded)"
        )));
    }
    input.as_f32()?;
    let _ = graph;
    Ok(())
}

fn eval_node(graph: &ModelGraph, id: NodeId, input: &Tensor, args: &[&Value]) -> Result<Value> {
    let node: &Node = graph.node(id);
    let static_out = || {
        node.out_params
            .as_ref()
            .ok_or_else(|| Error::MissingCalibration(node.name.clone()))
    };
    match (node.mode, &node.kind) {
        (_, NodeKind::Input) => Ok(Value::Float(input.clone())),
        (ExecMode::Static, kind) => {
            let out = static_out()?;
            let q = |k: usize| quant_arg(graph, node.inputs[k], args[k]);
            let codes = match kind {
                NodeKind::Conv {
                    spec,
                    act,
                    weight,
                    bias,
                } => {
                    let (x, px) = q(0)?;
                    let w = graph.weight(weight)?;
                    let wp = w.quant.as_ref().ok_or_else(|| Error::MissingCalibration(weight.clone()))?;
                    let b = graph.weight(bias)?.tensor.as_i32()?;
                    quantized_conv2d_fused(&x, px, &w.tensor, wp, b, spec, out, *act)?
                }
                NodeKind::Act(kind) => {
                    let (x, px) = q(0)?;
                    quantized_activation(&x, px, *kind, out)?
                }
                NodeKind::Add => {
                    let ((a, pa), (b, pb)) = (q(0)?, q(1)?);
                    quantized_add(&a, pa, &b, pb, out)?
                }
                NodeKind::Mul => {
                    let ((a, pa), (b, pb)) = (q(0)?, q(1)?);
                    quantized_mul(&a, pa, &b, pb, out)?
                }
                NodeKind::Concat => {
                    let ((a, pa), (b, pb)) = (q(0)?, q(1)?);
                    quantized_concat(&a, pa, &b, pb, out)?
                }
                NodeKind::GlobalAvgPool => {
                    let (x, px) = q(0)?;
                    quantized_avg_pool(&x, px, out)?
                }
                NodeKind::Upsample(f) => {
                    let (x, px) = q(0)?;
                    let up = quantized_upsample(&x, *f)?;
                    if px == out {
                        up
                    } else {
                        requantize(&up, px, out)?
                    }
                }
                NodeKind::InstanceNorm { .. } => {
                    return Err(Error::Unsupported {
                        node: node.name.clone(),
                        reason: "instance norm has no integer kernel".into(),
                    })
                }
                NodeKind::Input => unreachable!(),
            };
            Ok(Value::Quant(codes, out.clone()))
        }
        (mode, kind) => {
            let f = |k: usize| float_arg(args[k]);
            let t = match kind {
                NodeKind::Conv {
                    spec,
                    act,
                    weight,
                    bias,
                } => {
                    let x = f(0)?;
                    let w = graph.weight(weight)?;
                    let y = if mode == ExecMode::Dynamic {
                        let wp = w.quant.as_ref().ok_or_else(|| Error::Unsupported {
                            node: node.name.clone(),
                            reason: "dynamic mode needs int8 weights".into(),
                        })?;
                        let b = graph.weight(bias)?.tensor.as_f32()?;
                        dynamic_conv2d(&x, &w.tensor, wp, b, spec)?
                    } else {
                        let b = graph.weight(bias)?.tensor.as_f32()?;
                        if spec.is_depthwise() {
                            depthwise_conv2d(&x, &w.tensor, b, spec)?
                        } else {
                            conv2d(&x, &w.tensor, b, spec)?
                        }
                    };
                    match act {
                        Some(a) => activation(&y, *a)?,
                        None => y,
                    }
                }
                NodeKind::InstanceNorm { gamma, beta, eps } => instance_norm(
                    &*f(0)?,
                    graph.weight(gamma)?.tensor.as_f32()?,
                    graph.weight(beta)?.tensor.as_f32()?,
                    *eps,
                )?,
                NodeKind::Act(kind) => activation(&*f(0)?, *kind)?,
                NodeKind::Add => add(&*f(0)?, &*f(1)?)?,
                NodeKind::Mul => mul_broadcast(&*f(0)?, &*f(1)?)?,
                NodeKind::Concat => concat_channels(&*f(0)?, &*f(1)?)?,
                NodeKind::GlobalAvgPool => global_avg_pool(&*f(0)?)?,
                NodeKind::Upsample(k) => upsample_nearest(&*f(0)?, *k)?,
                NodeKind::Input => unreachable!(),
            };
            Ok(Value::Float(t))
        }
    }
}

/// Runs every node contributing to `target` and hands each output to
/// `observer`. Intermediate values are dropped as soon as their last
/// consumer has run.
pub fn forward_observed(
    graph: &ModelGraph,
    input: &Tensor,
    target: NodeId,
    observer: &mut dyn FnMut(NodeId, &Value) -> Result<()>,
) -> Result<Value> {
    check_input(graph, input)?;
    let live = graph.ancestors(target);
    let mut uses = vec![0usize; graph.nodes.len()];
    for (id, node) in graph.nodes.iter().enumerate() {
        if live[id] {
            for &i in &node.inputs {
                uses[i] += 1;
            }
        }
    }
    let mut values: Vec<Option<Value>> = vec![None; graph.nodes.len()];
    for id in 0..=target {
        if !live[id] {
            continue;
        }
        let node = graph.node(id);
        let v = {
            let args: Vec<&Value> = node
                .inputs
                .iter()
                .map(|&i| values[i].as_ref().expect("topological order"))
                .collect();
            eval_node(graph, id, input, &args)?
        };
        observer(id, &v)?;
        for &i in &node.inputs {
            uses[i] -= 1;
            if uses[i] == 0 {
                values[i] = None;
            }
        }
        values[id] = Some(v);
    }
    Ok(values[target].take().expect("target evaluated"))
}

/// Runs the graph in whatever modes its nodes carry.
pub fn forward(graph: &ModelGraph, input: &Tensor) -> Result<Tensor> {
    forward_observed(graph, input, graph.output(), &mut |_, _| Ok(()))?.into_f32()
}

/// Float forward pass of an unquantized graph.
pub fn forward_float(graph: &ModelGraph, input: &Tensor) -> Result<Tensor> {
    if graph.is_quantized() {
        return Err(Error::Invalid(
            "graph is quantized; use forward_mixed".into(),
        ));
    }
    forward(graph, input)
}

/// Forward pass of a quantized graph on an 8-bit image.
pub fn forward_mixed(graph: &ModelGraph, input: &LdrImage) -> Result<Tensor> {
    if !graph.is_quantized() {
        return Err(Error::Invalid("graph is not quantized".into()));
    }
    forward(graph, &input.to_tensor())
}

/// The value on the backbone/head boundary edge, computed without touching
/// any head node.
pub fn forward_backbone(graph: &ModelGraph, input: &Tensor) -> Result<Value> {
    forward_observed(graph, input, graph.boundary(), &mut |_, _| Ok(()))
}

#[inline]
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Pads H and W at the bottom/right by mirror reflection up to a multiple
/// of `multiple`.
pub fn reflect_pad(input: &Tensor, multiple: usize) -> Result<Tensor> {
    let [n, h, w, c] = input.shape();
    let (ph, pw) = (h.div_ceil(multiple) * multiple, w.div_ceil(multiple) * multiple);
    if (ph, pw) == (h, w) {
        return Ok(input.clone());
    }
    let src = input.as_f32()?;
    let mut out = Vec::with_capacity(n * ph * pw * c);
    for b in 0..n {
        for y in 0..ph {
            let sy = reflect(y, h);
            for x in 0..pw {
                let sx = reflect(x, w);
                let o = ((b * h + sy) * w + sx) * c;
                out.extend_from_slice(&src[o..o + c]);
            }
        }
    }
    Tensor::from_f32([n, ph, pw, c], out)
}

fn crop(t: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let [n, th, tw, c] = t.shape();
    if (th, tw) == (h, w) {
        return Ok(t.clone());
    }
    let src = t.as_f32()?;
    let mut out = Vec::with_capacity(n * h * w * c);
    for b in 0..n {
        for y in 0..h {
            let o = ((b * th + y) * tw) * c;
            out.extend_from_slice(&src[o..o + w * c]);
        }
    }
    Tensor::from_f32([n, h, w, c], out)
}

/// [`forward`] on any spatial size: reflect-pad to a multiple of 32, run,
/// crop back.
pub fn forward_padded(graph: &ModelGraph, input: &Tensor) -> Result<Tensor> {
    let padded = reflect_pad(input, 32)?;
    let out = forward(graph, &padded)?;
    crop(&out, input.h(), input.w())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_indices() {
        let r: Vec<usize> = (0..7).map(|i| reflect(i, 3)).collect();
        assert_eq!(r, vec![0, 1, 2, 1, 0, 1, 2]);
        assert_eq!(reflect(5, 1), 0);
    }

    #[test]
    fn pad_then_crop() {
        let t = Tensor::from_f32([1, 2, 3, 1], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let p = reflect_pad(&t, 4).unwrap();
        assert_eq!(p.shape(), [1, 4, 4, 1]);
        assert_eq!(&p.as_f32().unwrap()[..4], &[1., 2., 3., 2.]);
        assert_eq!(&p.as_f32().unwrap()[8..12], &[1., 2., 3., 2.]);
        assert_eq!(crop(&p, 2, 3).unwrap(), t);
    }
}
