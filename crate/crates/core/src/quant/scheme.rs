use super::calibrate::CalibrationRecord;
use super::kernels::{fixed_activation_params, input_params};
use super::{
    affine_params_from_range, per_channel_symmetric, quantize_tensor, QuantDType, QuantParams,
};
use crate::error::{Error, Result};
use crate::model::{ExecMode, ModelGraph, NodeKind, Partition, WeightEntry};
use crate::tensor::{ActKind, ConvSpec, DType, Tensor};

/// Numeric treatment of one graph partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QuantScheme {
    Float32,
    /// Int8 weights and int8 activations with calibrated params.
    FullInt8,
    /// Int8 weights, float activations quantized on the fly.
    DynamicRange,
    /// Int8 weights, int16 activations.
    Int8wInt16a,
}

impl QuantScheme {
    pub fn code(self) -> u8 {
        match self {
            QuantScheme::Float32 => 0,
            QuantScheme::FullInt8 => 1,
            QuantScheme::DynamicRange => 2,
            QuantScheme::Int8wInt16a => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => QuantScheme::Float32,
            1 => QuantScheme::FullInt8,
            2 => QuantScheme::DynamicRange,
            3 => QuantScheme::Int8wInt16a,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            QuantScheme::Float32 => "float32",
            QuantScheme::FullInt8 => "full_int8",
            QuantScheme::DynamicRange => "dynamic_range",
            QuantScheme::Int8wInt16a => "int8w_int16a",
        }
    }

    /// Activation storage type of static schemes.
    pub fn activation_dtype(self) -> Option<QuantDType> {
        match self {
            QuantScheme::FullInt8 => Some(QuantDType::I8),
            QuantScheme::Int8wInt16a => Some(QuantDType::I16),
            _ => None,
        }
    }
}

/// Scheme of each partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QuantPlan {
    pub backbone: QuantScheme,
    pub head: QuantScheme,
}

impl QuantPlan {
    pub fn float32() -> Self {
        Self {
            backbone: QuantScheme::Float32,
            head: QuantScheme::Float32,
        }
    }

    /// Int8 backbone, dynamic-range head.
    pub fn mixed() -> Self {
        Self {
            backbone: QuantScheme::FullInt8,
            head: QuantScheme::DynamicRange,
        }
    }

    pub fn int16() -> Self {
        Self {
            backbone: QuantScheme::Int8wInt16a,
            head: QuantScheme::Int8wInt16a,
        }
    }

    pub fn full_int8() -> Self {
        Self {
            backbone: QuantScheme::FullInt8,
            head: QuantScheme::FullInt8,
        }
    }

    /// `float32`, `mixed`, `int16` or `int8`.
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "float32" => Some(Self::float32()),
            "mixed" => Some(Self::mixed()),
            "int16" => Some(Self::int16()),
            "int8" => Some(Self::full_int8()),
            _ => None,
        }
    }

    pub fn name(self) -> String {
        for n in ["float32", "mixed", "int16", "int8"] {
            if Self::parse(n) == Some(self) {
                return n.to_string();
            }
        }
        format!("{}+{}", self.backbone.name(), self.head.name())
    }

    pub fn scheme(self, p: Partition) -> QuantScheme {
        match p {
            Partition::Backbone => self.backbone,
            Partition::Head => self.head,
        }
    }
}

fn fold_names(node: &str) -> (String, String) {
    (format!("{node}.fold.weight"), format!("{node}.fold.bias"))
}

/// Sets node modes for `plan` and swaps instance norms in integer
/// partitions for a per-channel affine (a depthwise 1×1 conv). New weight
/// slots are zero-filled.
pub(crate) fn apply_plan_structure(graph: &mut ModelGraph, plan: QuantPlan) -> Result<()> {
    let mut new_weights = Vec::new();
    for node in &mut graph.nodes {
        let scheme = plan.scheme(node.partition);
        node.mode = match (&node.kind, scheme) {
            (NodeKind::Input, _) | (_, QuantScheme::Float32) => ExecMode::Float,
            (NodeKind::Conv { .. }, QuantScheme::DynamicRange) => ExecMode::Dynamic,
            (_, QuantScheme::DynamicRange) => ExecMode::Float,
            _ => ExecMode::Static,
        };
        if node.mode == ExecMode::Static {
            if let NodeKind::InstanceNorm { gamma, .. } = &node.kind {
                let c = graph.weights[gamma.as_str()].tensor.c();
                let (weight, bias) = fold_names(&node.name);
                new_weights.push((weight.clone(), [1, 1, c, 1]));
                new_weights.push((bias.clone(), [1, 1, 1, c]));
                node.kind = NodeKind::Conv {
                    spec: ConvSpec::depthwise(1, 1, c),
                    act: None,
                    weight,
                    bias,
                };
            }
        }
    }
    for (name, shape) in new_weights {
        graph.weights.insert(
            name,
            WeightEntry {
                tensor: Tensor::zeros(shape, DType::F32),
                quant: None,
            },
        );
    }
    graph.plan = plan;
    Ok(())
}

fn calibrated(calib: Option<&CalibrationRecord>, node: &str, dtype: QuantDType) -> Result<QuantParams> {
    let (lo, hi) = calib
        .and_then(|c| c.range(node))
        .ok_or_else(|| Error::MissingCalibration(node.to_string()))?;
    affine_params_from_range(lo, hi, dtype, false)
}

/// Returns a copy of `graph` converted to `plan`.
///
/// Static partitions get per-channel symmetric int8 weights, int32 biases at
/// `s_in · s_w`, and per-tensor activation params from calibration (fixed
/// params for sigmoid/tanh, inherited params for upsampling). Dynamic
/// partitions get int8 conv weights and keep float biases. Topology is never
/// changed. Without `calib`, the graph's own calibration record is used.
pub fn quantize_model(
    graph: &ModelGraph,
    plan: QuantPlan,
    calib: Option<&CalibrationRecord>,
) -> Result<ModelGraph> {
    if graph.is_quantized() {
        return Err(Error::Invalid("graph is already quantized".into()));
    }
    let mut g = graph.clone();
    if plan == QuantPlan::float32() {
        return Ok(g);
    }
    let calib = calib.or(graph.calibration()).cloned();
    let calib = calib.as_ref();
    let norm_kinds: Vec<NodeKind> = graph.nodes.iter().map(|n| n.kind.clone()).collect();
    apply_plan_structure(&mut g, plan)?;

    // folded norm affine: a = γ/√(var+eps), b = β − mean·a
    for (id, old) in norm_kinds.iter().enumerate() {
        let (NodeKind::InstanceNorm { gamma, beta, eps }, NodeKind::Conv { weight, bias, .. }) =
            (old, &g.nodes[id].kind)
        else {
            continue;
        };
        let name = &g.nodes[id].name;
        let stats = calib
            .and_then(|c| c.norm.get(name))
            .ok_or_else(|| Error::MissingCalibration(format!("{name} (norm statistics)")))?;
        let gv = g.weight(gamma)?.tensor.as_f32()?;
        let bv = g.weight(beta)?.tensor.as_f32()?;
        let var = stats.variance();
        if stats.mean.len() != gv.len() {
            return Err(Error::Shape(format!("norm statistics of `{name}` have wrong width")));
        }
        let a: Vec<f32> = (0..gv.len())
            .map(|c| (gv[c] as f64 / (var[c] as f64 + *eps as f64).sqrt()) as f32)
            .collect();
        let b: Vec<f32> = (0..gv.len())
            .map(|c| (bv[c] as f64 - stats.mean[c] as f64 * a[c] as f64) as f32)
            .collect();
        let c = a.len();
        let (weight, bias) = (weight.clone(), bias.clone());
        g.weights.get_mut(&weight).unwrap().tensor = Tensor::from_f32([1, 1, c, 1], a)?;
        g.weights.get_mut(&bias).unwrap().tensor = Tensor::from_f32([1, 1, 1, c], b)?;
    }

    for id in 0..g.nodes.len() {
        let scheme = plan.scheme(g.nodes[id].partition);
        let mode = g.nodes[id].mode;
        if mode == ExecMode::Static {
            let dtype = scheme.activation_dtype().expect("static scheme");
            // float producers feeding this node need edge params
            for k in 0..g.nodes[id].inputs.len() {
                let p = g.nodes[id].inputs[k];
                if g.nodes[p].mode != ExecMode::Static && g.nodes[p].out_params.is_none() {
                    let params = match g.nodes[p].kind {
                        NodeKind::Input => input_params(dtype),
                        _ => calibrated(calib, &g.nodes[p].name, dtype)?,
                    };
                    g.nodes[p].out_params = Some(params);
                }
            }
            let node = &g.nodes[id];
            let out = match &node.kind {
                NodeKind::Act(k @ (ActKind::Sigmoid | ActKind::Tanh)) => {
                    fixed_activation_params(*k, dtype).expect("bounded activation")
                }
                NodeKind::Upsample(_) => g.nodes[node.inputs[0]]
                    .out_params
                    .clone()
                    .expect("producer params set"),
                _ => calibrated(calib, &node.name, dtype)?,
            };
            g.nodes[id].out_params = Some(out);
        }
        if mode == ExecMode::Float {
            continue;
        }
        let NodeKind::Conv {
            spec, weight, bias, ..
        } = g.nodes[id].kind.clone()
        else {
            continue;
        };
        let w = g.weight(&weight)?.tensor.clone();
        let axis = if spec.is_depthwise() { 2 } else { 3 };
        let wp = per_channel_symmetric(&w, axis, QuantDType::I8)?;
        let wq = quantize_tensor(&w, &wp)?;
        if mode == ExecMode::Static {
            let s_in = g.nodes[g.nodes[id].inputs[0]]
                .out_params
                .as_ref()
                .expect("input params set")
                .scale() as f64;
            let b = g.weight(&bias)?.tensor.as_f32()?.to_vec();
            let scales: Vec<f32> = wp.scales.iter().map(|&s| (s_in * s as f64) as f32).collect();
            let codes: Vec<i32> = b
                .iter()
                .zip(&wp.scales)
                .map(|(&v, &s)| {
                    (v as f64 / (s_in * s as f64))
                        .round()
                        .clamp(i32::MIN as f64, i32::MAX as f64) as i32
                })
                .collect();
            let bp = QuantParams {
                dtype: QuantDType::I32,
                axis: Some(3),
                scales: scales.iter().map(|&s| s.max(f32::MIN_POSITIVE)).collect(),
                zero_points: vec![0; codes.len()],
            };
            let c = codes.len();
            g.weights.insert(
                bias,
                WeightEntry {
                    tensor: Tensor::from_i32([1, 1, 1, c], codes)?,
                    quant: Some(bp),
                },
            );
        }
        g.weights.insert(
            weight,
            WeightEntry {
                tensor: wq,
                quant: Some(wp),
            },
        );
    }
    g.calibration = calib.cloned();
    Ok(g)
}
