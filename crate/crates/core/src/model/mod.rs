//! The full network as a graph of primitive layer nodes.
//!
//! A graph is built from an [`MqnConfig`], filled with weights, optionally
//! calibrated and quantized, and executed by the functions in [`exec`].

mod build;
mod config;
mod count;
mod exec;
mod weights_io;

use std::collections::BTreeMap;

pub use build::build_mqn;
pub use config::{make_divisible, MqnConfig};
pub use count::{count_params_macs, infer_shapes, layer_table, LayerInfo};
pub use exec::{
    forward, forward_backbone, forward_float, forward_mixed, forward_observed, forward_padded,
    reflect_pad, Value,
};
pub use weights_io::{load_weights, save_weights, MAGIC, VERSION};

use crate::blocks::ConvWeights;
use crate::error::{Error, Result};
use crate::quant::{CalibrationRecord, QuantParams, QuantPlan};
use crate::tensor::{ActKind, ConvSpec, DType, Tensor};

pub type NodeId = usize;

/// Side of the backbone/head split a node belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Partition {
    Backbone,
    Head,
}

impl Partition {
    pub fn name(self) -> &'static str {
        match self {
            Partition::Backbone => "backbone",
            Partition::Head => "head",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Input,
    /// Standard or depthwise (`spec.groups > 1`) conv with an optional fused
    /// ReLU/ReLU6.
    Conv {
        spec: ConvSpec,
        act: Option<ActKind>,
        weight: String,
        bias: String,
    },
    InstanceNorm {
        gamma: String,
        beta: String,
        eps: f32,
    },
    Act(ActKind),
    Add,
    /// `inputs[0] ⊙ inputs[1]`, the second input being the (broadcast) gate.
    Mul,
    Upsample(usize),
    Concat,
    GlobalAvgPool,
}

impl NodeKind {
    pub fn name(&self) -> &'static str {
        match self {
            NodeKind::Input => "input",
            NodeKind::Conv { spec, .. } if spec.is_depthwise() => "dwconv",
            NodeKind::Conv { .. } => "conv",
            NodeKind::InstanceNorm { .. } => "instnorm",
            NodeKind::Act(_) => "act",
            NodeKind::Add => "add",
            NodeKind::Mul => "mul",
            NodeKind::Upsample(_) => "upsample",
            NodeKind::Concat => "concat",
            NodeKind::GlobalAvgPool => "gap",
        }
    }

    /// Names of the weight tensors this node reads.
    pub fn weight_names(&self) -> Vec<&str> {
        match self {
            NodeKind::Conv { weight, bias, .. } => vec![weight, bias],
            NodeKind::InstanceNorm { gamma, beta, .. } => vec![gamma, beta],
            _ => vec![],
        }
    }
}

/// How a node is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExecMode {
    Float,
    /// Integer kernel producing codes under the node's `out_params`.
    Static,
    /// Int8 weights, float activations (convs only).
    Dynamic,
}

impl ExecMode {
    pub fn name(self) -> &'static str {
        match self {
            ExecMode::Float => "float",
            ExecMode::Static => "static",
            ExecMode::Dynamic => "dynamic",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub name: String,
    pub kind: NodeKind,
    pub inputs: Vec<NodeId>,
    pub partition: Partition,
    pub mode: ExecMode,
    /// Quantization of this node's output edge, set when it runs statically
    /// or feeds a static consumer.
    pub out_params: Option<QuantParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightEntry {
    pub tensor: Tensor,
    pub quant: Option<QuantParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    pub(crate) config: MqnConfig,
    pub(crate) nodes: Vec<Node>,
    pub(crate) weights: BTreeMap<String, WeightEntry>,
    pub(crate) boundary: NodeId,
    pub(crate) output: NodeId,
    pub(crate) plan: QuantPlan,
    pub(crate) calibration: Option<CalibrationRecord>,
}

impl ModelGraph {
    pub fn config(&self) -> &MqnConfig {
        &self.config
    }

    /// Nodes in topological order; node 0 is the input.
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn weights(&self) -> &BTreeMap<String, WeightEntry> {
        &self.weights
    }

    pub fn weight(&self, name: &str) -> Result<&WeightEntry> {
        self.weights
            .get(name)
            .ok_or_else(|| Error::MissingWeight(name.to_string()))
    }

    /// Last backbone node; its output is the only value the head reads from
    /// the backbone besides the graph input.
    pub fn boundary(&self) -> NodeId {
        self.boundary
    }

    pub fn output(&self) -> NodeId {
        self.output
    }

    pub fn plan(&self) -> QuantPlan {
        self.plan
    }

    pub fn is_quantized(&self) -> bool {
        self.plan != QuantPlan::float32()
    }

    pub fn calibration(&self) -> Option<&CalibrationRecord> {
        self.calibration.as_ref()
    }

    pub fn set_calibration(&mut self, record: CalibrationRecord) {
        self.calibration = Some(record);
    }

    /// Replaces a float weight with one of the same shape.
    pub fn set_weight(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        if self.is_quantized() {
            return Err(Error::Invalid("weights of a quantized graph are frozen".into()));
        }
        let entry = self
            .weights
            .get_mut(name)
            .ok_or_else(|| Error::MissingWeight(name.to_string()))?;
        if tensor.shape() != entry.tensor.shape() || tensor.dtype() != DType::F32 {
            return Err(Error::Shape(format!(
                "`{name}` expects f32 {:?}, got {:?} {:?}",
                entry.tensor.shape(),
                tensor.dtype(),
                tensor.shape()
            )));
        }
        entry.tensor = tensor;
        Ok(())
    }

    /// Float weights and bias of a conv node.
    pub fn conv_weights(&self, node: &str) -> Result<ConvWeights> {
        let id = self
            .find(node)
            .ok_or_else(|| Error::Invalid(format!("no node named `{node}`")))?;
        match &self.nodes[id].kind {
            NodeKind::Conv { weight, bias, .. } => Ok(ConvWeights {
                weight: self.weight(weight)?.tensor.clone(),
                bias: self.weight(bias)?.tensor.as_f32()?.to_vec(),
            }),
            _ => Err(Error::Invalid(format!("`{node}` is not a conv"))),
        }
    }

    /// Every node that the head computes, in order.
    pub fn head_nodes(&self) -> impl Iterator<Item = (NodeId, &Node)> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.partition == Partition::Head)
    }

    /// `ancestors[i]` is true when node `i` contributes to `target`.
    pub fn ancestors(&self, target: NodeId) -> Vec<bool> {
        let mut keep = vec![false; self.nodes.len()];
        keep[target] = true;
        for id in (0..=target).rev() {
            if keep[id] {
                for &i in &self.nodes[id].inputs {
                    keep[i] = true;
                }
            }
        }
        keep
    }
}
