use super::{ModelGraph, NodeKind};
use crate::error::{Error, Result};
use crate::tensor::conv_mac_count;
use crate::DType;

/// One row of the per-layer summary.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerInfo {
    pub name: String,
    pub kind: &'static str,
    pub partition: &'static str,
    pub mode: &'static str,
    pub out_shape: [usize; 4],
    pub params: u64,
    pub macs: u64,
    /// dtype of the main weight tensor, if any
    pub weight_dtype: Option<DType>,
}

/// Output shape of every node for an `n × h × w × 3` input, without running
/// any kernel.
pub fn infer_shapes(graph: &ModelGraph, h: usize, w: usize) -> Result<Vec<[usize; 4]>> {
    let mut shapes: Vec<[usize; 4]> = Vec::with_capacity(graph.nodes.len());
    for node in &graph.nodes {
        let ins: Vec<[usize; 4]> = node.inputs.iter().map(|&i| shapes[i]).collect();
        let s = match &node.kind {
            NodeKind::Input => [1, h, w, 3],
            NodeKind::Conv { spec, weight, .. } => {
                let [_, ih, iw, _] = ins[0];
                let g = spec.geometry(ih, iw)?;
                let wt = graph.weight(weight)?.tensor.shape();
                let cout = if spec.is_depthwise() { wt[2] } else { wt[3] };
                [1, g.out_h, g.out_w, cout]
            }
            NodeKind::Concat => {
                let (a, b) = (ins[0], ins[1]);
                if a[..3] != b[..3] {
                    return Err(Error::Shape(format!("`{}`: {a:?} vs {b:?}", node.name)));
                }
                [1, a[1], a[2], a[3] + b[3]]
            }
            NodeKind::GlobalAvgPool => [1, 1, 1, ins[0][3]],
            NodeKind::Upsample(f) => [1, ins[0][1] * f, ins[0][2] * f, ins[0][3]],
            _ => ins[0],
        };
        shapes.push(s);
    }
    Ok(shapes)
}

/// Per-node parameter and MAC breakdown at an `h × w` input.
pub fn layer_table(graph: &ModelGraph, h: usize, w: usize) -> Result<Vec<LayerInfo>> {
    let shapes = infer_shapes(graph, h, w)?;
    graph
        .nodes
        .iter()
        .enumerate()
        .map(|(id, node)| {
            let mut params = 0;
            for name in node.kind.weight_names() {
                params += graph.weight(name)?.tensor.len() as u64;
            }
            let (macs, weight_dtype) = match &node.kind {
                NodeKind::Conv { spec, weight, .. } => {
                    let cin = shapes[node.inputs[0]][3];
                    let [_, oh, ow, cout] = shapes[id];
                    (
                        conv_mac_count(spec, cin, cout, oh, ow),
                        Some(graph.weight(weight)?.tensor.dtype()),
                    )
                }
                NodeKind::InstanceNorm { gamma, .. } => (0, Some(graph.weight(gamma)?.tensor.dtype())),
                _ => (0, None),
            };
            Ok(LayerInfo {
                name: node.name.clone(),
                kind: node.kind.name(),
                partition: node.partition.name(),
                mode: node.mode.name(),
                out_shape: shapes[id],
                params,
                macs,
                weight_dtype,
            })
        })
        .collect()
}

/// `(parameters, MACs)` summed over nodes. Element-wise ops count no MACs.
pub fn count_params_macs(graph: &ModelGraph, h: usize, w: usize) -> Result<(u64, u64)> {
    let rows = layer_table(graph, h, w)?;
    Ok(rows
        .iter()
        .fold((0, 0), |(p, m), r| (p + r.params, m + r.macs)))
}
