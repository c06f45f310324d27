use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::make_divisible;
use super::{ExecMode, ModelGraph, MqnConfig, Node, NodeId, NodeKind, Partition, WeightEntry};
use crate::blocks::AttentionKind;
use crate::error::{Error, Result};
use crate::quant::QuantPlan;
use crate::tensor::{ActKind, ConvSpec, DType, Tensor};

/// MobileNetV2 inverted residual settings `(t, c, n, s)` at width 1.
const MBV2: [(usize, f32, usize, usize); 7] = [
    (1, 16.0, 1, 1),
    (6, 24.0, 2, 2),
    (6, 32.0, 3, 2),
    (6, 64.0, 4, 2),
    (6, 96.0, 3, 1),
    (6, 160.0, 3, 2),
    (6, 320.0, 1, 1),
];

struct Builder {
    nodes: Vec<Node>,
    weights: BTreeMap<String, WeightEntry>,
    /// (channels, spatial divisor) of each node output
    info: Vec<(usize, usize)>,
    partition: Partition,
}

impl Builder {
    fn push(&mut self, name: &str, kind: NodeKind, inputs: Vec<NodeId>, ch: usize, div: usize) -> NodeId {
        self.nodes.push(Node {
            name: name.to_string(),
            kind,
            inputs,
            partition: self.partition,
            mode: ExecMode::Float,
            out_params: None,
        });
        self.info.push((ch, div));
        self.nodes.len() - 1
    }

    fn param(&mut self, name: String, shape: [usize; 4]) -> String {
        self.weights.insert(
            name.clone(),
            WeightEntry {
                tensor: Tensor::zeros(shape, DType::F32),
                quant: None,
            },
        );
        name
    }

    fn channels(&self, id: NodeId) -> usize {
        self.info[id].0
    }

    fn div(&self, id: NodeId) -> usize {
        self.info[id].1
    }

    fn conv(
        &mut self,
        name: &str,
        x: NodeId,
        kernel: usize,
        stride: usize,
        cout: usize,
        act: Option<ActKind>,
    ) -> NodeId {
        let cin = self.channels(x);
        let weight = self.param(format!("{name}.weight"), [kernel, kernel, cin, cout]);
        let bias = self.param(format!("{name}.bias"), [1, 1, 1, cout]);
        let kind = NodeKind::Conv {
            spec: ConvSpec::new(kernel, stride),
            act,
            weight,
            bias,
        };
        let div = self.div(x) * stride;
        self.push(name, kind, vec![x], cout, div)
    }

    fn depthwise(&mut self, name: &str, x: NodeId, stride: usize, act: Option<ActKind>) -> NodeId {
        let c = self.channels(x);
        let weight = self.param(format!("{name}.weight"), [3, 3, c, 1]);
        let bias = self.param(format!("{name}.bias"), [1, 1, 1, c]);
        let kind = NodeKind::Conv {
            spec: ConvSpec::depthwise(3, stride, c),
            act,
            weight,
            bias,
        };
        let div = self.div(x) * stride;
        self.push(name, kind, vec![x], c, div)
    }

    fn unary(&mut self, name: &str, kind: NodeKind, x: NodeId) -> NodeId {
        let (c, mut d) = self.info[x];
        match kind {
            NodeKind::Upsample(f) => d /= f,
            NodeKind::GlobalAvgPool => d = 0,
            _ => {}
        }
        self.push(name, kind, vec![x], c, d)
    }

    fn binary(&mut self, name: &str, kind: NodeKind, a: NodeId, b: NodeId) -> NodeId {
        let (c, d) = self.info[a];
        self.push(name, kind, vec![a, b], c, d)
    }

    /// Returns (expand activation if any, block output).
    fn irlb(
        &mut self,
        name: &str,
        x: NodeId,
        expansion: usize,
        stride: usize,
        cout: usize,
        act: ActKind,
    ) -> (Option<NodeId>, NodeId) {
        let cin = self.channels(x);
        let expand = (expansion != 1)
            .then(|| self.conv(&format!("{name}.expand"), x, 1, 1, cin * expansion, Some(act)));
        let dw = self.depthwise(&format!("{name}.dw"), expand.unwrap_or(x), stride, Some(act));
        let proj = self.conv(&format!("{name}.project"), dw, 1, 1, cout, None);
        let out = if stride == 1 && cin == cout {
            self.binary(&format!("{name}.add"), NodeKind::Add, x, proj)
        } else {
            proj
        };
        (expand, out)
    }

    fn attention(&mut self, name: &str, x: NodeId, cfg: &MqnConfig) -> NodeId {
        let c = self.channels(x);
        let sigmoid = NodeKind::Act(ActKind::Sigmoid);
        match cfg.attention {
            AttentionKind::None => x,
            AttentionKind::Sa => {
                let g = self.conv(&format!("{name}.gate"), x, 1, 1, 1, None);
                let s = self.unary(&format!("{name}.gate_sigmoid"), sigmoid, g);
                self.binary(&format!("{name}.mul"), NodeKind::Mul, x, s)
            }
            AttentionKind::Csa => {
                let g = self.conv(&format!("{name}.gate"), x, 1, 1, 1, None);
                let s = self.unary(&format!("{name}.gate_sigmoid"), sigmoid.clone(), g);
                let m = self.binary(&format!("{name}.spatial_mul"), NodeKind::Mul, x, s);
                let d = self.depthwise(&format!("{name}.dw"), x, 1, None);
                let ds = self.unary(&format!("{name}.dw_sigmoid"), sigmoid, d);
                self.binary(&format!("{name}.mul"), NodeKind::Mul, m, ds)
            }
            AttentionKind::Ca => {
                let hidden = cfg.ca_mode.hidden_channels(c, cfg.ca_reduction);
                let p = self.unary(&format!("{name}.pool"), NodeKind::GlobalAvgPool, x);
                let s = self.conv(&format!("{name}.squeeze"), p, 1, 1, hidden, Some(ActKind::Relu));
                let e = self.conv(&format!("{name}.excite"), s, 1, 1, c, None);
                let g = self.unary(&format!("{name}.sigmoid"), sigmoid, e);
                self.binary(&format!("{name}.mul"), NodeKind::Mul, x, g)
            }
        }
    }
}

/// Assembles the network described by `cfg`; all weights start at zero
/// (instance norm gamma at one).
pub fn build_mqn(cfg: &MqnConfig) -> Result<ModelGraph> {
    cfg.validate()?;
    let mut b = Builder {
        nodes: Vec::new(),
        weights: BTreeMap::new(),
        info: Vec::new(),
        partition: Partition::Backbone,
    };
    let act = cfg.irlb_act;
    let input = b.push("input", NodeKind::Input, vec![], 3, 1);

    // encoder
    let first = make_divisible(32.0 * cfg.width, 8);
    let mut x = b.conv("enc.conv0", input, 3, 2, first, Some(act));
    let mut taps: BTreeMap<usize, NodeId> = BTreeMap::new();
    let mut block = 0;
    for &(t, c, n, s) in &MBV2 {
        let cout = make_divisible(c * cfg.width, 8);
        for i in 0..n {
            let stride = if i == 0 { s } else { 1 };
            let (expand, out) = b.irlb(&format!("enc.b{block}"), x, t, stride, cout, act);
            if let Some(e) = expand {
                taps.insert(block, e);
            }
            x = out;
            block += 1;
        }
    }

    // decoder, deepest tap first
    for (stage, &tap_block) in cfg.encoder_taps.iter().rev().enumerate() {
        let tap = *taps.get(&tap_block).ok_or_else(|| {
            Error::Config(format!("encoder block {tap_block} has no expansion to tap"))
        })?;
        let name = format!("dec{stage}");
        let up = b.unary(&format!("{name}.up"), NodeKind::Upsample(2), x);
        if b.div(up) != b.div(tap) {
            return Err(Error::Config(format!(
                "decoder stage {stage} runs at 1/{} but tap {tap_block} is at 1/{}",
                b.div(up),
                b.div(tap)
            )));
        }
        let cat_c = b.channels(up) + b.channels(tap);
        let cat = b.push(&format!("{name}.concat"), NodeKind::Concat, vec![up, tap], cat_c, b.div(up));
        x = cat;
        for j in 0..cfg.decoder_blocks {
            let (_, out) = b.irlb(
                &format!("{name}.irlb{j}"),
                x,
                cfg.decoder_expansion[stage],
                1,
                cfg.decoder_widths[stage],
                act,
            );
            x = out;
        }
        x = b.attention(&format!("{name}.att"), x, cfg);
    }
    if b.div(x) != 2 {
        return Err(Error::Config(format!(
            "decoder ends at 1/{} resolution, expected 1/2",
            b.div(x)
        )));
    }

    x = b.conv("cbr1", x, 1, 1, cfg.cbr1_channels, Some(ActKind::Relu));
    x = b.unary("up", NodeKind::Upsample(2), x);
    x = b.conv("cbr2", x, 1, 1, cfg.head_channels, Some(ActKind::Relu));
    x = b.conv("cbr3", x, 1, 1, cfg.head_channels, Some(ActKind::Relu));
    let boundary = x;

    b.partition = Partition::Head;
    x = b.conv("head.conv", x, 3, 1, 3, None);
    let gamma = b.param("head.in.gamma".into(), [1, 1, 1, 3]);
    let beta = b.param("head.in.beta".into(), [1, 1, 1, 3]);
    b.weights.get_mut(&gamma).unwrap().tensor = Tensor::full([1, 1, 1, 3], 1.0);
    x = b.unary(
        "head.in",
        NodeKind::InstanceNorm {
            gamma,
            beta,
            eps: cfg.in_eps,
        },
        x,
    );
    if cfg.head_relu {
        x = b.unary("head.relu", NodeKind::Act(ActKind::Relu), x);
    }
    x = b.unary("head.tanh", NodeKind::Act(ActKind::Tanh), x);
    x = b.binary("head.add", NodeKind::Add, input, x);
    let output = b.unary("head.out", NodeKind::Act(ActKind::Sigmoid), x);

    Ok(ModelGraph {
        config: cfg.clone(),
        nodes: b.nodes,
        weights: b.weights,
        boundary,
        output,
        plan: QuantPlan::float32(),
        calibration: None,
    })
}

impl ModelGraph {
    /// Deterministic random initialization for exercising the pipeline
    /// without trained weights.
    ///
    /// Conv kernels are uniform with variance-preserving bounds (`√6/fan_in`
    /// before a ReLU, `√3/fan_in` otherwise), biases uniform in ±0.05;
    /// instance norm stays at the identity affine.
    pub fn init_weights(&mut self, seed: u64) -> Result<()> {
        if self.is_quantized() {
            return Err(Error::Invalid("cannot re-initialize a quantized graph".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for node in &self.nodes {
            let NodeKind::Conv {
                spec,
                act,
                weight,
                bias,
            } = &node.kind
            else {
                continue;
            };
            let w = &mut self.weights.get_mut(weight).expect("built graph").tensor;
            let [kh, kw, cin, _] = w.shape();
            let fan_in = (kh * kw * if spec.is_depthwise() { 1 } else { cin }) as f32;
            let gain = if act.is_some() { 6.0 } else { 3.0 };
            let bound = (gain / fan_in).sqrt();
            let values = (0..w.len()).map(|_| rng.gen_range(-bound..=bound)).collect();
            *w = Tensor::from_f32(w.shape(), values)?;
            let bt = &mut self.weights.get_mut(bias).expect("built graph").tensor;
            let values = (0..bt.len()).map(|_| rng.gen_range(-0.05f32..=0.05)).collect();
            *bt = Tensor::from_f32(bt.shape(), values)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_structure() {
        let g = build_mqn(&MqnConfig::default()).unwrap();
        assert_eq!(g.node(g.boundary()).name, "cbr3");
        assert_eq!(g.node(g.output()).name, "head.out");
        assert!(g.head_nodes().all(|(id, _)| id > g.boundary()));
        let names: Vec<_> = g.nodes().iter().map(|n| n.name.as_str()).collect();
        assert!(names.contains(&"dec3.att.mul"));
        assert!(names.contains(&"enc.b16.project"));
    }

    #[test]
    fn init_is_seeded() {
        let cfg = MqnConfig::default();
        let mut a = build_mqn(&cfg).unwrap();
        let mut b = build_mqn(&cfg).unwrap();
        a.init_weights(7).unwrap();
        b.init_weights(7).unwrap();
        assert_eq!(a, b);
        b.init_weights(8).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn bad_tap_rejected() {
        let mut cfg = MqnConfig::default();
        cfg.encoder_taps = vec![1, 3, 6, 14];
        assert!(build_mqn(&cfg).is_err());
    }
}
