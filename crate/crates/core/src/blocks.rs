//! Composite network blocks: inverted residual linear bottlenecks (IRLB),
//! pointwise ConvBnReLU and the gated attention variants.
//!
//! Batch norm is assumed folded into every conv, so each block is a plain
//! composition of the float kernels in [`crate::tensor`].

use crate::error::{Error, Result};
use crate::tensor::{
    activation, add, conv2d, conv_mac_count, depthwise_conv2d, global_avg_pool, mul_broadcast,
    ActKind, ConvSpec, Tensor,
};

/// Attention gate applied at the end of a decoder stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttentionKind {
    None,
    /// Spatial: `σ(conv1×1→1(x)) ⊙ x`.
    Sa,
    /// Channel-spatial: a depthwise gate on top of the spatial gate.
    Csa,
    /// Channel (squeeze-excitation style).
    Ca,
}

impl AttentionKind {
    pub fn name(self) -> &'static str {
        match self {
            AttentionKind::None => "none",
            AttentionKind::Sa => "sa",
            AttentionKind::Csa => "csa",
            AttentionKind::Ca => "ca",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(AttentionKind::None),
            "sa" => Some(AttentionKind::Sa),
            "csa" => Some(AttentionKind::Csa),
            "ca" => Some(AttentionKind::Ca),
            _ => None,
        }
    }
}

/// How the channel attention hidden width follows from `r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CaMode {
    /// `max(1, C / r)`
    Divide,
    /// `C · r`
    Multiply,
}

impl CaMode {
    pub fn name(self) -> &'static str {
        match self {
            CaMode::Divide => "divide",
            CaMode::Multiply => "multiply",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "divide" => Some(CaMode::Divide),
            "multiply" => Some(CaMode::Multiply),
            _ => None,
        }
    }

    pub fn hidden_channels(self, channels: usize, r: usize) -> usize {
        match self {
            CaMode::Divide => (channels / r.max(1)).max(1),
            CaMode::Multiply => channels * r,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockConfig {
    pub expansion: usize,
    pub stride: usize,
    pub out_channels: usize,
    pub attention: AttentionKind,
    pub ca_reduction: usize,
    pub ca_mode: CaMode,
    pub act: ActKind,
}

impl BlockConfig {
    pub fn new(expansion: usize, stride: usize, out_channels: usize) -> Self {
        Self {
            expansion,
            stride,
            out_channels,
            attention: AttentionKind::None,
            ca_reduction: 8,
            ca_mode: CaMode::Divide,
            act: ActKind::Relu6,
        }
    }

    pub fn has_shortcut(&self, in_channels: usize) -> bool {
        self.stride == 1 && in_channels == self.out_channels
    }

    pub fn hidden_channels(&self, in_channels: usize) -> usize {
        in_channels * self.expansion
    }
}

/// Conv weights with BN already folded in.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    pub weight: Tensor,
    pub bias: Vec<f32>,
}

impl ConvWeights {
    pub fn zeros(kh: usize, kw: usize, cin: usize, cout: usize) -> Self {
        Self {
            weight: Tensor::zeros([kh, kw, cin, cout], crate::DType::F32),
            bias: vec![0.0; cout],
        }
    }

    pub fn depthwise_zeros(k: usize, channels: usize) -> Self {
        Self {
            weight: Tensor::zeros([k, k, channels, 1], crate::DType::F32),
            bias: vec![0.0; channels],
        }
    }

    /// Standard conv followed by an optional activation.
    pub fn apply(&self, x: &Tensor, spec: &ConvSpec, act: Option<ActKind>) -> Result<Tensor> {
        let y = if spec.is_depthwise() {
            depthwise_conv2d(x, &self.weight, &self.bias, spec)?
        } else {
            conv2d(x, &self.weight, &self.bias, spec)?
        };
        match act {
            Some(a) => activation(&y, a),
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrlbWeights {
    /// Absent when the expansion ratio is 1.
    pub expand: Option<ConvWeights>,
    /// `(3, 3, hidden, 1)`
    pub depthwise: ConvWeights,
    pub project: ConvWeights,
}

impl IrlbWeights {
    pub fn zeros(in_channels: usize, cfg: &BlockConfig) -> Self {
        let hidden = cfg.hidden_channels(in_channels);
        Self {
            expand: (cfg.expansion != 1).then(|| ConvWeights::zeros(1, 1, in_channels, hidden)),
            depthwise: ConvWeights::depthwise_zeros(3, hidden),
            project: ConvWeights::zeros(1, 1, hidden, cfg.out_channels),
        }
    }
}

/// expand 1×1 + act, depthwise 3×3 + act, linear 1×1 projection, plus the
/// input when the shortcut applies.
pub fn irlb(input: &Tensor, cfg: &BlockConfig, w: &IrlbWeights) -> Result<Tensor> {
    let cin = input.c();
    let hidden = match &w.expand {
        Some(e) => e.apply(input, &ConvSpec::pointwise(), Some(cfg.act))?,
        None => input.clone(),
    };
    let dw_spec = ConvSpec::depthwise(3, cfg.stride, hidden.c());
    let d = w.depthwise.apply(&hidden, &dw_spec, Some(cfg.act))?;
    let p = w.project.apply(&d, &ConvSpec::pointwise(), None)?;
    if p.c() != cfg.out_channels {
        return Err(Error::Shape(format!(
            "projection gives {} channels, config says {}",
            p.c(),
            cfg.out_channels
        )));
    }
    if cfg.has_shortcut(cin) {
        add(input, &p)
    } else {
        Ok(p)
    }
}

/// MACs of one IRLB on an `h × w` input.
pub fn irlb_mac_count(in_channels: usize, cfg: &BlockConfig, h: usize, w: usize) -> Result<u64> {
    let hidden = cfg.hidden_channels(in_channels);
    let mut macs = 0;
    if cfg.expansion != 1 {
        macs += conv_mac_count(&ConvSpec::pointwise(), in_channels, hidden, h, w);
    }
    let dw = ConvSpec::depthwise(3, cfg.stride, hidden);
    let g = dw.geometry(h, w)?;
    macs += conv_mac_count(&dw, hidden, hidden, g.out_h, g.out_w);
    macs += conv_mac_count(&ConvSpec::pointwise(), hidden, cfg.out_channels, g.out_h, g.out_w);
    Ok(macs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaWeights {
    /// `(1, 1, C, 1)`
    pub gate: ConvWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsaWeights {
    /// `(1, 1, C, 1)`
    pub gate: ConvWeights,
    /// `(3, 3, C, 1)`
    pub depthwise: ConvWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaWeights {
    /// `(1, 1, C, hidden)`
    pub squeeze: ConvWeights,
    /// `(1, 1, hidden, C)`
    pub excite: ConvWeights,
}

fn spatial_gate(input: &Tensor, gate: &ConvWeights) -> Result<Tensor> {
    let g = gate.apply(input, &ConvSpec::pointwise(), Some(ActKind::Sigmoid))?;
    if g.c() != 1 {
        return Err(Error::Shape(format!(
            "spatial gate must have 1 channel, got {}",
            g.c()
        )));
    }
    mul_broadcast(input, &g)
}

pub fn sa_block(input: &Tensor, w: &SaWeights) -> Result<Tensor> {
    spatial_gate(input, &w.gate)
}

pub fn csa_block(input: &Tensor, w: &CsaWeights) -> Result<Tensor> {
    let spatial = spatial_gate(input, &w.gate)?;
    let dw = ConvSpec::depthwise(3, 1, input.c());
    let d = w.depthwise.apply(input, &dw, Some(ActKind::Sigmoid))?;
    mul_broadcast(&spatial, &d)
}

pub fn ca_block(input: &Tensor, w: &CaWeights, r: usize, mode: CaMode) -> Result<Tensor> {
    let hidden = mode.hidden_channels(input.c(), r);
    if w.squeeze.weight.shape()[3] != hidden {
        return Err(Error::Shape(format!(
            "channel attention hidden width {} does not match r={r} ({hidden})",
            w.squeeze.weight.shape()[3]
        )));
    }
    let pooled = global_avg_pool(input)?;
    let s = w.squeeze.apply(&pooled, &ConvSpec::pointwise(), Some(ActKind::Relu))?;
    let g = w.excite.apply(&s, &ConvSpec::pointwise(), Some(ActKind::Sigmoid))?;
    mul_broadcast(input, &g)
}

/// Pointwise conv (BN folded) and ReLU.
pub fn conv_bn_relu(input: &Tensor, w: &ConvWeights) -> Result<Tensor> {
    w.apply(input, &ConvSpec::pointwise(), Some(ActKind::Relu))
}
