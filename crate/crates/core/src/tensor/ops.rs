use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActKind {
    Relu,
    Relu6,
    Sigmoid,
    Tanh,
}

impl ActKind {
    pub fn name(self) -> &'static str {
        match self {
            ActKind::Relu => "relu",
            ActKind::Relu6 => "relu6",
            ActKind::Sigmoid => "sigmoid",
            ActKind::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(ActKind::Relu),
            "relu6" => Some(ActKind::Relu6),
            "sigmoid" => Some(ActKind::Sigmoid),
            "tanh" => Some(ActKind::Tanh),
            _ => None,
        }
    }

    /// Scalar form. Sigmoid and tanh saturate strictly inside their open
    /// ranges so gates never reach exactly 0 or 1.
    #[inline]
    pub fn apply(self, x: f32) -> f32 {
        // largest f32 below 1.0
        const ONE_MINUS: f32 = 1.0 - f32::EPSILON / 2.0;
        if x.is_nan() {
            return x;
        }
        match self {
            ActKind::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            ActKind::Relu6 => x.clamp(0.0, 6.0),
            ActKind::Sigmoid => {
                let y = if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                };
                y.clamp(f32::MIN_POSITIVE, ONE_MINUS)
            }
            ActKind::Tanh => x.tanh().clamp(-ONE_MINUS, ONE_MINUS),
        }
    }
}

pub fn activation(input: &Tensor, kind: ActKind) -> Result<Tensor> {
    input.map_f32(|x| kind.apply(x))
}

/// Nearest-neighbour upsampling by an integer factor along H and W.
pub fn upsample_nearest(input: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(Error::Invalid("upsample factor must be >= 1".into()));
    }
    let [n, h, w, c] = input.shape();
    let x = input.as_f32()?;
    if factor == 1 {
        return Ok(input.clone());
    }
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Vec::with_capacity(n * oh * ow * c);
    for b in 0..n {
        for oy in 0..oh {
            let row = &x[(b * h + oy / factor) * w * c..][..w * c];
            for ox in 0..ow {
                let ix = ox / factor;
                out.extend_from_slice(&row[ix * c..(ix + 1) * c]);
            }
        }
    }
    Tensor::from_f32([n, oh, ow, c], out)
}

/// Channel concatenation; `a` occupies the first channels.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [n, h, w, ca] = a.shape();
    let [nb, hb, wb, cb] = b.shape();
    if (n, h, w) != (nb, hb, wb) {
        return Err(Error::Shape(format!(
            "concat of {:?} and {:?}: spatial extents differ",
            a.shape(),
            b.shape()
        )));
    }
    let (xa, xb) = (a.as_f32()?, b.as_f32()?);
    let mut out = Vec::with_capacity(n * h * w * (ca + cb));
    for p in 0..n * h * w {
        out.extend_from_slice(&xa[p * ca..(p + 1) * ca]);
        out.extend_from_slice(&xb[p * cb..(p + 1) * cb]);
    }
    Tensor::from_f32([n, h, w, ca + cb], out)
}

/// Spatial mean per channel, output N×1×1×C.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let [n, h, w, c] = input.shape();
    if h == 0 || w == 0 {
        return Err(Error::Shape("global pool over zero spatial size".into()));
    }
    let x = input.as_f32()?;
    let count = (h * w) as f64;
    let mut out = Vec::with_capacity(n * c);
    for b in 0..n {
        let mut sums = vec![0.0f64; c];
        for px in x[b * h * w * c..(b + 1) * h * w * c].chunks_exact(c) {
            for (s, &v) in sums.iter_mut().zip(px) {
                *s += v as f64;
            }
        }
        out.extend(sums.into_iter().map(|s| (s / count) as f32));
    }
    Tensor::from_f32([n, 1, 1, c], out)
}

/// Per-sample, per-channel spatial standardization followed by an affine map.
/// Variance uses the population (÷ H·W) convention.
pub fn instance_norm(input: &Tensor, gamma: &[f32], beta: &[f32], eps: f32) -> Result<Tensor> {
    let [n, h, w, c] = input.shape();
    if gamma.len() != c || beta.len() != c {
        return Err(Error::Shape(format!(
            "instance norm affine has {}/{} entries, expected {c}",
            gamma.len(),
            beta.len()
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::Invalid(format!("instance norm eps must be > 0, got {eps}")));
    }
    if h == 0 || w == 0 {
        return Err(Error::Shape("instance norm over zero spatial size".into()));
    }
    let x = input.as_f32()?;
    let hw = h * w;
    let mut out = vec![0.0f32; x.len()];
    for b in 0..n {
        let block = &x[b * hw * c..(b + 1) * hw * c];
        let (mean, var) = channel_moments(block, c);
        let dst = &mut out[b * hw * c..(b + 1) * hw * c];
        for (px_out, px) in dst.chunks_exact_mut(c).zip(block.chunks_exact(c)) {
            for ch in 0..c {
                let inv = 1.0 / (var[ch] + eps as f64).sqrt();
                px_out[ch] =
                    ((px[ch] as f64 - mean[ch]) * inv * gamma[ch] as f64 + beta[ch] as f64) as f32;
            }
        }
    }
    Tensor::from_f32([n, h, w, c], out)
}

/// Population mean and variance of each channel of an (H·W, C) block.
pub(crate) fn channel_moments(block: &[f32], c: usize) -> (Vec<f64>, Vec<f64>) {
    let count = (block.len() / c) as f64;
    let mut mean = vec![0.0f64; c];
    for px in block.chunks_exact(c) {
        for (m, &v) in mean.iter_mut().zip(px) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0f64; c];
    for px in block.chunks_exact(c) {
        for ch in 0..c {
            let d = px[ch] as f64 - mean[ch];
            var[ch] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= count);
    (mean, var)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "add of {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let out = a
        .as_f32()?
        .iter()
        .zip(b.as_f32()?)
        .map(|(x, y)| x + y)
        .collect();
    Tensor::from_f32(a.shape(), out)
}

/// How a gate tensor broadcasts against the gated features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Broadcast {
    Full,
    /// N×H×W×1 gate shared by all channels.
    Spatial,
    /// N×1×1×C gate shared by all pixels.
    Channel,
}

impl Broadcast {
    pub(crate) fn classify(x: [usize; 4], gate: [usize; 4]) -> Result<Self> {
        if x == gate {
            Ok(Broadcast::Full)
        } else if gate == [x[0], x[1], x[2], 1] {
            Ok(Broadcast::Spatial)
        } else if gate == [x[0], 1, 1, x[3]] {
            Ok(Broadcast::Channel)
        } else {
            Err(Error::Shape(format!(
                "gate {gate:?} does not broadcast against {x:?}"
            )))
        }
    }

    #[inline]
    pub(crate) fn index(self, i: usize, shape: [usize; 4]) -> usize {
        let [_, h, w, c] = shape;
        match self {
            Broadcast::Full => i,
            Broadcast::Spatial => i / c,
            Broadcast::Channel => (i / (h * w * c)) * c + i % c,
        }
    }
}

/// Element-wise `x ⊙ gate` where `gate` is full-shape, spatial (C = 1) or
/// per-channel (H = W = 1).
pub fn mul_broadcast(x: &Tensor, gate: &Tensor) -> Result<Tensor> {
    let shape = x.shape();
    let mode = Broadcast::classify(shape, gate.shape())?;
    let (xv, gv) = (x.as_f32()?, gate.as_f32()?);
    let out = xv
        .iter()
        .enumerate()
        .map(|(i, &v)| gv[mode.index(i, shape)] * v)
        .collect();
    Tensor::from_f32(shape, out)
}
