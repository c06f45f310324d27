//! Training losses and evaluation metrics. All losses use mean reduction.

mod quality;

pub use quality::{percentile_align, psnr, ssim, Aligned};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{activation, conv2d, ActKind, ConvSpec, Tensor};

/// Coefficients of the combined objective
/// `λ1·L1 + λ2·L2 + λ3·L_cos + λ4·L_FR`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub l1: f32,
    pub l2: f32,
    pub cosine: f32,
    pub fr: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            l1: 1.0,
            l2: 1.0,
            cosine: 0.1,
            fr: 0.05,
        }
    }
}

impl LossWeights {
    pub fn new(l1: f32, l2: f32, cosine: f32, fr: f32) -> Result<Self> {
        let w = Self { l1, l2, cosine, fr };
        if [l1, l2, cosine, fr].iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Invalid(format!("loss weights must be non-negative: {w:?}")));
        }
        Ok(w)
    }
}

/// Maps an image to one feature tensor per pooling stage.
pub trait FeatureExtractor {
    fn features(&self, x: &Tensor) -> Result<Vec<Tensor>>;
}

/// Three stride-2 3×3 conv + ReLU stages (3→8→16→32 channels) with seeded
/// uniform weights. A stand-in for a pretrained perceptual network.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyExtractor {
    stages: Vec<(Tensor, Vec<f32>)>,
}

impl ToyExtractor {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = [3, 8, 16, 32];
        let stages = widths
            .windows(2)
            .map(|w| {
                let (cin, cout) = (w[0], w[1]);
                let bound = (6.0 / (9 * cin) as f32).sqrt();
                let v = (0..9 * cin * cout).map(|_| rng.gen_range(-bound..=bound)).collect();
                let b = (0..cout).map(|_| rng.gen_range(-0.05f32..=0.05)).collect();
                (Tensor::from_f32([3, 3, cin, cout], v).expect("shape"), b)
            })
            .collect();
        Self { stages }
    }

    pub fn stages(&self) -> &[(Tensor, Vec<f32>)] {
        &self.stages
    }
}

impl FeatureExtractor for ToyExtractor {
    fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut out = Vec::with_capacity(3);
        let mut cur = x.clone();
        for (w, b) in &self.stages {
            cur = activation(&conv2d(&cur, w, b, &ConvSpec::new(3, 2))?, ActKind::Relu)?;
            out.push(cur.clone());
        }
        Ok(out)
    }
}

fn pair<'a>(h: &'a Tensor, p: &'a Tensor) -> Result<(&'a [f32], &'a [f32])> {
    if h.shape() != p.shape() {
        return Err(Error::Shape(format!(
            "compared tensors differ: {:?} vs {:?}",
            h.shape(),
            p.shape()
        )));
    }
    if h.is_empty() {
        return Err(Error::Shape("compared tensors are empty".into()));
    }
    Ok((h.as_f32()?, p.as_f32()?))
}

/// Mean absolute difference.
pub fn l1_loss(h: &Tensor, pred: &Tensor) -> Result<f32> {
    let (a, b) = pair(h, pred)?;
    let s: f64 = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).abs()).sum();
    Ok((s / a.len() as f64) as f32)
}

/// Root mean squared difference.
pub fn l2_loss(h: &Tensor, pred: &Tensor) -> Result<f32> {
    let (a, b) = pair(h, pred)?;
    let s: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok((s / a.len() as f64).sqrt() as f32)
}

/// One minus the mean per-pixel cosine similarity of the channel vectors.
/// Pixels where either vector has norm below 1e-12 count as similarity 1.
pub fn cosine_loss(h: &Tensor, pred: &Tensor) -> Result<f32> {
    let (a, b) = pair(h, pred)?;
    let c = h.c();
    let pixels = a.len() / c;
    let mut total = 0.0f64;
    for (pa, pb) in a.chunks_exact(c).zip(b.chunks_exact(c)) {
        let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
        for (&x, &y) in pa.iter().zip(pb) {
            let (x, y) = (x as f64, y as f64);
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
        let (na, nb) = (na.sqrt(), nb.sqrt());
        total += if na < 1e-12 || nb < 1e-12 {
            1.0
        } else {
            (dot / (na * nb)).clamp(-1.0, 1.0)
        };
    }
    Ok((1.0 - total / pixels as f64).max(0.0) as f32)
}

/// Sum over extractor stages of the mean absolute feature difference.
pub fn fr_loss(h: &Tensor, pred: &Tensor, fx: &dyn FeatureExtractor) -> Result<f32> {
    pair(h, pred)?;
    let (fa, fb) = (fx.features(h)?, fx.features(pred)?);
    if fa.len() != fb.len() {
        return Err(Error::Shape("extractor returned different stage counts".into()));
    }
    let mut total = 0.0f64;
    for (a, b) in fa.iter().zip(&fb) {
        total += l1_loss(a, b)? as f64;
    }
    Ok(total as f32)
}

pub fn combined_loss(
    h: &Tensor,
    pred: &Tensor,
    fx: &dyn FeatureExtractor,
    w: &LossWeights,
) -> Result<f32> {
    let parts = [
        (w.l1, l1_loss(h, pred)?),
        (w.l2, l2_loss(h, pred)?),
        (w.cosine, cosine_loss(h, pred)?),
        (w.fr, if w.fr == 0.0 { 0.0 } else { fr_loss(h, pred, fx)? }),
    ];
    Ok(parts.iter().map(|&(l, v)| l as f64 * v as f64).sum::<f64>() as f32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_losses() {
        let a = Tensor::from_f32([1, 1, 2, 3], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let b = a.map_f32(|v| v + 0.5).unwrap();
        assert_eq!(l1_loss(&a, &a).unwrap(), 0.0);
        assert!((l1_loss(&a, &b).unwrap() - 0.5).abs() < 1e-6);
        let x = Tensor::from_f32([1, 1, 1, 1], vec![1.0]).unwrap();
        let y = Tensor::from_f32([1, 1, 1, 1], vec![4.0]).unwrap();
        assert_eq!(l2_loss(&x, &y).unwrap(), 3.0);
    }

    #[test]
    fn cosine_cases() {
        let a = Tensor::from_f32([1, 1, 2, 3], vec![1., 0., 0., 0., 1., 0.]).unwrap();
        let b = Tensor::from_f32([1, 1, 2, 3], vec![0., 1., 0., 0., 0., 1.]).unwrap();
        assert_eq!(cosine_loss(&a, &b).unwrap(), 1.0);
        let c = a.map_f32(|v| v * 3.0).unwrap();
        assert_eq!(cosine_loss(&a, &c).unwrap(), 0.0);
        let z = Tensor::zeros([1, 1, 2, 3], crate::DType::F32);
        assert_eq!(cosine_loss(&z, &z).unwrap(), 0.0);
    }

    #[test]
    fn toy_extractor_shapes() {
        let fx = ToyExtractor::new(1);
        let x = Tensor::full([1, 16, 16, 3], 0.5);
        let f = fx.features(&x).unwrap();
        let shapes: Vec<_> = f.iter().map(|t| t.shape()).collect();
        assert_eq!(shapes, vec![[1, 8, 8, 8], [1, 4, 4, 16], [1, 2, 2, 32]]);
        assert_eq!(fr_loss(&x, &x, &fx).unwrap(), 0.0);
    }

    #[test]
    fn weights_validated() {
        assert!(LossWeights::new(1.0, -1.0, 0.0, 0.0).is_err());
        assert_eq!(LossWeights::default(), LossWeights::new(1.0, 1.0, 0.1, 0.05).unwrap());
    }
}
