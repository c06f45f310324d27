//! Global tone mapping operators.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{HdrImage, LdrImage};
use crate::error::{Error, Result};

/// Display peak luminance for Drago, cd/m².
const DRAGO_LDMAX: f64 = 100.0;
/// Offset inside the log-average luminance.
const REINHARD_DELTA: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TmoKind {
    Drago,
    Reinhard,
    Exposure,
}

impl TmoKind {
    pub fn name(self) -> &'static str {
        match self {
            TmoKind::Drago => "drago",
            TmoKind::Reinhard => "reinhard",
            TmoKind::Exposure => "exposure",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "drago" => Some(TmoKind::Drago),
            "reinhard" => Some(TmoKind::Reinhard),
            "exposure" => Some(TmoKind::Exposure),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TmoParams {
    /// Adaptive logarithmic mapping; `bias ∈ (0, 1]`.
    Drago { bias: f32 },
    /// Global photographic operator; `key > 0`.
    Reinhard { key: f32 },
    /// `clamp((c · 2^stops)^(1/gamma))` per channel.
    Exposure { stops: f32, gamma: f32 },
}

impl TmoParams {
    pub fn default_for(kind: TmoKind) -> Self {
        match kind {
            TmoKind::Drago => TmoParams::Drago { bias: 0.85 },
            TmoKind::Reinhard => TmoParams::Reinhard { key: 0.18 },
            TmoKind::Exposure => TmoParams::Exposure {
                stops: 0.0,
                gamma: 2.2,
            },
        }
    }

    pub fn kind(&self) -> TmoKind {
        match self {
            TmoParams::Drago { .. } => TmoKind::Drago,
            TmoParams::Reinhard { .. } => TmoKind::Reinhard,
            TmoParams::Exposure { .. } => TmoKind::Exposure,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            TmoParams::Drago { bias } => bias > 0.0 && bias <= 1.0,
            TmoParams::Reinhard { key } => key > 0.0 && key.is_finite(),
            TmoParams::Exposure { stops, gamma } => {
                stops.is_finite() && gamma > 0.0 && gamma.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("tone mapping parameters out of range: {self:?}")))
        }
    }

    /// `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut s = format!("kind={}\n", self.kind().name());
        let _ = match *self {
            TmoParams::Drago { bias } => writeln!(s, "bias={bias}"),
            TmoParams::Reinhard { key } => writeln!(s, "key={key}"),
            TmoParams::Exposure { stops, gamma } => writeln!(s, "stops={stops}\ngamma={gamma}"),
        };
        s
    }

    /// Parses `key=value` lines; missing parameters take their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kind = None;
        let mut values = Vec::new();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if k == "kind" {
                kind = Some(TmoKind::parse(v).ok_or_else(|| Error::Config(format!("unknown tmo `{v}`")))?);
            } else {
                let x: f32 = v
                    .parse()
                    .map_err(|_| Error::Config(format!("{k}: cannot parse `{v}`")))?;
                values.push((k.to_string(), x));
            }
        }
        let kind = kind.ok_or_else(|| Error::Config("missing `kind`".into()))?;
        let mut p = Self::default_for(kind);
        for (k, x) in values {
            match (&mut p, k.as_str()) {
                (TmoParams::Drago { bias }, "bias") => *bias = x,
                (TmoParams::Reinhard { key }, "key") => *key = x,
                (TmoParams::Exposure { stops, .. }, "stops") => *stops = x,
                (TmoParams::Exposure { gamma, .. }, "gamma") => *gamma = x,
                _ => return Err(Error::Config(format!("`{k}` is not a {} parameter", kind.name()))),
            }
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tonemapped {
    pub image: LdrImage,
    /// Input had no positive luminance; the output is black.
    pub all_zero: bool,
}

/// Rec. 709 luminance.
#[inline]
pub fn luminance(rgb: [f64; 3]) -> f64 {
    0.2126 * rgb[0] + 0.7152 * rgb[1] + 0.0722 * rgb[2]
}

#[inline]
fn to_u8(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    // half away from zero; v ≥ 0
    (v * 255.0 + 0.5).floor().min(255.0) as u8
}

pub fn tmo_apply(h: &HdrImage, p: &TmoParams) -> Result<Tonemapped> {
    p.validate()?;
    let px: Vec<[f64; 3]> = h
        .data()
        .chunks_exact(3)
        .map(|c| [c[0] as f64, c[1] as f64, c[2] as f64])
        .collect();
    let lum: Vec<f64> = px.iter().map(|&c| luminance(c)).collect();
    let l_max = lum.iter().cloned().fold(0.0, f64::max);
    let all_zero = !(l_max > 0.0);
    let black = || LdrImage::new(h.width(), h.height(), vec![0; px.len() * 3]);
    if all_zero {
        return Ok(Tonemapped {
            image: black()?,
            all_zero,
        });
    }
    let data: Vec<u8> = match *p {
        TmoParams::Exposure { stops, gamma } => {
            let gain = 2f64.powf(stops as f64);
            let inv = 1.0 / gamma as f64;
            px.iter()
                .flat_map(|c| c.map(|v| to_u8((v * gain).powf(inv))))
                .collect()
        }
        TmoParams::Drago { bias } => {
            let exponent = (bias as f64).ln() / 0.5f64.ln();
            let scale = 0.01 * DRAGO_LDMAX / (l_max + 1.0).log10();
            let map = |l: f64| scale * (l + 1.0).ln() / (2.0 + 8.0 * (l / l_max).powf(exponent)).ln();
            rescale(&px, &lum, map)
        }
        TmoParams::Reinhard { key } => {
            let log_mean =
                (lum.iter().map(|&l| (REINHARD_DELTA + l).ln()).sum::<f64>() / lum.len() as f64).exp();
            let a = key as f64 / log_mean;
            let map = |l: f64| {
                let m = a * l;
                m / (1.0 + m)
            };
            rescale(&px, &lum, map)
        }
    };
    Ok(Tonemapped {
        image: LdrImage::new(h.width(), h.height(), data)?,
        all_zero,
    })
}

/// Scales each pixel by `L_d / L`, keeping its chromaticity.
fn rescale(px: &[[f64; 3]], lum: &[f64], map: impl Fn(f64) -> f64) -> Vec<u8> {
    px.iter()
        .zip(lum)
        .flat_map(|(c, &l)| {
            let r = if l > 0.0 { map(l) / l } else { 0.0 };
            c.map(|v| to_u8(v * r))
        })
        .collect()
}

/// Tone maps with a uniformly chosen operator and uniformly drawn
/// parameters: Drago bias in [0.7, 0.95], Reinhard key in [0.09, 0.36],
/// exposure stops in [−2, 2] with gamma in [1.8, 2.4].
pub fn generate_ldr_random(h: &HdrImage, seed: u64) -> Result<(Tonemapped, TmoParams)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = match rng.gen_range(0..3) {
        0 => TmoParams::Drago {
            bias: rng.gen_range(0.7f32..=0.95),
        },
        1 => TmoParams::Reinhard {
            key: rng.gen_range(0.09f32..=0.36),
        },
        _ => TmoParams::Exposure {
            stops: rng.gen_range(-2.0f32..=2.0),
            gamma: rng.gen_range(1.8f32..=2.4),
        },
    };
    Ok((tmo_apply(h, &params)?, params))
}
