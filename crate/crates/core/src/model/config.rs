use std::fmt::Write as _;

use crate::blocks::{AttentionKind, CaMode};
use crate::error::{Error, Result};
use crate::tensor::ActKind;

/// Architecture hyperparameters of the network.
///
/// Serialized as plain `key=value` lines; `#` starts a comment.
#[derive(Debug, Clone, PartialEq)]
pub struct MqnConfig {
    /// MobileNetV2 width multiplier.
    pub width: f32,
    /// Encoder blocks whose expansion activation feeds a skip connection,
    /// shallowest first. The projection output of the last block is the
    /// bottleneck.
    pub encoder_taps: Vec<usize>,
    /// Output channels of each decoder stage, deepest first.
    pub decoder_widths: Vec<usize>,
    /// IRLB expansion ratio of each decoder stage.
    pub decoder_expansion: Vec<usize>,
    /// IRLBs per decoder stage.
    pub decoder_blocks: usize,
    pub attention: AttentionKind,
    pub ca_reduction: usize,
    pub ca_mode: CaMode,
    /// Width of the first pointwise ConvBnReLU after the decoder.
    pub cbr1_channels: usize,
    /// Width of the last two pointwise ConvBnReLU blocks feeding the head.
    pub head_channels: usize,
    /// Keep the ReLU between instance norm and tanh in the head.
    pub head_relu: bool,
    pub irlb_act: ActKind,
    pub in_eps: f32,
    pub input_height: usize,
    pub input_width: usize,
}

impl Default for MqnConfig {
    fn default() -> Self {
        Self {
            width: 0.35,
            encoder_taps: vec![1, 3, 6, 13],
            decoder_widths: vec![96, 48, 24, 16],
            decoder_expansion: vec![4, 2, 2, 1],
            decoder_blocks: 2,
            attention: AttentionKind::Ca,
            ca_reduction: 8,
            ca_mode: CaMode::Divide,
            cbr1_channels: 16,
            head_channels: 16,
            head_relu: true,
            irlb_act: ActKind::Relu6,
            in_eps: 1e-5,
            input_height: 256,
            input_width: 256,
        }
    }
}

/// Rounds `v` to a multiple of `divisor` (floor `divisor`), never dropping
/// more than 10% below `v`.
pub fn make_divisible(v: f32, divisor: usize) -> usize {
    let d = divisor as f32;
    let mut n = (((v + d / 2.0) / d).floor() as usize * divisor).max(divisor);
    if (n as f32) < 0.9 * v {
        n += divisor;
    }
    n
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("{key}: `{s}` is not a non-negative integer")))
        })
        .collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{v}`")))
}

impl MqnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0) {
            return Err(Error::Config(format!("width must be > 0, got {}", self.width)));
        }
        if self.encoder_taps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("encoder_taps must be strictly increasing".into()));
        }
        if self.encoder_taps.first() == Some(&0) || self.encoder_taps.iter().any(|&t| t > 16) {
            return Err(Error::Config(
                "encoder_taps must name expanding blocks 1..=16".into(),
            ));
        }
        let stages = self.encoder_taps.len();
        if stages == 0 {
            return Err(Error::Config("at least one decoder stage is required".into()));
        }
        if self.decoder_widths.len() != stages || self.decoder_expansion.len() != stages {
            return Err(Error::Config(format!(
                "{stages} taps need {stages} decoder widths and expansions"
            )));
        }
        if self.decoder_widths.iter().chain(&self.decoder_expansion).any(|&v| v == 0) {
            return Err(Error::Config("decoder widths and expansions must be positive".into()));
        }
        if self.decoder_blocks == 0
            || self.ca_reduction == 0
            || self.cbr1_channels == 0
            || self.head_channels == 0
        {
            return Err(Error::Config("block counts and widths must be positive".into()));
        }
        if !matches!(self.irlb_act, ActKind::Relu | ActKind::Relu6) {
            return Err(Error::Config("irlb_act must be relu or relu6".into()));
        }
        if !(self.in_eps > 0.0) {
            return Err(Error::Config("in_eps must be > 0".into()));
        }
        if self.input_height % 32 != 0 || self.input_width % 32 != 0 || self.input_height == 0 {
            return Err(Error::Config(format!(
                "input size {}x{} must be a positive multiple of 32",
                self.input_height, self.input_width
            )));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "width" => self.width = parse_num(key, v)?,
            "encoder_taps" => self.encoder_taps = parse_list(key, v)?,
            "decoder_widths" => self.decoder_widths = parse_list(key, v)?,
            "decoder_expansion" => self.decoder_expansion = parse_list(key, v)?,
            "decoder_blocks" => self.decoder_blocks = parse_num(key, v)?,
            "attention" => {
                self.attention = AttentionKind::parse(v)
                    .ok_or_else(|| Error::Config(format!("unknown attention `{v}`")))?
            }
            "ca_reduction" => self.ca_reduction = parse_num(key, v)?,
            "ca_mode" => {
                self.ca_mode = CaMode::parse(v)
                    .ok_or_else(|| Error::Config(format!("unknown ca_mode `{v}`")))?
            }
            "cbr1_channels" => self.cbr1_channels = parse_num(key, v)?,
            "head_channels" => self.head_channels = parse_num(key, v)?,
            "head_relu" => self.head_relu = parse_num(key, v)?,
            "irlb_act" => {
                self.irlb_act = ActKind::parse(v)
                    .ok_or_else(|| Error::Config(format!("unknown activation `{v}`")))?
            }
            "in_eps" => self.in_eps = parse_num(key, v)?,
            "input_height" => self.input_height = parse_num(key, v)?,
            "input_width" => self.input_width = parse_num(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "width={}", self.width);
        let _ = writeln!(s, "encoder_taps={}", join(&self.encoder_taps));
        let _ = writeln!(s, "decoder_widths={}", join(&self.decoder_widths));
        let _ = writeln!(s, "decoder_expansion={}", join(&self.decoder_expansion));
        let _ = writeln!(s, "decoder_blocks={}", self.decoder_blocks);
        let _ = writeln!(s, "attention={}", self.attention.name());
        let _ = writeln!(s, "ca_reduction={}", self.ca_reduction);
        let _ = writeln!(s, "ca_mode={}", self.ca_mode.name());
        let _ = writeln!(s, "cbr1_channels={}", self.cbr1_channels);
        let _ = writeln!(s, "head_channels={}", self.head_channels);
        let _ = writeln!(s, "head_relu={}", self.head_relu);
        let _ = writeln!(s, "irlb_act={}", self.irlb_act.name());
        let _ = writeln!(s, "in_eps={}", self.in_eps);
        let _ = writeln!(s, "input_height={}", self.input_height);
        let _ = writeln!(s, "input_width={}", self.input_width);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mbv2_widths_at_035() {
        let w: Vec<usize> = [32.0, 16.0, 24.0, 32.0, 64.0, 96.0, 160.0, 320.0]
            .iter()
            .map(|c| make_divisible(c * 0.35, 8))
            .collect();
        assert_eq!(w, vec![16, 8, 8, 16, 24, 32, 56, 112]);
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = MqnConfig::default();
        cfg.attention = AttentionKind::Csa;
        cfg.head_relu = false;
        let back = MqnConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(MqnConfig::parse("width=0").is_err());
        assert!(MqnConfig::parse("encoder_taps=3,1,6,13").is_err());
        assert!(MqnConfig::parse("bogus=1").is_err());
        assert!(MqnConfig::parse("input_height=100").is_err());
        assert!(MqnConfig::parse("decoder_widths=8,8").is_err());
        assert!(MqnConfig::parse("# comment only\n\nwidth=0.5").is_ok());
    }
}
