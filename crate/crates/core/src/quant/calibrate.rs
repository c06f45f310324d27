use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hdr::LdrImage;
use crate::model::{forward_observed, ModelGraph, NodeKind};
use crate::tensor::ops::channel_moments;
use crate::tensor::Tensor;

/// Dataset statistics of an instance norm input, used to replace the norm
/// with a fixed per-channel affine in integer heads.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NormStats {
    /// Number of samples folded in.
    pub count: usize,
    /// Mean over samples of the per-sample spatial channel mean.
    pub mean: Vec<f32>,
    /// Mean over samples of the per-sample spatial mean of `x²`.
    pub mean_sq: Vec<f32>,
}

impl NormStats {
    fn merge(&mut self, other: &NormStats) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (a, b) = (self.count as f64, other.count as f64);
        let mix = |x: f32, y: f32| ((x as f64 * a + y as f64 * b) / (a + b)) as f32;
        for (x, &y) in self.mean.iter_mut().zip(&other.mean) {
            *x = mix(*x, y);
        }
        for (x, &y) in self.mean_sq.iter_mut().zip(&other.mean_sq) {
            *x = mix(*x, y);
        }
        self.count += other.count;
    }

    /// Population variance per channel, floored at 0.
    pub fn variance(&self) -> Vec<f32> {
        self.mean
            .iter()
            .zip(&self.mean_sq)
            .map(|(&m, &s)| (s as f64 - m as f64 * m as f64).max(0.0) as f32)
            .collect()
    }
}

/// Observed value ranges of every edge, keyed by producing node name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CalibrationRecord {
    pub ranges: BTreeMap<String, (f32, f32)>,
    /// Keyed by the instance norm node name.
    pub norm: BTreeMap<String, NormStats>,
    pub images: usize,
}

impl CalibrationRecord {
    pub fn range(&self, node: &str) -> Option<(f32, f32)> {
        self.ranges.get(node).copied()
    }

    /// Element-wise min/max union with another record.
    pub fn merge(&mut self, other: &CalibrationRecord) {
        for (k, &(lo, hi)) in &other.ranges {
            self.ranges
                .entry(k.clone())
                .and_modify(|r| *r = (r.0.min(lo), r.1.max(hi)))
                .or_insert((lo, hi));
        }
        for (k, s) in &other.norm {
            self.norm.entry(k.clone()).or_default().merge(s);
        }
        self.images += other.images;
    }
}

fn record_one(graph: &ModelGraph, input: &Tensor, norm_inputs: &BTreeMap<usize, Vec<String>>) -> Result<CalibrationRecord> {
    let mut rec = CalibrationRecord {
        images: input.n(),
        ..Default::default()
    };
    forward_observed(graph, input, graph.output(), &mut |id, v| {
        let t = v.to_f32()?;
        let name = &graph.node(id).name;
        if let Some((lo, hi)) = t.min_max()? {
            rec.ranges.insert(name.clone(), (lo, hi));
        }
        if let Some(norms) = norm_inputs.get(&id) {
            let c = t.c();
            let per = t.h() * t.w() * c;
            let data = t.as_f32()?;
            let mut stats = NormStats::default();
            for block in data.chunks_exact(per.max(1)) {
                let (mean, var) = channel_moments(block, c);
                stats.merge(&NormStats {
                    count: 1,
                    mean: mean.iter().map(|&m| m as f32).collect(),
                    mean_sq: mean.iter().zip(&var).map(|(m, v)| (v + m * m) as f32).collect(),
                });
            }
            for n in norms {
                rec.norm.insert(n.clone(), stats.clone());
            }
        }
        Ok(())
    })?;
    Ok(rec)
}

/// Min/max of every edge over a set of float inputs.
///
/// Inputs are evaluated in parallel; records are merged in input order so
/// the result matches a sequential pass exactly.
pub fn calibrate_tensors(graph: &ModelGraph, inputs: &[Tensor]) -> Result<CalibrationRecord> {
    if inputs.is_empty() {
        return Err(Error::Invalid("calibration set is empty".into()));
    }
    if graph.is_quantized() {
        return Err(Error::Invalid("calibration runs on a float graph".into()));
    }
    let mut norm_inputs: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for node in graph.nodes() {
        if let NodeKind::InstanceNorm { .. } = node.kind {
            norm_inputs.entry(node.inputs[0]).or_default().push(node.name.clone());
        }
    }
    let records = inputs
        .par_iter()
        .map(|t| record_one(graph, t, &norm_inputs))
        .collect::<Result<Vec<_>>>()?;
    let mut out = CalibrationRecord::default();
    for r in &records {
        out.merge(r);
    }
    Ok(out)
}

pub fn calibrate_activations(graph: &ModelGraph, images: &[LdrImage]) -> Result<CalibrationRecord> {
    let inputs: Vec<Tensor> = images.iter().map(|i| i.to_tensor()).collect();
    calibrate_tensors(graph, &inputs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norm_stats_merge_weighted() {
        let mut a = NormStats {
            count: 1,
            mean: vec![1.0],
            mean_sq: vec![2.0],
        };
        a.merge(&NormStats {
            count: 3,
            mean: vec![5.0],
            mean_sq: vec![30.0],
        });
        assert_eq!(a.count, 4);
        assert_eq!(a.mean, vec![4.0]);
        assert_eq!(a.mean_sq, vec![23.0]);
        assert_eq!(a.variance(), vec![7.0]);
    }

    #[test]
    fn record_merge_is_union() {
        let mut a = CalibrationRecord::default();
        a.ranges.insert("x".into(), (-1.0, 2.0));
        let mut b = CalibrationRecord::default();
        b.ranges.insert("x".into(), (0.0, 3.0));
        b.ranges.insert("y".into(), (0.5, 0.5));
        a.merge(&b);
        assert_eq!(a.range("x"), Some((-1.0, 3.0)));
        assert_eq!(a.range("y"), Some((0.5, 0.5)));
    }
}
