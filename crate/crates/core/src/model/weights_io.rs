//! `MQNW` weights container.
//!
//! ```text
//! "MQNW" | u32 version | u32 count | count × entry
//! entry: u16 name_len | name | u8 dtype | u8 ndim | ndim × u32 dims
//!        | u8 has_quant [| i8 axis | u32 n | n × f32 scale | n × i32 zero_point]
//!        | raw little-endian data
//! ```
//!
//! Besides the weights, the file carries the quantization state under
//! reserved names: `act/<node>` (empty tensor whose quant block holds the
//! node's output params), `calib/<node>` (`[min, max]`), `calib_norm/<node>`
//! (rows: image count, mean, mean of squares) and `meta/plan`.

use super::{build_mqn, ModelGraph, MqnConfig};
use crate::error::{Error, Result};
use crate::quant::{apply_plan_structure, CalibrationRecord, NormStats, QuantDType, QuantParams, QuantPlan, QuantScheme};
use crate::tensor::{DType, Tensor, TensorData};

pub const MAGIC: [u8; 4] = *b"MQNW";
pub const VERSION: u32 = 1;

const ACT: &str = "act/";
const CALIB: &str = "calib/";
const NORM: &str = "calib_norm/";
const PLAN: &str = "meta/plan";
const IMAGES: &str = "meta/calib_images";

struct Entry {
    name: String,
    tensor: Tensor,
    quant: Option<QuantParams>,
}

fn write_entry(out: &mut Vec<u8>, name: &str, t: &Tensor, q: Option<&QuantParams>) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(t.dtype().code());
    out.push(4);
    for d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match q {
        None => out.push(0),
        Some(p) => {
            out.push(1);
            out.push(p.axis.map_or(-1i8, |a| a as i8) as u8);
            out.extend_from_slice(&(p.scales.len() as u32).to_le_bytes());
            for s in &p.scales {
                out.extend_from_slice(&s.to_le_bytes());
            }
            for z in &p.zero_points {
                out.extend_from_slice(&z.to_le_bytes());
            }
        }
    }
    match t.data() {
        TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::I8(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::I16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
}

/// Serializes weights, activation params, calibration and plan.
pub fn save_weights(graph: &ModelGraph) -> Vec<u8> {
    let mut body = Vec::new();
    let mut count = 0u32;
    let mut put = |name: &str, t: &Tensor, q: Option<&QuantParams>| {
        write_entry(&mut body, name, t, q);
        count += 1;
    };
    for (name, e) in &graph.weights {
        put(name, &e.tensor, e.quant.as_ref());
    }
    for node in &graph.nodes {
        if let Some(p) = &node.out_params {
            let empty = Tensor::zeros([0, 1, 1, 1], p.dtype.dtype());
            put(&format!("{ACT}{}", node.name), &empty, Some(p));
        }
    }
    if let Some(rec) = &graph.calibration {
        for (name, &(lo, hi)) in &rec.ranges {
            put(&format!("{CALIB}{name}"), &Tensor::vector(vec![lo, hi]), None);
        }
        for (name, s) in &rec.norm {
            let c = s.mean.len();
            let mut rows = vec![s.count as f32; c];
            rows.extend_from_slice(&s.mean);
            rows.extend_from_slice(&s.mean_sq);
            let t = Tensor::from_f32([1, 1, 3, c], rows).expect("norm stats shape");
            put(&format!("{NORM}{name}"), &t, None);
        }
        let n = Tensor::from_i32([1, 1, 1, 1], vec![rec.images as i32]).expect("scalar");
        put(IMAGES, &n, None);
    }
    let plan = Tensor::from_i32(
        [1, 1, 1, 2],
        vec![graph.plan.backbone.code() as i32, graph.plan.head.code() as i32],
    )
    .expect("plan shape");
    put(PLAN, &plan, None);

    let mut out = Vec::with_capacity(body.len() + 12);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&body);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    tensor: String,
}

impl<'a> Reader<'a> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Container {
            reason: reason.into(),
            tensor: self.tensor.clone(),
            offset: self.pos,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.fail(format!(
                "truncated: need {n} bytes, {} left",
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn entry(&mut self) -> Result<Entry> {
        self.tensor = String::from("<header>");
        let len = self.u16()? as usize;
        let name = std::str::from_utf8(self.take(len)?)
            .map_err(|_| self.fail("tensor name is not UTF-8"))?
            .to_string();
        self.tensor = name.clone();
        let code = self.u8()?;
        let dtype = DType::from_code(code).ok_or_else(|| self.fail(format!("unknown dtype {code}")))?;
        let ndim = self.u8()? as usize;
        if ndim > 4 {
            return Err(self.fail(format!("{ndim} dimensions (at most 4 supported)")));
        }
        let mut shape = [1usize; 4];
        for i in 0..ndim {
            shape[4 - ndim + i] = self.u32()? as usize;
        }
        let quant = match self.u8()? {
            0 => None,
            1 => {
                let axis = self.u8()? as i8;
                let n = self.u32()? as usize;
                let bytes = self.take(n.checked_mul(8).ok_or_else(|| self.fail("quant count overflow"))?)?;
                let scales = bytes[..4 * n]
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                    .collect();
                let zero_points = bytes[4 * n..]
                    .chunks_exact(4)
                    .map(|b| i32::from_le_bytes(b.try_into().unwrap()))
                    .collect();
                let qd = QuantDType::from_dtype(dtype)
                    .ok_or_else(|| self.fail("quant params on a float tensor"))?;
                let p = QuantParams {
                    dtype: qd,
                    axis: (axis >= 0).then_some(axis as usize),
                    scales,
                    zero_points,
                };
                p.validate().map_err(|e| self.fail(e.to_string()))?;
                Some(p)
            }
            f => return Err(self.fail(format!("bad quant flag {f}"))),
        };
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| self.fail("element count overflow"))?;
        let bytes = self.take(
            count
                .checked_mul(dtype.size_bytes())
                .ok_or_else(|| self.fail("byte count overflow"))?,
        )?;
        let data = match dtype {
            DType::F32 => TensorData::F32(
                bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect(),
            ),
            DType::I8 => TensorData::I8(bytes.iter().map(|&b| b as i8).collect()),
            DType::I16 => TensorData::I16(
                bytes.chunks_exact(2).map(|b| i16::from_le_bytes(b.try_into().unwrap())).collect(),
            ),
            DType::I32 => TensorData::I32(
                bytes.chunks_exact(4).map(|b| i32::from_le_bytes(b.try_into().unwrap())).collect(),
            ),
        };
        Ok(Entry {
            name,
            tensor: Tensor::new(shape, data)?,
            quant,
        })
    }
}

fn parse(bytes: &[u8]) -> Result<Vec<Entry>> {
    let mut r = Reader {
        buf: bytes,
        pos: 0,
        tensor: String::from("<header>"),
    };
    if r.take(4)? != MAGIC {
        r.pos = 0;
        return Err(r.fail("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        r.pos -= 4;
        return Err(r.fail(format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let entries = (0..count).map(|_| r.entry()).collect::<Result<Vec<_>>>()?;
    if r.pos != bytes.len() {
        r.tensor = String::from("<trailer>");
        return Err(r.fail(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(entries)
}

fn scheme(code: i32, e: &Entry) -> Result<QuantScheme> {
    u8::try_from(code)
        .ok()
        .and_then(QuantScheme::from_code)
        .ok_or_else(|| Error::Container {
            reason: format!("unknown scheme code {code}"),
            tensor: e.name.clone(),
            offset: 0,
        })
}

/// Rebuilds the graph for `cfg` and fills it from a container.
pub fn load_weights(bytes: &[u8], cfg: &MqnConfig) -> Result<ModelGraph> {
    let entries = parse(bytes)?;
    let mut graph = build_mqn(cfg)?;
    let mut plan = QuantPlan::float32();
    let mut record = CalibrationRecord::default();
    let mut has_record = false;
    for e in &entries {
        if e.name == PLAN {
            let v = e.tensor.as_i32()?;
            if v.len() != 2 {
                return Err(Error::Container {
                    reason: "plan must hold two scheme codes".into(),
                    tensor: e.name.clone(),
                    offset: 0,
                });
            }
            plan = QuantPlan {
                backbone: scheme(v[0], e)?,
                head: scheme(v[1], e)?,
            };
        }
    }
    apply_plan_structure(&mut graph, plan)?;

    let mut seen = std::collections::BTreeSet::new();
    for e in entries {
        let bad = |reason: String| Error::Container {
            reason,
            tensor: e.name.clone(),
            offset: 0,
        };
        if e.name == PLAN {
            continue;
        } else if e.name == IMAGES {
            record.images = e.tensor.as_i32()?.first().copied().unwrap_or(0).max(0) as usize;
            has_record = true;
        } else if let Some(node) = e.name.strip_prefix(ACT) {
            let id = graph.find(node).ok_or_else(|| bad("no such node".into()))?;
            graph.nodes[id].out_params = Some(e.quant.ok_or_else(|| bad("missing quant block".into()))?);
        } else if let Some(node) = e.name.strip_prefix(NORM) {
            let v = e.tensor.as_f32()?;
            let c = e.tensor.c();
            if e.tensor.shape() != [1, 1, 3, c] {
                return Err(bad("norm stats must be 3 rows".into()));
            }
            record.norm.insert(
                node.to_string(),
                NormStats {
                    count: v.first().copied().unwrap_or(0.0) as usize,
                    mean: v[c..2 * c].to_vec(),
                    mean_sq: v[2 * c..].to_vec(),
                },
            );
            has_record = true;
        } else if let Some(node) = e.name.strip_prefix(CALIB) {
            let v = e.tensor.as_f32()?;
            if v.len() != 2 {
                return Err(bad("range must hold [min, max]".into()));
            }
            record.ranges.insert(node.to_string(), (v[0], v[1]));
            has_record = true;
        } else {
            let slot = graph
                .weights
                .get_mut(&e.name)
                .ok_or_else(|| bad("not a weight of this configuration".into()))?;
            if slot.tensor.shape() != e.tensor.shape() {
                return Err(bad(format!(
                    "shape {:?}, configuration expects {:?}",
                    e.tensor.shape(),
                    slot.tensor.shape()
                )));
            }
            slot.tensor = e.tensor;
            slot.quant = e.quant;
            seen.insert(e.name);
        }
    }
    if let Some(missing) = graph.weights.keys().find(|k| !seen.contains(*k)) {
        return Err(Error::MissingWeight(missing.clone()));
    }
    if has_record {
        graph.calibration = Some(record);
    }
    Ok(graph)
}
