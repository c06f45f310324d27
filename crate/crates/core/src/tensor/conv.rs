use rayon::prelude::*;

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output extent `ceil(in / stride)`; odd total padding puts the extra
    /// pixel at the bottom/right.
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: Padding,
    /// 1 for a standard convolution, `C_in` for depthwise.
    pub groups: usize,
}

impl ConvSpec {
    pub fn new(kernel: usize, stride: usize) -> Self {
        Self {
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding: Padding::Same,
            groups: 1,
        }
    }

    pub fn pointwise() -> Self {
        Self::new(1, 1)
    }

    pub fn depthwise(kernel: usize, stride: usize, channels: usize) -> Self {
        Self {
            groups: channels,
            ..Self::new(kernel, stride)
        }
    }

    pub fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups > 1
    }

    fn validate(&self) -> Result<()> {
        if self.kernel_h == 0 || self.kernel_w == 0 || self.stride == 0 || self.groups == 0 {
            return Err(Error::Invalid(format!("degenerate conv spec {self:?}")));
        }
        Ok(())
    }

    /// Output (H, W) and the (top, left) padding for an `h × w` input.
    pub fn geometry(&self, h: usize, w: usize) -> Result<ConvGeometry> {
        self.validate()?;
        if h == 0 || w == 0 {
            return Err(Error::Shape("zero-sized spatial input".into()));
        }
        let (out_h, pad_top) = conv_output_size(h, self.kernel_h, self.stride, self.padding)?;
        let (out_w, pad_left) = conv_output_size(w, self.kernel_w, self.stride, self.padding)?;
        Ok(ConvGeometry {
            out_h,
            out_w,
            pad_top,
            pad_left,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

/// `(out, pad_before)` for same padding.
pub fn same_padding(input: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(input);
    (out, total / 2)
}

/// Output extent and leading pad along one axis.
pub fn conv_output_size(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize)> {
    match padding {
        Padding::Same => Ok(same_padding(input, kernel, stride)),
        Padding::Valid => {
            if input < kernel {
                return Err(Error::Shape(format!(
                    "valid conv needs input {input} >= kernel {kernel}"
                )));
            }
            Ok(((input - kernel) / stride + 1, 0))
        }
    }
}

/// Multiply-accumulates of one convolution: `kh·kw·Cin·Cout·Hout·Wout / groups`.
pub fn conv_mac_count(
    spec: &ConvSpec,
    c_in: usize,
    c_out: usize,
    out_h: usize,
    out_w: usize,
) -> u64 {
    (spec.kernel_h * spec.kernel_w) as u64 * c_in as u64 * c_out as u64 * out_h as u64
        * out_w as u64
        / spec.groups as u64
}

fn check_bias(bias: &[f32], c: usize) -> Result<()> {
    if bias.len() != c {
        return Err(Error::Shape(format!(
            "bias has {} entries, expected {c}",
            bias.len()
        )));
    }
    Ok(())
}

/// Standard cross-correlation with bias.
///
/// Every output element accumulates from 0 in (kernel-row, kernel-col,
/// input-channel) order and the bias is added last, so results are
/// bit-reproducible regardless of threading.
pub fn conv2d(input: &Tensor, weights: &Tensor, bias: &[f32], spec: &ConvSpec) -> Result<Tensor> {
    if spec.groups != 1 {
        return Err(Error::Invalid(format!(
            "conv2d needs groups = 1, got {}",
            spec.groups
        )));
    }
    let [n, h, w, c_in] = input.shape();
    let [kh, kw, w_cin, c_out] = weights.shape();
    if kh != spec.kernel_h || kw != spec.kernel_w || w_cin != c_in {
        return Err(Error::Shape(format!(
            "weights {:?} incompatible with input {:?} and {}x{} kernel",
            weights.shape(),
            input.shape(),
            spec.kernel_h,
            spec.kernel_w
        )));
    }
    check_bias(bias, c_out)?;
    let g = spec.geometry(h, w)?;
    let x = input.as_f32()?;
    let wt = weights.as_f32()?;
    let row_len = g.out_w * c_out;
    let mut out = vec![0.0f32; n * g.out_h * row_len];
    out.par_chunks_mut(row_len.max(1))
        .enumerate()
        .for_each(|(row, dst)| {
            let (b, oy) = (row / g.out_h, row % g.out_h);
            let mut acc = vec![0.0f32; c_out];
            for ox in 0..g.out_w {
                acc.iter_mut().for_each(|a| *a = 0.0);
                for ky in 0..kh {
                    let iy = (oy * spec.stride + ky) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * spec.stride + kx) as isize - g.pad_left as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let src = ((b * h + iy as usize) * w + ix as usize) * c_in;
                        let wbase = (ky * kw + kx) * c_in * c_out;
                        for ci in 0..c_in {
                            let xv = x[src + ci];
                            let wrow = &wt[wbase + ci * c_out..wbase + (ci + 1) * c_out];
                            for (a, &wv) in acc.iter_mut().zip(wrow) {
                                *a += xv * wv;
                            }
                        }
                    }
                }
                let d = &mut dst[ox * c_out..(ox + 1) * c_out];
                for ((o, &a), &bv) in d.iter_mut().zip(&acc).zip(bias) {
                    *o = a + bv;
                }
            }
        });
    Tensor::from_f32([n, g.out_h, g.out_w, c_out], out)
}

/// Per-channel spatial convolution, weights laid out as (kh, kw, C, 1).
pub fn depthwise_conv2d(
    input: &Tensor,
    weights: &Tensor,
    bias: &[f32],
    spec: &ConvSpec,
) -> Result<Tensor> {
    let [n, h, w, c] = input.shape();
    let [kh, kw, wc, mult] = weights.shape();
    if kh != spec.kernel_h || kw != spec.kernel_w || wc != c || mult != 1 {
        return Err(Error::Shape(format!(
            "depthwise weights {:?} incompatible with input {:?}",
            weights.shape(),
            input.shape()
        )));
    }
    if spec.groups != c && !(spec.groups == 1 && c == 1) {
        return Err(Error::Invalid(format!(
            "depthwise conv needs groups = {c}, got {}",
            spec.groups
        )));
    }
    check_bias(bias, c)?;
    let g = spec.geometry(h, w)?;
    let x = input.as_f32()?;
    let wt = weights.as_f32()?;
    let row_len = g.out_w * c;
    let mut out = vec![0.0f32; n * g.out_h * row_len];
    out.par_chunks_mut(row_len.max(1))
        .enumerate()
        .for_each(|(row, dst)| {
            let (b, oy) = (row / g.out_h, row % g.out_h);
            for ox in 0..g.out_w {
                let acc = &mut dst[ox * c..(ox + 1) * c];
                for ky in 0..kh {
                    let iy = (oy * spec.stride + ky) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * spec.stride + kx) as isize - g.pad_left as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let src = &x[((b * h + iy as usize) * w + ix as usize) * c..][..c];
                        let wrow = &wt[(ky * kw + kx) * c..][..c];
                        for ((a, &xv), &wv) in acc.iter_mut().zip(src).zip(wrow) {
                            *a += xv * wv;
                        }
                    }
                }
                for (a, &bv) in acc.iter_mut().zip(bias) {
                    *a += bv;
                }
            }
        });
    Tensor::from_f32([n, g.out_h, g.out_w, c], out)
}

/// Inference-mode batch norm statistics for one conv output.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub eps: f32,
}

impl BatchNorm {
    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            eps: 0.0,
        }
    }
}

/// Folds `bn` into the preceding conv so that `conv(x, w') + b'` equals
/// `BN(conv(x, w) + b)`.
///
/// The output-channel axis is the last weight axis, or axis 2 for depthwise
/// (kh, kw, C, 1) weights.
pub fn fold_batch_norm(
    weights: &Tensor,
    bias: &[f32],
    bn: &BatchNorm,
) -> Result<(Tensor, Vec<f32>)> {
    let c = bias.len();
    for (name, v) in [
        ("gamma", &bn.gamma),
        ("beta", &bn.beta),
        ("mean", &bn.mean),
        ("var", &bn.var),
    ] {
        if v.len() != c {
            return Err(Error::Shape(format!(
                "batch norm {name} has {} entries, expected {c}",
                v.len()
            )));
        }
    }
    if let Some(v) = bn.var.iter().find(|v| **v < 0.0) {
        return Err(Error::Invalid(format!("negative batch norm variance {v}")));
    }
    let shape = weights.shape();
    let axis = if shape[3] == c {
        3
    } else if shape[3] == 1 && shape[2] == c {
        2
    } else {
        return Err(Error::Shape(format!(
            "weights {shape:?} have no output axis of size {c}"
        )));
    };
    let mut scale = Vec::with_capacity(c);
    for i in 0..c {
        let denom = (bn.var[i] + bn.eps).sqrt();
        if denom == 0.0 {
            return Err(Error::Invalid(format!(
                "zero variance with eps = 0 on channel {i}"
            )));
        }
        scale.push(bn.gamma[i] / denom);
    }
    let w = weights.as_f32()?;
    let stride = if axis == 3 { 1 } else { shape[3] };
    let folded: Vec<f32> = w
        .iter()
        .enumerate()
        .map(|(i, &v)| v * scale[(i / stride) % c])
        .collect();
    let new_bias = (0..c)
        .map(|i| (bias[i] - bn.mean[i]) * scale[i] + bn.beta[i])
        .collect();
    Ok((Tensor::from_f32(shape, folded)?, new_bias))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_puts_extra_pixel_bottom_right() {
        // in 4, k 3, s 2 -> out 2, total pad 1, top 0
        assert_eq!(same_padding(4, 3, 2), (2, 0));
        assert_eq!(same_padding(5, 3, 2), (3, 1));
        assert_eq!(same_padding(7, 1, 2), (4, 0));
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let x = Tensor::zeros([1, 3, 3, 1], super::super::DType::F32);
        let w = Tensor::from_f32([3, 3, 1, 1], (0..9).map(|i| i as f32).collect()).unwrap();
        let y = conv2d(&x, &w, &[0.0], &ConvSpec::new(3, 1)).unwrap();
        assert!(y.as_f32().unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_kernel() {
        let x = Tensor::from_f32([1, 3, 3, 1], (0..9).map(|i| i as f32 * 0.5).collect()).unwrap();
        let w = Tensor::from_f32([1, 1, 1, 1], vec![1.0]).unwrap();
        let y = conv2d(&x, &w, &[0.0], &ConvSpec::pointwise()).unwrap();
        assert_eq!(x, y);
        let yd = depthwise_conv2d(&x, &w, &[0.0], &ConvSpec::depthwise(1, 1, 1)).unwrap();
        assert_eq!(x, yd);
    }

    #[test]
    fn shape_errors() {
        let x = Tensor::zeros([1, 4, 4, 2], super::super::DType::F32);
        let w = Tensor::zeros([3, 3, 3, 1], super::super::DType::F32);
        assert!(matches!(
            conv2d(&x, &w, &[0.0], &ConvSpec::new(3, 1)),
            Err(Error::Shape(_))
        ));
        let empty = Tensor::zeros([1, 0, 4, 2], super::super::DType::F32);
        let w = Tensor::zeros([3, 3, 2, 1], super::super::DType::F32);
        assert!(conv2d(&empty, &w, &[0.0], &ConvSpec::new(3, 1)).is_err());
        let dw = Tensor::zeros([3, 3, 3, 1], super::super::DType::F32);
        assert!(depthwise_conv2d(&x, &dw, &[0.0; 3], &ConvSpec::depthwise(3, 1, 3)).is_err());
    }

    #[test]
    fn valid_padding_size() {
        assert_eq!(conv_output_size(5, 3, 1, Padding::Valid).unwrap(), (3, 0));
        assert!(conv_output_size(2, 3, 1, Padding::Valid).is_err());
    }

    #[test]
    fn fold_identity_and_scale() {
        let w = Tensor::from_f32([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = [0.5, -0.5];
        let (w1, b1) = fold_batch_norm(&w, &b, &BatchNorm::identity(2)).unwrap();
        assert_eq!(w1, w);
        assert_eq!(b1, b);
        let mut bn = BatchNorm::identity(2);
        bn.gamma = vec![2.0, 2.0];
        let (w2, b2) = fold_batch_norm(&w, &b, &bn).unwrap();
        assert_eq!(w2.as_f32().unwrap(), &[2.0, 4.0, 6.0, 8.0]);
        assert_eq!(b2, vec![1.0, -1.0]);
    }

    #[test]
    fn fold_rejects_negative_variance() {
        let w = Tensor::zeros([1, 1, 1, 1], super::super::DType::F32);
        let mut bn = BatchNorm::identity(1);
        bn.var[0] = -1.0;
        assert!(fold_batch_norm(&w, &[0.0], &bn).is_err());
    }

    #[test]
    fn depthwise_mac_count() {
        let spec = ConvSpec::depthwise(3, 1, 8);
        assert_eq!(conv_mac_count(&spec, 8, 8, 16, 16), 18_432);
        assert_eq!(conv_mac_count(&ConvSpec::pointwise(), 8, 8, 4, 4), 1024);
    }
}
