use crate::error::{Error, Result};
use crate::hdr::{luminance, HdrImage};
use crate::tensor::Tensor;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// `10·log10(peak² / MSE)`; `+∞` for identical inputs.
pub fn psnr(h: &Tensor, pred: &Tensor, peak: f32) -> Result<f32> {
    if h.shape() != pred.shape() || h.is_empty() {
        return Err(Error::Shape(format!(
            "psnr of {:?} and {:?}",
            h.shape(),
            pred.shape()
        )));
    }
    let (a, b) = (h.as_f32()?, pred.as_f32()?);
    let mse = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(f32::INFINITY);
    }
    Ok((10.0 * ((peak as f64 * peak as f64) / mse).log10()) as f32)
}

fn gaussian_taps() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering of a `h × w` plane.
fn filter(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let ow = w - k + 1;
    let oh = h - k + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

#[inline]
fn ssim_value(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64) -> f64 {
    ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
        / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
}

fn ssim_plane(x: &[f64], y: &[f64], h: usize, w: usize) -> f64 {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        // one window covering the whole image
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
        for (&a, &b) in x.iter().zip(y) {
            vx += (a - mx) * (a - mx);
            vy += (b - my) * (b - my);
            cxy += (a - mx) * (b - my);
        }
        return ssim_value(mx, my, vx / n, vy / n, cxy / n);
    }
    let taps = gaussian_taps();
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        x.iter().zip(y).map(|(&a, &b)| f(a, b)).collect()
    };
    let mu_x = filter(x, h, w, &taps);
    let mu_y = filter(y, h, w, &taps);
    let xx = filter(&prod(&|a, _| a * a), h, w, &taps);
    let yy = filter(&prod(&|_, b| b * b), h, w, &taps);
    let xy = filter(&prod(&|a, b| a * b), h, w, &taps);
    let n = mu_x.len();
    (0..n)
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            ssim_value(mx, my, xx[i] - mx * mx, yy[i] - my * my, xy[i] - mx * my)
        })
        .sum::<f64>()
        / n as f64
}

/// Mean SSIM with an 11×11 Gaussian window (σ = 1.5), computed per channel
/// and sample, then averaged. Images smaller than the window use a single
/// window over the whole image.
pub fn ssim(h: &Tensor, pred: &Tensor) -> Result<f32> {
    if h.shape() != pred.shape() || h.is_empty() {
        return Err(Error::Shape(format!(
            "ssim of {:?} and {:?}",
            h.shape(),
            pred.shape()
        )));
    }
    let [n, ht, wd, c] = h.shape();
    let (a, b) = (h.as_f32()?, pred.as_f32()?);
    let mut total = 0.0;
    for s in 0..n {
        for ch in 0..c {
            let plane = |v: &[f32]| -> Vec<f64> {
                (0..ht * wd)
                    .map(|p| v[(s * ht * wd + p) * c + ch] as f64)
                    .collect()
            };
            total += ssim_plane(&plane(a), &plane(b), ht, wd);
        }
    }
    Ok((total / (n * c) as f64) as f32)
}

/// Result of [`percentile_align`].
#[derive(Debug, Clone, PartialEq)]
pub struct Aligned {
    pub image: HdrImage,
    pub scale: f64,
    pub offset: f64,
    /// The prediction's percentiles coincide; the identity map was used.
    pub degenerate: bool,
}

/// Nearest-rank percentile of sorted values, `p ∈ (0, 1]`.
fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let rank = (p * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

fn percentiles(img: &HdrImage) -> (f64, f64) {
    let mut l: Vec<f64> = img
        .data()
        .chunks_exact(3)
        .map(|c| luminance([c[0] as f64, c[1] as f64, c[2] as f64]))
        .collect();
    l.sort_by(f64::total_cmp);
    (nearest_rank(&l, 0.01), nearest_rank(&l, 0.99))
}

/// Linear map `a·pred + b` taking pred's 1st/99th luminance percentiles
/// onto gt's. Results are clamped at 0.
pub fn percentile_align(pred: &HdrImage, gt: &HdrImage) -> Result<Aligned> {
    if pred.data().is_empty() || gt.data().is_empty() {
        return Err(Error::Invalid("percentile alignment of an empty image".into()));
    }
    let (p_lo, p_hi) = percentiles(pred);
    let (g_lo, g_hi) = percentiles(gt);
    if p_hi == p_lo {
        return Ok(Aligned {
            image: pred.clone(),
            scale: 1.0,
            offset: 0.0,
            degenerate: true,
        });
    }
    let a = (g_hi - g_lo) / (p_hi - p_lo);
    let b = g_lo - a * p_lo;
    let data = pred
        .data()
        .iter()
        .map(|&v| ((a * v as f64 + b) as f32).max(0.0))
        .collect();
    Ok(Aligned {
        image: HdrImage::new(pred.width(), pred.height(), data)?,
        scale: a,
        offset: b,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_closed_form() {
        let a = Tensor::full([1, 2, 2, 1], 0.5);
        let b = Tensor::full([1, 2, 2, 1], 0.6);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-4);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f32::INFINITY);
    }

    #[test]
    fn ssim_constant_images() {
        let (x, y) = (0.3f64, 0.6f64);
        let a = Tensor::full([1, 12, 12, 1], x as f32);
        let b = Tensor::full([1, 12, 12, 1], y as f32);
        let want = (2.0 * x * y + SSIM_C1) / (x * x + y * y + SSIM_C1);
        assert!((ssim(&a, &b).unwrap() as f64 - want).abs() < 1e-6);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn align_identity_and_scale() {
        let gt = HdrImage::new(4, 1, (0..12).map(|i| i as f32 * 0.1).collect()).unwrap();
        let same = percentile_align(&gt, &gt).unwrap();
        assert_eq!((same.scale, same.offset), (1.0, 0.0));
        let twice = HdrImage::new(4, 1, gt.data().iter().map(|v| v * 2.0).collect()).unwrap();
        let al = percentile_align(&twice, &gt).unwrap();
        assert_eq!((al.scale, al.offset), (0.5, 0.0));
        let flat = HdrImage::new(2, 1, vec![1.0; 6]).unwrap();
        assert!(percentile_align(&flat, &gt).unwrap().degenerate);
    }
}
