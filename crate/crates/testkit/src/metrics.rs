//! Extended-precision references for losses and image metrics.

use mqn_core::metrics::ToyExtractor;
use mqn_core::Tensor;

use crate::{idx, kahan_sum, same_geometry};

fn vals(t: &Tensor) -> Vec<f64> {
    t.as_f32().unwrap().iter().map(|&v| v as f64).collect()
}

pub fn l1_ref(a: &Tensor, b: &Tensor) -> f64 {
    let (x, y) = (vals(a), vals(b));
    kahan_sum(x.iter().zip(&y).map(|(p, q)| (p - q).abs())) / x.len() as f64
}

pub fn l2_ref(a: &Tensor, b: &Tensor) -> f64 {
    let (x, y) = (vals(a), vals(b));
    (kahan_sum(x.iter().zip(&y).map(|(p, q)| (p - q) * (p - q))) / x.len() as f64).sqrt()
}

pub fn cosine_ref(a: &Tensor, b: &Tensor) -> f64 {
    let (x, y) = (vals(a), vals(b));
    let c = a.c();
    let k = x.len() / c;
    let sims = (0..k).map(|p| {
        let u = &x[p * c..(p + 1) * c];
        let v = &y[p * c..(p + 1) * c];
        let dot = kahan_sum(u.iter().zip(v).map(|(s, t)| s * t));
        let nu = kahan_sum(u.iter().map(|s| s * s)).sqrt();
        let nv = kahan_sum(v.iter().map(|s| s * s)).sqrt();
        if nu < 1e-12 || nv < 1e-12 {
            1.0
        } else {
            dot / (nu * nv)
        }
    });
    1.0 - kahan_sum(sims) / k as f64
}

pub fn psnr_ref(a: &Tensor, b: &Tensor, peak: f64) -> f64 {
    let mse = l2_ref(a, b).powi(2);
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// Stage features of the toy extractor recomputed in f64.
pub fn toy_features_ref(fx: &ToyExtractor, x: &Tensor) -> Vec<(Vec<f64>, [usize; 4])> {
    let mut cur = vals(x);
    let mut shape = x.shape();
    let mut out = Vec::new();
    for (w, b) in fx.stages() {
        let ws = w.shape();
        let wv = vals(w);
        let (oh, pt) = same_geometry(shape[1], 3, 2);
        let (ow, pl) = same_geometry(shape[2], 3, 2);
        let os = [shape[0], oh, ow, ws[3]];
        let mut y = vec![0.0f64; os.iter().product()];
        for n in 0..shape[0] {
            for oy in 0..oh {
                for ox in 0..ow {
                    for co in 0..ws[3] {
                        let mut acc = b[co] as f64;
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * 2 + ky) as i64 - pt as i64;
                                let ix = (ox * 2 + kx) as i64 - pl as i64;
                                if iy < 0 || ix < 0 || iy >= shape[1] as i64 || ix >= shape[2] as i64 {
                                    continue;
                                }
                                for ci in 0..shape[3] {
                                    acc += cur[idx(shape, n, iy as usize, ix as usize, ci)]
                                        * wv[idx(ws, ky, kx, ci, co)];
                                }
                            }
                        }
                        y[idx(os, n, oy, ox, co)] = acc.max(0.0);
                    }
                }
            }
        }
        out.push((y.clone(), os));
        cur = y;
        shape = os;
    }
    out
}

pub fn fr_ref(fx: &ToyExtractor, a: &Tensor, b: &Tensor) -> f64 {
    let fa = toy_features_ref(fx, a);
    let fb = toy_features_ref(fx, b);
    fa.iter()
        .zip(&fb)
        .map(|((x, _), (y, _))| kahan_sum(x.iter().zip(y).map(|(p, q)| (p - q).abs())) / x.len() as f64)
        .sum()
}

const C1: f64 = 1e-4;
const C2: f64 = 9e-4;

fn ssim_from_moments(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64) -> f64 {
    ((2.0 * mx * my + C1) * (2.0 * cxy + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2))
}

/// 11×11 Gaussian weights (σ = 1.5) built directly in 2-D and normalized.
pub fn gaussian_window() -> [[f64; 11]; 11] {
    let mut w = [[0.0; 11]; 11];
    let mut total = 0.0;
    for (i, row) in w.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let d2 = ((i as f64 - 5.0).powi(2) + (j as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5);
            *v = (-d2).exp();
            total += *v;
        }
    }
    for row in w.iter_mut() {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    w
}

/// Sliding-window SSIM: every valid 11×11 placement, each channel and
/// sample separately, all maps averaged.
pub fn ssim_ref(a: &Tensor, b: &Tensor) -> f64 {
    let s = a.shape();
    let (x, y) = (vals(a), vals(b));
    let win = gaussian_window();
    let mut per_plane = Vec::new();
    for n in 0..s[0] {
        for c in 0..s[3] {
            let px = |v: &[f64], r: usize, q: usize| v[idx(s, n, r, q, c)];
            if s[1] < 11 || s[2] < 11 {
                let cnt = (s[1] * s[2]) as f64;
                let all: Vec<(f64, f64)> = (0..s[1])
                    .flat_map(|r| (0..s[2]).map(move |q| (r, q)))
                    .map(|(r, q)| (px(&x, r, q), px(&y, r, q)))
                    .collect();
                let mx = kahan_sum(all.iter().map(|p| p.0)) / cnt;
                let my = kahan_sum(all.iter().map(|p| p.1)) / cnt;
                let vx = kahan_sum(all.iter().map(|p| (p.0 - mx).powi(2))) / cnt;
                let vy = kahan_sum(all.iter().map(|p| (p.1 - my).powi(2))) / cnt;
                let cxy = kahan_sum(all.iter().map(|p| (p.0 - mx) * (p.1 - my))) / cnt;
                per_plane.push(ssim_from_moments(mx, my, vx, vy, cxy));
                continue;
            }
            let mut map = Vec::new();
            for r0 in 0..=s[1] - 11 {
                for q0 in 0..=s[2] - 11 {
                    let (mut mx, mut my) = (0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            mx += win[i][j] * px(&x, r0 + i, q0 + j);
                            my += win[i][j] * px(&y, r0 + i, q0 + j);
                        }
                    }
                    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            let dx = px(&x, r0 + i, q0 + j) - mx;
                            let dy = px(&y, r0 + i, q0 + j) - my;
                            vx += win[i][j] * dx * dx;
                            vy += win[i][j] * dy * dy;
                            cxy += win[i][j] * dx * dy;
                        }
                    }
                    map.push(ssim_from_moments(mx, my, vx, vy, cxy));
                }
            }
            per_plane.push(kahan_sum(map.iter().copied()) / map.len() as f64);
        }
    }
    kahan_sum(per_plane.iter().copied()) / per_plane.len() as f64
}

/// Nearest-rank percentile by explicit sort: the value at 1-based rank
/// `ceil(p·n)`.
pub fn nearest_rank_ref(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut rank = (p * v.len() as f64).ceil() as usize;
    if rank == 0 {
        rank = 1;
    }
    v[rank.min(v.len()) - 1]
}
