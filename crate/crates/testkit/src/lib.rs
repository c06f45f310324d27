//! Reference implementations used as test oracles.
//!
//! Everything here is written for clarity, not speed: plain index loops,
//! f64 or i128 arithmetic where the production code uses narrower types.

pub mod conv;
pub mod int;
pub mod metrics;
pub mod sim;

use mqn_core::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_vec(rng: &mut impl Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn rand_tensor(rng: &mut impl Rng, shape: [usize; 4], lo: f32, hi: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_f32(shape, rand_vec(rng, n, lo, hi)).expect("shape matches data")
}

pub fn rand_i8(rng: &mut impl Rng, shape: [usize; 4]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_i8(shape, (0..n).map(|_| rng.gen::<i8>()).collect()).expect("shape")
}

/// Index of `[n, h, w, c]` in a row-major NHWC buffer.
#[inline]
pub fn idx(shape: [usize; 4], n: usize, h: usize, w: usize, c: usize) -> usize {
    ((n * shape[1] + h) * shape[2] + w) * shape[3] + c
}

/// Same-padding geometry along one axis: `(out, pad_before)`, with any odd
/// remainder of the total padding going after.
pub fn same_geometry(input: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = (input + stride - 1) / stride;
    let needed = (out - 1) * stride + kernel;
    let total = if needed > input { needed - input } else { 0 };
    (out, total / 2)
}

/// Neumaier-compensated sum.
pub fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// `round(x)` with ties away from zero, on f64.
pub fn round_away(x: f64) -> f64 {
    let a = x.abs();
    let f = a.floor();
    let r = if a - f >= 0.5 { f + 1.0 } else { f };
    if x < 0.0 {
        -r
    } else {
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_matches_hand_values() {
        assert_eq!(same_geometry(4, 3, 2), (2, 0));
        assert_eq!(same_geometry(5, 3, 2), (3, 1));
        assert_eq!(same_geometry(7, 3, 1), (7, 1));
        assert_eq!(same_geometry(1, 5, 1), (1, 2));
    }

    #[test]
    fn rounding_ties() {
        assert_eq!(round_away(2.5), 3.0);
        assert_eq!(round_away(-2.5), -3.0);
        assert_eq!(round_away(-2.4), -2.0);
        assert_eq!(round_away(0.49999999999999994), 0.0);
    }

    #[test]
    fn compensated_sum() {
        let v = [1e16, 1.0, -1e16];
        assert_eq!(kahan_sum(v), 1.0);
    }
}
