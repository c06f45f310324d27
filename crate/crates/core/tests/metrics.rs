use mqn_core::hdr::HdrImage;
use mqn_core::metrics::{
    combined_loss, cosine_loss, fr_loss, l1_loss, l2_loss, percentile_align, psnr, ssim,
    FeatureExtractor, LossWeights, ToyExtractor,
};
use mqn_core::{Result, Tensor};
use mqn_testkit::metrics::{
    cosine_ref, fr_ref, l1_ref, l2_ref, nearest_rank_ref, psnr_ref, ssim_ref, toy_features_ref,
};
use mqn_testkit::{rand_tensor, rng};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn random_pair(r: &mut ChaCha8Rng) -> (Tensor, Tensor) {
    let shape = [r.gen_range(1..=2), r.gen_range(4..=20), r.gen_range(4..=20), 3];
    let a = rand_tensor(r, shape, 0.0, 1.0);
    let amp = r.gen_range(0.01f32..0.5);
    let noise = rand_tensor(r, shape, -amp, amp);
    let b = Tensor::from_f32(
        shape,
        a.as_f32()
            .unwrap()
            .iter()
            .zip(noise.as_f32().unwrap())
            .map(|(x, n)| (x + n).clamp(0.0, 1.0))
            .collect(),
    )
    .unwrap();
    (a, b)
}

struct Identity;

impl FeatureExtractor for Identity {
    fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        Ok(vec![x.clone()])
    }
}

#[test]
fn losses_match_extended_precision() {
    let mut r = rng(1);
    let fx = ToyExtractor::new(3);
    for _ in 0..120 {
        let (a, b) = random_pair(&mut r);
        assert!((l1_loss(&a, &b).unwrap() as f64 - l1_ref(&a, &b)).abs() < 1e-6);
        assert!((l2_loss(&a, &b).unwrap() as f64 - l2_ref(&a, &b)).abs() < 1e-6);
        assert!((cosine_loss(&a, &b).unwrap() as f64 - cosine_ref(&a, &b)).abs() < 1e-6);
        let fr = fr_loss(&a, &b, &fx).unwrap() as f64;
        let want = fr_ref(&fx, &a, &b);
        assert!((fr - want).abs() < 1e-5 * want.max(1.0), "{fr} vs {want}");
        let p = psnr(&a, &b, 1.0).unwrap() as f64;
        // f32 output: compare in units of the f32 spacing as well
        assert!((p - psnr_ref(&a, &b, 1.0)).abs() < 1e-6f64.max(p.abs() * 1.2e-7), "{p}");
    }
}

#[test]
fn ssim_matches_sliding_window() {
    let mut r = rng(2);
    for i in 0..100 {
        let (a, b) = random_pair(&mut r);
        let a = if i % 10 == 0 {
            // exercise the whole-image fallback
            rand_tensor(&mut r, [1, 7, 9, 3], 0.0, 1.0)
        } else {
            a
        };
        let b = if a.shape() != b.shape() {
            rand_tensor(&mut r, a.shape(), 0.0, 1.0)
        } else {
            b
        };
        let got = ssim(&a, &b).unwrap() as f64;
        let want = ssim_ref(&a, &b);
        assert!((got - want).abs() < 1e-4, "{got} vs {want}");
    }
}

#[test]
fn toy_extractor_features() {
    let fx = ToyExtractor::new(9);
    let x = rand_tensor(&mut rng(3), [1, 16, 12, 3], 0.0, 1.0);
    let got = fx.features(&x).unwrap();
    let want = toy_features_ref(&fx, &x);
    assert_eq!(got.len(), 3);
    for (g, (w, shape)) in got.iter().zip(&want) {
        assert_eq!(g.shape(), *shape);
        for (p, q) in g.as_f32().unwrap().iter().zip(w) {
            assert!((*p as f64 - q).abs() < 1e-5);
        }
    }
    assert_eq!(got[2].shape(), [1, 2, 2, 32]);
}

#[test]
fn loss_examples() {
    let mut r = rng(4);
    let a = rand_tensor(&mut r, [1, 8, 8, 3], 0.1, 1.0);
    let fx = ToyExtractor::new(0);
    let w = LossWeights::default();
    assert_eq!((w.l1, w.l2, w.cosine, w.fr), (1.0, 1.0, 0.1, 0.05));
    for v in [
        l1_loss(&a, &a),
        l2_loss(&a, &a),
        cosine_loss(&a, &a),
        fr_loss(&a, &a, &fx),
        combined_loss(&a, &a, &fx, &w),
    ] {
        assert_eq!(v.unwrap(), 0.0);
    }
    let shifted = a.map_f32(|v| v + 0.5).unwrap();
    assert!((l1_loss(&a, &shifted).unwrap() - 0.5).abs() < 1e-6);
    let one = Tensor::from_f32([1, 1, 1, 1], vec![1.0]).unwrap();
    let four = Tensor::from_f32([1, 1, 1, 1], vec![4.0]).unwrap();
    assert_eq!(l2_loss(&one, &four).unwrap(), 3.0);
    assert!(cosine_loss(&a, &a.map_f32(|v| v * 2.5).unwrap()).unwrap() < 1e-6);
    let red = Tensor::from_f32([1, 1, 2, 3], vec![1., 0., 0., 1., 0., 0.]).unwrap();
    let green = Tensor::from_f32([1, 1, 2, 3], vec![0., 1., 0., 0., 1., 0.]).unwrap();
    assert_eq!(cosine_loss(&red, &green).unwrap(), 1.0);
    let black = Tensor::zeros([1, 1, 2, 3], mqn_core::DType::F32);
    assert_eq!(cosine_loss(&black, &black).unwrap(), 0.0);

    let b = rand_tensor(&mut r, [1, 8, 8, 3], 0.0, 1.0);
    assert_eq!(fr_loss(&a, &b, &Identity).unwrap(), l1_loss(&a, &b).unwrap());
    let only_l1 = LossWeights::new(1.0, 0.0, 0.0, 0.0).unwrap();
    assert_eq!(combined_loss(&a, &b, &fx, &only_l1).unwrap(), l1_loss(&a, &b).unwrap());
    assert!(LossWeights::new(1.0, -1.0, 0.0, 0.0).is_err());
    assert!(l1_loss(&a, &Tensor::full([1, 8, 7, 3], 0.0)).is_err());
}

#[test]
fn combined_is_weighted_sum() {
    let mut r = rng(5);
    let fx = ToyExtractor::new(1);
    let w = LossWeights::default();
    for _ in 0..100 {
        let (a, b) = random_pair(&mut r);
        let parts = [
            l1_loss(&a, &b).unwrap() as f64,
            l2_loss(&a, &b).unwrap() as f64,
            cosine_loss(&a, &b).unwrap() as f64,
            fr_loss(&a, &b, &fx).unwrap() as f64,
        ];
        let want = parts[0] + parts[1] + 0.1 * parts[2] + 0.05 * parts[3];
        let got = combined_loss(&a, &b, &fx, &w).unwrap() as f64;
        assert!((got - want).abs() <= 1e-6, "{got} vs {want}");
    }
}

#[test]
fn psnr_cases() {
    let a = Tensor::full([1, 4, 4, 3], 0.3);
    assert_eq!(psnr(&a, &a, 1.0).unwrap(), f32::INFINITY);
    let b = Tensor::full([1, 4, 4, 3], 0.4);
    assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-4);

    // noise ladder on a fixed base and fixed noise pattern
    let mut r = rng(6);
    let base = rand_tensor(&mut r, [1, 32, 32, 3], 0.2, 0.8);
    let pattern = rand_tensor(&mut r, [1, 32, 32, 3], -1.0, 1.0);
    let mut last = f32::INFINITY;
    for amp in [0.001f32, 0.005, 0.01, 0.05, 0.1, 0.2] {
        let noisy = Tensor::from_f32(
            base.shape(),
            base.as_f32()
                .unwrap()
                .iter()
                .zip(pattern.as_f32().unwrap())
                .map(|(x, n)| x + amp * n)
                .collect(),
        )
        .unwrap();
        let p = psnr(&base, &noisy, 1.0).unwrap();
        assert!(p < last, "{amp}: {p} !< {last}");
        last = p;
    }
}

#[test]
fn ssim_cases() {
    let mut r = rng(7);
    let a = rand_tensor(&mut r, [1, 16, 16, 3], 0.0, 1.0);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-6);
    let (x, y) = (0.2f64, 0.7f64);
    let ca = Tensor::full([1, 16, 16, 3], x as f32);
    let cb = Tensor::full([1, 16, 16, 3], y as f32);
    let c1 = 1e-4;
    let want = (2.0 * x * y + c1) / (x * x + y * y + c1);
    assert!((ssim(&ca, &cb).unwrap() as f64 - want).abs() < 1e-6);
}

fn hdr(w: usize, h: usize, data: Vec<f32>) -> HdrImage {
    HdrImage::new(w, h, data).unwrap()
}

fn lum(img: &HdrImage) -> Vec<f64> {
    img.data()
        .chunks_exact(3)
        .map(|c| 0.2126 * c[0] as f64 + 0.7152 * c[1] as f64 + 0.0722 * c[2] as f64)
        .collect()
}

#[test]
fn percentile_alignment() {
    let mut r = rng(8);
    let gt_data: Vec<f32> = (0..300 * 3).map(|_| r.gen_range(0.0f32..5.0)).collect();
    let gt = hdr(30, 10, gt_data.clone());
    let same = percentile_align(&gt, &gt).unwrap();
    assert_eq!((same.scale, same.offset, same.degenerate), (1.0, 0.0, false));
    let twice = hdr(30, 10, gt_data.iter().map(|v| 2.0 * v).collect());
    let al = percentile_align(&twice, &gt).unwrap();
    assert!((al.scale - 0.5).abs() < 1e-12 && al.offset.abs() < 1e-12);

    for trial in 0..20 {
        // monotone distortion of the same scene
        let (s, o, g) = (r.gen_range(0.2f32..4.0), r.gen_range(0.0f32..1.0), [1.0f32, 1.5][trial % 2]);
        let pred = hdr(30, 10, gt_data.iter().map(|v| s * v.powf(g) + o).collect());
        let out = percentile_align(&pred, &gt).unwrap();
        let (lg, lo) = (lum(&gt), lum(&out.image));
        for p in [0.01, 0.99] {
            let want = nearest_rank_ref(&lg, p);
            let got = nearest_rank_ref(&lo, p);
            // one f32 step at the gt value
            assert!((got - want).abs() <= 2.0 * f32::EPSILON as f64 * want.abs().max(1.0), "{got} vs {want}");
        }
    }
    let flat = hdr(2, 1, vec![0.5; 6]);
    let d = percentile_align(&flat, &gt).unwrap();
    assert!(d.degenerate);
    assert_eq!(d.image, flat);
}

#[test]
fn nearest_rank_picks_ceil_rank() {
    let v: Vec<f64> = (1..=200).map(|i| i as f64).collect();
    assert_eq!(nearest_rank_ref(&v, 0.01), 2.0);
    assert_eq!(nearest_rank_ref(&v, 0.99), 198.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn losses_are_nonnegative(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (a, b) = random_pair(&mut r);
        let fx = ToyExtractor::new(seed);
        for v in [l1_loss(&a, &b), l2_loss(&a, &b), cosine_loss(&a, &b), fr_loss(&a, &b, &fx)] {
            prop_assert!(v.unwrap() >= 0.0);
        }
    }

    #[test]
    fn cosine_ignores_pixel_scaling(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (a, b) = random_pair(&mut r);
        let k = a.len() / 3;
        let scales: Vec<f32> = (0..k).map(|_| r.gen_range(0.1f32..10.0)).collect();
        let scaled = Tensor::from_f32(
            a.shape(),
            a.as_f32().unwrap().iter().enumerate().map(|(i, v)| v * scales[i / 3]).collect(),
        )
        .unwrap();
        let base = cosine_loss(&a, &b).unwrap();
        prop_assert!((cosine_loss(&scaled, &b).unwrap() - base).abs() < 1e-5);
    }

    #[test]
    fn combined_is_linear(seed in any::<u64>(), w1 in prop::array::uniform4(0.0f32..2.0), w2 in prop::array::uniform4(0.0f32..2.0)) {
        let mut r = rng(seed);
        let (a, b) = random_pair(&mut r);
        let fx = ToyExtractor::new(2);
        let mk = |w: [f32; 4]| LossWeights::new(w[0], w[1], w[2], w[3]).unwrap();
        let sum = [w1[0] + w2[0], w1[1] + w2[1], w1[2] + w2[2], w1[3] + w2[3]];
        let lhs = combined_loss(&a, &b, &fx, &mk(sum)).unwrap();
        let rhs = combined_loss(&a, &b, &fx, &mk(w1)).unwrap() + combined_loss(&a, &b, &fx, &mk(w2)).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-5 * lhs.abs().max(1.0));
    }

    #[test]
    fn ssim_symmetric_and_bounded(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (a, b) = random_pair(&mut r);
        let (x, y) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        prop_assert!((x - y).abs() < 1e-6);
        prop_assert!((-1.0..=1.0).contains(&x));
        prop_assert!(x < 1.0 - 1e-6);
    }
}
