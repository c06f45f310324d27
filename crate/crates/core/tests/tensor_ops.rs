use mqn_core::tensor::{
    activation, concat_channels, conv2d, conv_mac_count, depthwise_conv2d, fold_batch_norm,
    global_avg_pool, instance_norm, upsample_nearest, ActKind, BatchNorm, ConvSpec, Padding,
};
use mqn_core::{DType, Tensor};
use mqn_testkit::conv::{block_diagonal, naive_conv2d};
use mqn_testkit::{kahan_sum, rand_tensor, rand_vec, rng};
use proptest::prelude::*;

fn t(shape: [usize; 4], v: Vec<f32>) -> Tensor {
    Tensor::from_f32(shape, v).unwrap()
}

#[test]
fn conv_zero_and_identity() {
    let mut r = rng(1);
    let z = Tensor::zeros([1, 3, 3, 1], DType::F32);
    let w = rand_tensor(&mut r, [3, 3, 1, 1], -1.0, 1.0);
    let y = conv2d(&z, &w, &[0.0], &ConvSpec::new(3, 1)).unwrap();
    assert!(y.as_f32().unwrap().iter().all(|&v| v == 0.0));
    assert_eq!(y.shape(), [1, 3, 3, 1]);

    let x = rand_tensor(&mut r, [1, 3, 3, 1], -1.0, 1.0);
    let one = t([1, 1, 1, 1], vec![1.0]);
    assert_eq!(conv2d(&x, &one, &[0.0], &ConvSpec::pointwise()).unwrap(), x);
}

#[test]
fn conv_strided_matches_loops() {
    let mut r = rng(2);
    let x = rand_tensor(&mut r, [1, 4, 4, 2], -1.0, 1.0);
    let w = rand_tensor(&mut r, [3, 3, 2, 3], -1.0, 1.0);
    let b = rand_vec(&mut r, 3, -1.0, 1.0);
    let spec = ConvSpec::new(3, 2);
    assert_eq!(conv2d(&x, &w, &b, &spec).unwrap(), naive_conv2d(&x, &w, &b, &spec));
}

#[test]
fn conv_errors() {
    let x = Tensor::zeros([1, 3, 3, 2], DType::F32);
    let w = Tensor::zeros([3, 3, 1, 1], DType::F32);
    assert!(conv2d(&x, &w, &[0.0], &ConvSpec::new(3, 1)).is_err());
    let empty = Tensor::zeros([1, 0, 3, 1], DType::F32);
    assert!(conv2d(&empty, &w, &[0.0], &ConvSpec::new(3, 1)).is_err());
}

#[test]
fn depthwise_identity_and_block_diagonal() {
    let mut r = rng(3);
    let x = rand_tensor(&mut r, [1, 5, 6, 4], -1.0, 1.0);
    let ones = t([1, 1, 4, 1], vec![1.0; 4]);
    assert_eq!(
        depthwise_conv2d(&x, &ones, &[0.0; 4], &ConvSpec::depthwise(1, 1, 4)).unwrap(),
        x
    );

    let x = rand_tensor(&mut r, [1, 4, 4, 3], -1.0, 1.0);
    let w = rand_tensor(&mut r, [3, 3, 3, 1], -1.0, 1.0);
    let b = rand_vec(&mut r, 3, -1.0, 1.0);
    let dw = depthwise_conv2d(&x, &w, &b, &ConvSpec::depthwise(3, 1, 3)).unwrap();
    let full = conv2d(&x, &block_diagonal(&w), &b, &ConvSpec::new(3, 1)).unwrap();
    assert_eq!(dw, full);
}

#[test]
fn depthwise_mac_count() {
    let spec = ConvSpec::depthwise(3, 1, 8);
    assert_eq!(conv_mac_count(&spec, 8, 8, 16, 16), 18_432);
}

#[test]
fn separable_mac_ratio() {
    for (n, dk) in [(8usize, 3usize), (16, 3), (32, 5)] {
        for (h, w, c) in [(16, 16, 8), (7, 9, 3)] {
            let dw = conv_mac_count(&ConvSpec::depthwise(dk, 1, c), c, c, h, w);
            let pw = conv_mac_count(&ConvSpec::pointwise(), c, n, h, w);
            let full = conv_mac_count(&ConvSpec::new(dk, 1), c, n, h, w);
            // (dw + pw)/full = 1/N + 1/Dk², compared as exact integer fractions
            let lhs = (dw + pw) as u128 * (n * dk * dk) as u128;
            let rhs = full as u128 * (dk * dk + n) as u128;
            assert_eq!(lhs, rhs, "N={n} Dk={dk}");
        }
    }
}

#[test]
fn fold_bn_cases() {
    let mut r = rng(4);
    let w = rand_tensor(&mut r, [1, 1, 3, 2], -1.0, 1.0);
    let b = rand_vec(&mut r, 2, -1.0, 1.0);
    let (w1, b1) = fold_batch_norm(&w, &b, &BatchNorm::identity(2)).unwrap();
    assert_eq!((&w1, &b1), (&w, &b));

    let bn = BatchNorm {
        gamma: vec![2.0; 2],
        ..BatchNorm::identity(2)
    };
    let (w2, b2) = fold_batch_norm(&w, &b, &bn).unwrap();
    assert_eq!(w2, w.map_f32(|v| 2.0 * v).unwrap());
    assert_eq!(b2, b.iter().map(|v| 2.0 * v).collect::<Vec<_>>());

    let bn = BatchNorm {
        gamma: rand_vec(&mut r, 2, 0.5, 2.0),
        beta: rand_vec(&mut r, 2, -1.0, 1.0),
        mean: rand_vec(&mut r, 2, -1.0, 1.0),
        var: rand_vec(&mut r, 2, 0.1, 2.0),
        eps: 1e-5,
    };
    let x = rand_tensor(&mut r, [1, 4, 4, 3], -1.0, 1.0);
    let (wf, bf) = fold_batch_norm(&w, &b, &bn).unwrap();
    let folded = conv2d(&x, &wf, &bf, &ConvSpec::pointwise()).unwrap();
    let raw = conv2d(&x, &w, &b, &ConvSpec::pointwise()).unwrap();
    for (i, (&f, &y)) in folded.as_f32().unwrap().iter().zip(raw.as_f32().unwrap()).enumerate() {
        let c = i % 2;
        let want = (y as f64 - bn.mean[c] as f64) * bn.gamma[c] as f64
            / (bn.var[c] as f64 + bn.eps as f64).sqrt()
            + bn.beta[c] as f64;
        assert!((f as f64 - want).abs() < 1e-5);
    }

    let bad = BatchNorm {
        var: vec![-1.0, 1.0],
        ..BatchNorm::identity(2)
    };
    assert!(fold_batch_norm(&w, &b, &bad).is_err());
}

#[test]
fn activation_values() {
    let x = t([1, 1, 1, 3], vec![0.0, 7.2, -1.0]);
    assert_eq!(activation(&x, ActKind::Sigmoid).unwrap().as_f32().unwrap()[0], 0.5);
    let r6 = activation(&x, ActKind::Relu6).unwrap();
    assert_eq!(&r6.as_f32().unwrap()[1..], &[6.0, 0.0]);
    // tanh(0.3) by its series, summed in f64
    let z = 0.3f64;
    let mut series = 0.0;
    let coeffs = [1.0, -1.0 / 3.0, 2.0 / 15.0, -17.0 / 315.0, 62.0 / 2835.0, -1382.0 / 155925.0];
    for (k, c) in coeffs.iter().enumerate() {
        series += c * z.powi(2 * k as i32 + 1);
    }
    let got = activation(&t([1, 1, 1, 1], vec![0.3]), ActKind::Tanh).unwrap();
    assert!((got.as_f32().unwrap()[0] as f64 - series).abs() < 1e-6);
}

#[test]
fn upsample_layouts() {
    let mut r = rng(5);
    let x = rand_tensor(&mut r, [1, 2, 3, 2], -1.0, 1.0);
    assert_eq!(upsample_nearest(&x, 1).unwrap(), x);
    let v = t([1, 1, 1, 1], vec![4.5]);
    assert_eq!(upsample_nearest(&v, 2).unwrap(), t([1, 2, 2, 1], vec![4.5; 4]));
    let abcd = t([1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]);
    let up = upsample_nearest(&abcd, 2).unwrap();
    assert_eq!(
        up.as_f32().unwrap(),
        &[1., 1., 2., 2., 1., 1., 2., 2., 3., 3., 4., 4., 3., 3., 4., 4.]
    );
    assert!(upsample_nearest(&x, 0).is_err());
}

#[test]
fn concat_layout() {
    let mut r = rng(6);
    let a = rand_tensor(&mut r, [1, 3, 2, 2], -1.0, 1.0);
    let b = rand_tensor(&mut r, [1, 3, 2, 3], -1.0, 1.0);
    let empty = Tensor::zeros([1, 3, 2, 0], DType::F32);
    assert_eq!(concat_channels(&a, &empty).unwrap(), a);
    let c = concat_channels(&a, &b).unwrap();
    assert_eq!(c.get([0, 1, 1, 0]).unwrap(), a.get([0, 1, 1, 0]).unwrap());
    assert_eq!(c.get([0, 1, 1, 2]).unwrap(), b.get([0, 1, 1, 0]).unwrap());
    assert_eq!(c.channel_slice(0, 2).unwrap(), a);
    assert_eq!(c.channel_slice(2, 3).unwrap(), b);
    let other = Tensor::zeros([1, 2, 2, 1], DType::F32);
    assert!(concat_channels(&a, &other).is_err());
}

#[test]
fn global_pool_values() {
    let c = Tensor::full([1, 3, 4, 2], 0.75);
    assert_eq!(global_avg_pool(&c).unwrap().as_f32().unwrap(), &[0.75, 0.75]);
    let q = t([1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]);
    assert_eq!(global_avg_pool(&q).unwrap().as_f32().unwrap(), &[2.5]);
    let mut r = rng(7);
    let x = rand_tensor(&mut r, [1, 5, 7, 1], -3.0, 3.0);
    let want = kahan_sum(x.as_f32().unwrap().iter().map(|&v| v as f64)) / 35.0;
    let got = global_avg_pool(&x).unwrap().as_f32().unwrap()[0] as f64;
    assert!((got - want).abs() < 1e-6);
    assert!(global_avg_pool(&Tensor::zeros([1, 0, 2, 1], DType::F32)).is_err());
}

#[test]
fn instance_norm_cases() {
    let c = Tensor::full([1, 3, 3, 2], 1.7);
    let y = instance_norm(&c, &[1.0, 1.0], &[0.0, 0.0], 1e-5).unwrap();
    assert!(y.as_f32().unwrap().iter().all(|v| v.abs() < 1e-6));

    let mut r = rng(8);
    let x = rand_tensor(&mut r, [1, 6, 6, 2], -2.0, 2.0);
    let y = instance_norm(&x, &[0.0, 0.0], &[0.3, -0.4], 1e-5).unwrap();
    for (i, &v) in y.as_f32().unwrap().iter().enumerate() {
        assert_eq!(v, [0.3, -0.4][i % 2]);
    }

    let gamma = [1.5f32, 0.5];
    let beta = [0.2f32, -1.0];
    let y = instance_norm(&x, &gamma, &beta, 1e-5).unwrap();
    let v = y.as_f32().unwrap();
    for c in 0..2 {
        let ch: Vec<f64> = v.iter().skip(c).step_by(2).map(|&x| x as f64).collect();
        let mean = ch.iter().sum::<f64>() / ch.len() as f64;
        let std = (ch.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / ch.len() as f64).sqrt();
        assert!((mean - beta[c] as f64).abs() < 1e-4);
        assert!((std - gamma[c] as f64).abs() < 1e-3);
    }
}

fn dims() -> impl Strategy<Value = ([usize; 4], usize, usize, usize, usize, bool)> {
    (1..=2usize, 1..=8usize, 1..=8usize, 1..=8usize, 1..=8usize, prop_oneof![Just(1usize), Just(3), Just(5)], 1..=2usize, any::<bool>())
        .prop_map(|(n, h, w, c, co, k, s, valid)| ([n, h, w, c], co, k, s, 0, valid && h >= k && w >= k))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn conv_matches_loop_oracle((shape, co, k, s, _, valid) in dims(), seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = rand_tensor(&mut r, shape, -1.0, 1.0);
        let w = rand_tensor(&mut r, [k, k, shape[3], co], -1.0, 1.0);
        let b = rand_vec(&mut r, co, -1.0, 1.0);
        let mut spec = ConvSpec::new(k, s);
        if valid {
            spec = spec.with_padding(Padding::Valid);
        }
        prop_assert_eq!(conv2d(&x, &w, &b, &spec).unwrap(), naive_conv2d(&x, &w, &b, &spec));
    }

    #[test]
    fn depthwise_matches_block_diagonal((shape, _, k, s, _, _) in dims(), seed in any::<u64>()) {
        let mut r = rng(seed);
        let c = shape[3];
        let x = rand_tensor(&mut r, shape, -1.0, 1.0);
        let w = rand_tensor(&mut r, [k, k, c, 1], -1.0, 1.0);
        let b = rand_vec(&mut r, c, -1.0, 1.0);
        let dw = depthwise_conv2d(&x, &w, &b, &ConvSpec::depthwise(k, s, c)).unwrap();
        let full = conv2d(&x, &block_diagonal(&w), &b, &ConvSpec::new(k, s)).unwrap();
        prop_assert_eq!(dw, full);
    }

    #[test]
    fn sigmoid_strictly_inside(v in prop::collection::vec(-1e4f32..1e4, 1..64)) {
        let n = v.len();
        let y = activation(&t([1, 1, n, 1], v), ActKind::Sigmoid).unwrap();
        prop_assert!(y.as_f32().unwrap().iter().all(|&s| s > 0.0 && s < 1.0));
    }

    #[test]
    fn upsample_composes(a in 1..4usize, b in 1..4usize, seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = rand_tensor(&mut r, [1, 2, 3, 2], -1.0, 1.0);
        let two = upsample_nearest(&upsample_nearest(&x, a).unwrap(), b).unwrap();
        prop_assert_eq!(two, upsample_nearest(&x, a * b).unwrap());
    }

    #[test]
    fn instance_norm_affine_invariant(scale in 0.1f32..10.0, shift in -5.0f32..5.0, seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = rand_tensor(&mut r, [1, 6, 6, 3], -1.0, 1.0);
        let y = x.map_f32(|v| v * scale + shift).unwrap();
        let g = [1.0f32; 3];
        let b = [0.0f32; 3];
        let eps = 1e-12;
        let a = instance_norm(&x, &g, &b, eps).unwrap();
        let c = instance_norm(&y, &g, &b, eps).unwrap();
        for (p, q) in a.as_f32().unwrap().iter().zip(c.as_f32().unwrap()) {
            prop_assert!((p - q).abs() < 1e-3);
        }
    }
}
