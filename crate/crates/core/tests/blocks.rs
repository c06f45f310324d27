use mqn_core::blocks::{
    ca_block, conv_bn_relu, csa_block, irlb, irlb_mac_count, sa_block, BlockConfig, CaMode,
    CaWeights, ConvWeights, CsaWeights, IrlbWeights, SaWeights,
};
use mqn_core::tensor::global_avg_pool;
use mqn_core::Tensor;
use mqn_testkit::conv::{ca_ref, cbr_ref, csa_ref, irlb_ref, sa_ref};
use mqn_testkit::{rand_tensor, rand_vec, rng};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn cw(r: &mut ChaCha8Rng, shape: [usize; 4], bias: usize, scale: f32) -> ConvWeights {
    ConvWeights {
        weight: rand_tensor(r, shape, -scale, scale),
        bias: rand_vec(r, bias, -scale, scale),
    }
}

fn sa_w(r: &mut ChaCha8Rng, c: usize, scale: f32) -> SaWeights {
    SaWeights { gate: cw(r, [1, 1, c, 1], 1, scale) }
}

fn csa_w(r: &mut ChaCha8Rng, c: usize, scale: f32) -> CsaWeights {
    CsaWeights {
        gate: cw(r, [1, 1, c, 1], 1, scale),
        depthwise: cw(r, [3, 3, c, 1], c, scale),
    }
}

fn ca_w(r: &mut ChaCha8Rng, c: usize, hidden: usize, scale: f32) -> CaWeights {
    CaWeights {
        squeeze: cw(r, [1, 1, c, hidden], hidden, scale),
        excite: cw(r, [1, 1, hidden, c], c, scale),
    }
}

fn irlb_case(r: &mut ChaCha8Rng) -> (Tensor, BlockConfig, IrlbWeights) {
    let cin = r.gen_range(1..=8);
    let t = r.gen_range(1..=4);
    let stride = r.gen_range(1..=2);
    let cout = if r.gen_bool(0.5) { cin } else { r.gen_range(1..=8) };
    let cfg = BlockConfig::new(t, stride, cout);
    let hidden = cin * t;
    let w = IrlbWeights {
        expand: (t != 1).then(|| cw(r, [1, 1, cin, hidden], hidden, 1.0)),
        depthwise: cw(r, [3, 3, hidden, 1], hidden, 1.0),
        project: cw(r, [1, 1, hidden, cout], cout, 1.0),
    };
    let shape = [r.gen_range(1..=2), r.gen_range(1..=8), r.gen_range(1..=8), cin];
    let x = rand_tensor(r, shape, -2.0, 2.0);
    (x, cfg, w)
}

fn scaled(x: &Tensor, s: f32) -> Tensor {
    x.map_f32(|v| v * s).unwrap()
}

#[test]
fn blocks_match_compositions() {
    let mut r = rng(100);
    for _ in 0..150 {
        let (x, cfg, w) = irlb_case(&mut r);
        assert_eq!(irlb(&x, &cfg, &w).unwrap(), irlb_ref(&x, &cfg, &w));

        let c = r.gen_range(1..=8);
        let shape = [r.gen_range(1..=2), r.gen_range(1..=8), r.gen_range(1..=8), c];
        let x = rand_tensor(&mut r, shape, -2.0, 2.0);
        let sa = sa_w(&mut r, c, 1.0);
        assert_eq!(sa_block(&x, &sa).unwrap(), sa_ref(&x, &sa));
        let csa = csa_w(&mut r, c, 1.0);
        assert_eq!(csa_block(&x, &csa).unwrap(), csa_ref(&x, &csa));
        for (mode, rr) in [(CaMode::Divide, 2), (CaMode::Divide, 8), (CaMode::Multiply, 2)] {
            let ca = ca_w(&mut r, c, mode.hidden_channels(c, rr), 1.0);
            assert_eq!(ca_block(&x, &ca, rr, mode).unwrap(), ca_ref(&x, &ca, rr, mode));
        }
        let co = r.gen_range(1..=8);
        let cbr = cw(&mut r, [1, 1, c, co], co, 1.0);
        assert_eq!(conv_bn_relu(&x, &cbr).unwrap(), cbr_ref(&x, &cbr));
    }
}

#[test]
fn irlb_structure() {
    let mut r = rng(2);
    let x = rand_tensor(&mut r, [1, 6, 6, 8], -1.0, 1.0);
    let cfg = BlockConfig::new(6, 1, 8);
    let mut w = IrlbWeights::zeros(8, &cfg);
    w.depthwise = cw(&mut r, [3, 3, 48, 1], 48, 1.0);
    assert_eq!(irlb(&x, &cfg, &w).unwrap(), x);

    let cfg2 = BlockConfig::new(6, 2, 8);
    let y = irlb(&x, &cfg2, &IrlbWeights::zeros(8, &cfg2)).unwrap();
    assert_eq!(y.shape(), [1, 3, 3, 8]);

    assert_eq!(
        irlb_mac_count(8, &cfg, 16, 16).unwrap(),
        8 * 48 * 256 + 9 * 48 * 256 + 48 * 8 * 256
    );

    let wrong = BlockConfig::new(6, 1, 4);
    assert!(irlb(&x, &wrong, &w).is_err());
}

#[test]
fn zero_gates_scale_exactly() {
    let mut r = rng(3);
    let x = rand_tensor(&mut r, [2, 5, 4, 6], -3.0, 3.0);
    let sa = SaWeights { gate: ConvWeights::zeros(1, 1, 6, 1) };
    assert_eq!(sa_block(&x, &sa).unwrap(), scaled(&x, 0.5));
    let csa = CsaWeights {
        gate: ConvWeights::zeros(1, 1, 6, 1),
        depthwise: ConvWeights::depthwise_zeros(3, 6),
    };
    assert_eq!(csa_block(&x, &csa).unwrap(), scaled(&x, 0.25));
    let ca = CaWeights {
        squeeze: ConvWeights::zeros(1, 1, 6, 1),
        excite: ConvWeights::zeros(1, 1, 1, 6),
    };
    assert_eq!(ca_block(&x, &ca, 8, CaMode::Divide).unwrap(), scaled(&x, 0.5));
}

#[test]
fn ca_on_constant_channels_matches_one_pixel() {
    let mut r = rng(4);
    let vals = rand_vec(&mut r, 5, -1.0, 1.0);
    let big = Tensor::from_f32([1, 4, 6, 5], (0..4 * 6 * 5).map(|i| vals[i % 5]).collect()).unwrap();
    let one = Tensor::from_f32([1, 1, 1, 5], vals.clone()).unwrap();
    assert_eq!(global_avg_pool(&big).unwrap(), one);
    let ca = ca_w(&mut r, 5, 2, 1.0);
    let a = ca_block(&big, &ca, 2, CaMode::Divide).unwrap();
    let b = ca_block(&one, &ca, 2, CaMode::Divide).unwrap();
    for px in a.as_f32().unwrap().chunks(5) {
        assert_eq!(px, b.as_f32().unwrap());
    }
    let bad = ca_w(&mut r, 5, 3, 1.0);
    assert!(ca_block(&big, &bad, 2, CaMode::Divide).is_err());
}

#[test]
fn conv_bn_relu_cases() {
    let x = rand_tensor(&mut rng(5), [1, 3, 3, 4], 0.0, 2.0);
    let mut w = ConvWeights::zeros(1, 1, 4, 4);
    w.bias = vec![-1.0; 4];
    assert!(conv_bn_relu(&x, &w).unwrap().as_f32().unwrap().iter().all(|&v| v == 0.0));
    let mut eye = vec![0.0; 16];
    for i in 0..4 {
        eye[i * 4 + i] = 1.0;
    }
    let w = ConvWeights {
        weight: Tensor::from_f32([1, 1, 4, 4], eye).unwrap(),
        bias: vec![0.0; 4],
    };
    assert_eq!(conv_bn_relu(&x, &w).unwrap(), x);
}

#[test]
fn attention_contracts_for_random_weights() {
    let mut r = rng(6);
    for draw in 0..100 {
        let c = r.gen_range(1..=8);
        let shape = [1, r.gen_range(1..=8), r.gen_range(1..=8), c];
        let x = rand_tensor(&mut r, shape, -5.0, 5.0);
        let scale = [0.1, 1.0, 10.0][draw % 3];
        let outs = [
            sa_block(&x, &sa_w(&mut r, c, scale)).unwrap(),
            csa_block(&x, &csa_w(&mut r, c, scale)).unwrap(),
            ca_block(&x, &ca_w(&mut r, c, (c / 8).max(1), scale), 8, CaMode::Divide).unwrap(),
        ];
        for y in outs {
            assert_eq!(y.shape(), x.shape());
            for (a, b) in y.as_f32().unwrap().iter().zip(x.as_f32().unwrap()) {
                assert!(a.abs() <= b.abs());
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn irlb_matches_reference(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (x, cfg, w) = irlb_case(&mut r);
        prop_assert_eq!(irlb(&x, &cfg, &w).unwrap(), irlb_ref(&x, &cfg, &w));
    }

    #[test]
    fn gates_shrink_magnitudes(seed in any::<u64>(), scale in 0.01f32..20.0) {
        let mut r = rng(seed);
        let c = r.gen_range(1..=8);
        let x = rand_tensor(&mut r, [1, 4, 5, c], -10.0, 10.0);
        let y = csa_block(&x, &csa_w(&mut r, c, scale)).unwrap();
        for (a, b) in y.as_f32().unwrap().iter().zip(x.as_f32().unwrap()) {
            prop_assert!(a.abs() <= b.abs());
        }
    }

    #[test]
    fn zero_branch_irlb_is_identity(c in 1usize..8, t in 1usize..5, seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = rand_tensor(&mut r, [1, 5, 5, c], -1.0, 1.0);
        let cfg = BlockConfig::new(t, 1, c);
        let mut w = IrlbWeights::zeros(c, &cfg);
        if let Some(e) = w.expand.as_mut() {
            *e = cw(&mut r, [1, 1, c, c * t], c * t, 1.0);
        }
        prop_assert_eq!(irlb(&x, &cfg, &w).unwrap(), x);
    }
}
