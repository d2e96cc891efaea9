//! Property tests for cross-cutting invariants of the tensor and
//! evaluation layers.

use proptest::prelude::*;

use vesselgan_core::eval::{confusion, metrics, roc_auc};
use vesselgan_core::models::{
    build_discriminator, build_generator, discriminator_forward, generator_forward,
    DiscriminatorConfig, GeneratorConfig,
};
use vesselgan_core::tensor::conv::{conv2d_forward, conv_transpose2d_forward};
use vesselgan_core::{ActivationKind, BnMode, ConvSpec, NetTag, Shape, Tape, Tensor};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// <conv2d(u, k), v> == <u, conv_transpose2d(v, k)> for any spec: the
    /// exact adjoint relation the conv backward pass must satisfy.
    #[test]
    fn conv_transpose_is_the_adjoint_of_conv(
        seed in 0u64..1_000_000,
        c_in in 1usize..3,
        c_out in 1usize..3,
        k in 1usize..4,
        stride in 1usize..3,
        pad in 0usize..2,
        oh in 1usize..5,
        ow in 1usize..5,
    ) {
        // pick input extents that the extent formula maps exactly onto (oh, ow)
        let h = (oh - 1) * stride + k;
        let w = (ow - 1) * stride + k;
        prop_assume!(h > 2 * pad && w > 2 * pad);
        let (h, w) = (h - 2 * pad, w - 2 * pad);
        prop_assume!(h + 2 * pad >= k && w + 2 * pad >= k);

        let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let spec = ConvSpec { stride: (stride, stride), padding: (pad, pad) };
        let u = Tensor::from_vec(
            Shape::new(1, c_in, h, w),
            (0..c_in * h * w).map(|_| next()).collect(),
        ).unwrap();
        let kernel = Tensor::from_vec(
            Shape::new(c_out, c_in, k, k),
            (0..c_out * c_in * k * k).map(|_| next()).collect(),
        ).unwrap();
        let zero_b_fwd = Tensor::zeros(Shape::new(1, c_out, 1, 1));
        let zero_b_adj = Tensor::zeros(Shape::new(1, c_in, 1, 1));

        let (cu, _) = conv2d_forward(&u, &kernel, &zero_b_fwd, &spec).unwrap();
        prop_assert_eq!(cu.shape(), Shape::new(1, c_out, oh, ow));
        let v = Tensor::from_vec(cu.shape(), (0..cu.numel()).map(|_| next()).collect()).unwrap();
        let av = conv_transpose2d_forward(&v, &kernel, &zero_b_adj, &spec).unwrap();
        prop_assert_eq!(av.shape(), u.shape());

        let lhs = dot(cu.data(), v.data());
        let rhs = dot(u.data(), av.data());
        let scale = lhs.abs().max(rhs.abs()).max(1e-9);
        prop_assert!((lhs - rhs).abs() / scale <= 1e-4, "<Au,v>={} <u,A'v>={}", lhs, rhs);
    }

    /// Sigmoid outputs are strictly inside (0,1) for any finite input.
    #[test]
    fn sigmoid_range_is_open_unit_interval(vals in proptest::collection::vec(-80.0f64..80.0, 1..64)) {
        let n = vals.len();
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(Tensor::from_vec(Shape::new(1, 1, 1, n), vals).unwrap(), false);
        let y = tape.activation(x, ActivationKind::Sigmoid).unwrap();
        prop_assert!(tape.value(y).data().iter().all(|&v| 0.0 < v && v < 1.0));
    }

    /// Metrics are a pure function of counts: any pixel permutation of the
    /// same prediction/gt pair yields identical metrics.
    #[test]
    fn metrics_invariant_under_pixel_shuffle(
        bits in proptest::collection::vec((0u8..2, 0u8..2), 8..64),
        rot in 0usize..21,
    ) {
        let pred: Vec<u8> = bits.iter().map(|&(p, _)| p).collect();
        let gt: Vec<u8> = bits.iter().map(|&(_, g)| g).collect();
        let rot = rot % bits.len();
        let mut pred_rot = pred.clone();
        pred_rot.rotate_left(rot);
        let mut gt_rot = gt.clone();
        gt_rot.rotate_left(rot);
        let a = metrics(&confusion(&pred, &gt, None).unwrap()).unwrap();
        let b = metrics(&confusion(&pred_rot, &gt_rot, None).unwrap()).unwrap();
        prop_assert_eq!(a.acc.to_bits(), b.acc.to_bits());
        prop_assert_eq!(a.se.to_bits(), b.se.to_bits());
        prop_assert_eq!(a.sp.to_bits(), b.sp.to_bits());
    }

    /// AUC is invariant under strictly monotone transforms of the scores.
    #[test]
    fn auc_invariant_under_cubing(
        data in proptest::collection::vec((0.0f32..1.0, 0u8..2), 4..40),
    ) {
        let scores: Vec<f32> = data.iter().map(|&(s, _)| s).collect();
        let gt: Vec<u8> = data.iter().map(|&(_, g)| g).collect();
        prop_assume!(gt.contains(&1) && gt.contains(&0));
        let cubed: Vec<f32> = scores.iter().map(|&s| s * s * s).collect();
        let a = roc_auc(&scores, &gt, None).unwrap().auc;
        let b = roc_auc(&cubed, &gt, None).unwrap().auc;
        prop_assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn generator_round_trips_spatial_shape_across_depths() {
    for depth in 1..=4usize {
        let cfg = GeneratorConfig {
            depth,
            base_channels: 4,
            max_channels: 16,
            ..GeneratorConfig::default()
        };
        let (store, mut stats) = build_generator::<f32>(&cfg, 3).unwrap();
        let m = cfg.required_multiple();
        for (h, w) in [(m, m), (2 * m, m), (2 * m, 3 * m)] {
            let mut tape: Tape<f32> = Tape::new();
            let lease = store.lease(&mut tape, Some(NetTag::Generator), false);
            let x = tape.leaf(Tensor::full(Shape::new(1, 3, h, w), 0.5), false);
            let z = tape.leaf(Tensor::zeros(Shape::new(1, 1, h, w)), false);
            let y =
                generator_forward(&mut tape, &cfg, &lease, &mut stats, x, z, BnMode::Eval).unwrap();
            assert_eq!(
                tape.shape(y),
                Shape::new(1, 1, h, w),
                "depth {depth} {h}x{w}"
            );
        }
    }
}

#[test]
fn patch_count_matches_observed_score_map() {
    for depth in 1..=3usize {
        let cfg = DiscriminatorConfig {
            depth,
            base_channels: 4,
            max_channels: 16,
            ..DiscriminatorConfig::default()
        };
        let (store, mut stats) = build_discriminator::<f32>(&cfg, 4).unwrap();
        for (h, w) in [(32, 32), (64, 32), (48, 80)] {
            let n = cfg.patch_count(h, w).unwrap();
            let mut tape: Tape<f32> = Tape::new();
            let lease = store.lease(&mut tape, Some(NetTag::Discriminator), false);
            let x = tape.leaf(Tensor::full(Shape::new(1, 3, h, w), 0.5), false);
            let cand = tape.leaf(Tensor::full(Shape::new(1, 1, h, w), 0.5), false);
            let scores =
                discriminator_forward(&mut tape, &cfg, &lease, &mut stats, x, cand, BnMode::Eval)
                    .unwrap();
            assert_eq!(tape.value(scores).numel(), n, "depth {depth} {h}x{w}");
        }
    }
}

#[test]
fn conv_forward_is_deterministic_across_runs() {
    // the rayon-parallel GEMM must give bitwise-identical results every time
    let shape = Shape::new(2, 16, 32, 32);
    let data: Vec<f32> = (0..shape.numel())
        .map(|i| ((i * 2654435761) % 1000) as f32 / 500.0 - 1.0)
        .collect();
    let x = Tensor::from_vec(shape, data).unwrap();
    let kshape = Shape::new(32, 16, 4, 4);
    let kdata: Vec<f32> = (0..kshape.numel())
        .map(|i| ((i * 40503) % 997) as f32 / 997.0 - 0.5)
        .collect();
    let k = Tensor::from_vec(kshape, kdata).unwrap();
    let b = Tensor::zeros(Shape::new(1, 32, 1, 1));
    let spec = ConvSpec::new(2, 1);
    let (first, _) = conv2d_forward(&x, &k, &b, &spec).unwrap();
    for _ in 0..5 {
        let (again, _) = conv2d_forward(&x, &k, &b, &spec).unwrap();
        assert_eq!(first.data(), again.data());
    }
}

#[test]
fn generator_parameter_count_matches_closed_form() {
    // independent per-layer arithmetic over the documented plan: stage
    // channels double from 64 and cap at 512, kernels are 4x4, batch norm
    // (gamma+beta) everywhere except the first encoder and last decoder
    // stage, decoder inputs concatenate the mirrored encoder stage
    let cfg = GeneratorConfig::default();
    let (store, _) = build_generator::<f32>(&cfg, 0).unwrap();

    let depth = 5usize;
    let k2 = 16usize;
    let enc: Vec<usize> = (0..depth).map(|i| (64usize << i).min(512)).collect();
    let mut expected = 0usize;
    let mut in_ch = 4usize; // 3 image + 1 noise channel
    for (i, &out_ch) in enc.iter().enumerate() {
        expected += out_ch * in_ch * k2 + out_ch; // kernel + bias
        if i > 0 {
            expected += 2 * out_ch; // gamma + beta
        }
        in_ch = out_ch;
    }
    let mut dec_out: Vec<usize> = (0..depth - 1).map(|j| enc[depth - 2 - j]).collect();
    dec_out.push(1);
    for j in 0..depth {
        let dec_in = if j == 0 {
            enc[depth - 1]
        } else {
            dec_out[j - 1] + enc[depth - 1 - j]
        };
        expected += dec_in * dec_out[j] * k2 + dec_out[j];
        if j + 1 < depth {
            expected += 2 * dec_out[j];
        }
    }
    assert_eq!(store.numel(), expected);
}

#[test]
fn otsu_threshold_point_lies_on_roc_curve() {
    // binarizing at the Otsu threshold must reproduce a point of the ROC
    // sweep: the pipeline's threshold semantics are consistent
    let mut state = 0xfeedu64;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 40) as f32 / (1u32 << 24) as f32
    };
    for _ in 0..20 {
        let n = 400usize;
        let scores: Vec<f32> = (0..n).map(|_| (next() * 255.0).round() / 255.0).collect();
        let gt: Vec<u8> = scores
            .iter()
            .map(|&s| (s + 0.3 * next() > 0.6) as u8)
            .collect();
        if gt.iter().all(|&g| g == 1) || gt.iter().all(|&g| g == 0) {
            continue;
        }
        let otsu = vesselgan_core::eval::otsu_threshold(&scores, None).unwrap();
        let pred = vesselgan_core::eval::binarize(&scores, otsu.threshold);
        let counts = confusion(&pred, &gt, None).unwrap();
        let p = (counts.tp + counts.fn_) as f64;
        let ng = (counts.tn + counts.fp) as f64;
        let (fpr, tpr) = (counts.fp as f64 / ng, counts.tp as f64 / p);
        let curve = roc_auc(&scores, &gt, None).unwrap();
        let on_curve = curve
            .points
            .iter()
            .any(|&(f, t)| (f - fpr).abs() < 1e-12 && (t - tpr).abs() < 1e-12);
        assert!(
            on_curve,
            "binarized point ({fpr},{tpr}) not on the ROC sweep"
        );
    }
}
