use proptest::prelude::*;

use wrsn::data::{self, augment_at, balanced_subset, CropParams, DatasetStats, RawRecord, Sample};
use wrsn::harness::{export_lambda_histogram, Checkpoint, Histogram, RunConfig};
use wrsn::layers::{BatchNorm2d, Layer, Mode, SoftmaxCrossEntropy};
use wrsn::optim::{projected_step, OptimizerConfig};
use wrsn::residual::{build_network, residual_branch, NetworkConfig, OriginalUnit, ResidualWeight, Variant, WeightedUnit};
use wrsn::tensor::{conv2d, conv_output_extent, Rng, Tensor};

fn cfg() -> ProptestConfig {
    ProptestConfig::with_cases(48)
}

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn conv_shape_follows_floor_formula(
        h in 1usize..12, w in 1usize..12, k in prop::sample::select(vec![1usize, 3, 5]),
        stride in 1usize..4, pad in 0usize..3, cin in 1usize..4, cout in 1usize..4, seed in any::<u64>(),
    ) {
        let mut rng = Rng::new(seed);
        let x = Tensor::<f32>::gaussian(&[2, cin, h, w], 0.0, 1.0, &mut rng).unwrap();
        let wt = Tensor::<f32>::gaussian(&[cout, cin, k, k], 0.0, 1.0, &mut rng).unwrap();
        match (conv_output_extent(h, k, stride, pad), conv_output_extent(w, k, stride, pad)) {
            (Some(ho), Some(wo)) => {
                prop_assert_eq!(ho, (h + 2 * pad - k) / stride + 1);
                let y = conv2d(&x, &wt, stride, pad).unwrap();
                prop_assert_eq!(y.shape(), &[2, cout, ho, wo][..]);
                // same inputs, same bits
                prop_assert!(y.bit_eq(&conv2d(&x, &wt, stride, pad).unwrap()));
            }
            _ => prop_assert!(conv2d(&x, &wt, stride, pad).is_err()),
        }
    }

    #[test]
    fn projection_keeps_lambda_in_bounds(
        value in -1.0f64..=1.0, velocity in -50.0f64..50.0, grad in -1e6f64..1e6,
        lr in 0.0f64..10.0, momentum in 0.0f64..1.0, steps in 1usize..20,
    ) {
        let mut w = ResidualWeight { value, velocity, ..ResidualWeight::new() };
        for _ in 0..steps {
            w.grad = grad;
            let (v0, x0) = (w.velocity, w.value);
            projected_step(&mut w, lr, momentum, 1e-4).unwrap();
            prop_assert!((-1.0..=1.0).contains(&w.value));
            // the clamp leaves the momentum buffer alone
            prop_assert_eq!(w.velocity, momentum * v0 - lr * (grad + 1e-4 * x0));
            prop_assert_eq!(w.value, (x0 + w.velocity).clamp(-1.0, 1.0));
        }
    }

    #[test]
    fn schedule_never_increases(base in 1e-4f64..1.0, a in 1u64..1000, gap in 1u64..1000, m in 0.01f64..1.0) {
        let cfg = OptimizerConfig { base_lr: base, schedule: vec![(a, m), (a + gap, m)], ..Default::default() };
        let mut prev = f64::INFINITY;
        for t in (0..a + gap + 10).step_by(7) {
            let lr = cfg.lr_at(t);
            prop_assert!(lr <= prev);
            prop_assert!((cfg.lambda_lr_at(t) / cfg.lambda_lr - lr / base).abs() < 1e-12);
            prev = lr;
        }
    }

    #[test]
    fn augmentation_keeps_label_and_shape(
        dy in 0usize..9, dx in 0usize..9, mirror in any::<bool>(), label in 0usize..10, seed in any::<u64>(),
    ) {
        let image = Tensor::<f32>::gaussian(&[3, 32, 32], 0.0, 1.0, &mut Rng::new(seed)).unwrap();
        let s = Sample { image, label };
        let pad = [-1.5, -1.0, -0.5];
        let out = augment_at(&s, CropParams { dy, dx, mirror }, pad);
        prop_assert_eq!(out.label, label);
        prop_assert_eq!(out.image.shape(), &[3, 32, 32][..]);
        // every output value is a source pixel or the channel's pad value
        for (c, pad_c) in pad.iter().enumerate() {
            let plane = &out.image.data()[c * 1024..(c + 1) * 1024];
            let src = &s.image.data()[c * 1024..(c + 1) * 1024];
            prop_assert!(plane.iter().all(|v| v == pad_c || src.contains(v)));
        }
    }

    #[test]
    fn subset_is_balanced(per_class in prop::collection::vec(30usize..60, 10), size in 10usize..300, seed in any::<u64>()) {
        let labels: Vec<usize> = per_class.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
        let idx = balanced_subset(&labels, size, seed).unwrap();
        prop_assert_eq!(idx.len(), size);
        let mut counts = [0usize; 10];
        for &i in &idx {
            counts[labels[i]] += 1;
        }
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        prop_assert!(hi - lo <= 1, "{:?}", counts);
        prop_assert_eq!(idx, balanced_subset(&labels, size, seed).unwrap());
    }

    #[test]
    fn histogram_counts_every_value(values in prop::collection::vec(-1.0f64..=1.0, 0..200), bins in 1usize..40) {
        let h = export_lambda_histogram(&values, bins);
        prop_assert_eq!(h.total(), values.len());
        prop_assert_eq!(h.edges.len(), bins + 1);
        for &v in &values {
            let b = Histogram::bin_of(bins, v);
            prop_assert!(h.edges[b] <= v && v <= h.edges[b + 1]);
        }
    }

    #[test]
    fn checkpoint_bytes_round_trip(
        values in prop::collection::vec(any::<f32>(), 1..64), doubles in prop::collection::vec(any::<f64>(), 0..16),
        blob in prop::collection::vec(any::<u8>(), 0..40), text in "[a-z_=0-9\n]{0,60}",
    ) {
        let mut c = Checkpoint::new(text);
        c.push_tensor("t", &Tensor::from_vec(&[values.len()], values).unwrap());
        c.push_f64s("d", &doubles);
        c.push_bytes("b", blob);
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        prop_assert_eq!(back.to_bytes(), c.to_bytes());
    }

    #[test]
    fn config_text_round_trips(
        n in 1usize..30, lr in 1e-4f64..1.0, lambda_lr in 1e-5f64..0.1, bs in 1usize..512,
        d in 0.0f64..0.9, seed in any::<u64>(), variant in prop::sample::select(vec!["weighted", "original"]),
    ) {
        let mut cfg = RunConfig::default();
        cfg.apply_overrides(&[
            format!("units_per_block={n}"), format!("base_lr={lr}"), format!("lambda_lr={lambda_lr}"),
            format!("batch_size={bs}"), format!("dropout={d}"), format!("seed={seed}"), format!("variant={variant}"),
        ]).unwrap();
        prop_assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn batchnorm_train_output_is_standardized(mean in -5.0f64..5.0, std in 0.1f64..10.0, seed in any::<u64>()) {
        let x = Tensor::<f64>::gaussian(&[8, 3, 4, 4], mean, std, &mut Rng::new(seed)).unwrap();
        let y = BatchNorm2d::new(3).unwrap().forward(&x, Mode::Train).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = (0..8).flat_map(|b| y.data()[(b * 3 + c) * 16..(b * 3 + c + 1) * 16].to_vec()).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
            prop_assert!(m.abs() <= 1e-5);
            // eps = 1e-5 shrinks the variance slightly below one
            prop_assert!((v - 1.0).abs() <= 1e-3, "{}", v);
        }
    }

    #[test]
    fn softmax_gradient_rows_sum_to_zero(seed in any::<u64>(), b in 1usize..8, k in 2usize..12, scale in 0.1f64..20.0) {
        let mut rng = Rng::new(seed);
        let logits = Tensor::<f32>::gaussian(&[b, k], 0.0, scale, &mut rng).unwrap();
        let labels: Vec<usize> = (0..b).map(|_| rng.below(k)).collect();
        let mut xent = SoftmaxCrossEntropy::new();
        xent.forward(&logits, &labels).unwrap();
        let g: Tensor<f32> = xent.backward().unwrap();
        for row in g.data().chunks(k) {
            prop_assert!(row.iter().map(|&v| v as f64).sum::<f64>().abs() <= 1e-6);
        }
    }

    #[test]
    fn weighted_unit_leaves_highway_untouched(lambda in -1.0f64..=1.0, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let mut u = WeightedUnit::<f32>::new(residual_branch(4, true, None, &mut rng).unwrap());
        u.lambda.value = lambda;
        let x = Tensor::<f32>::gaussian(&[2, 4, 6, 6], 0.0, 1.0, &mut rng).unwrap();
        let y = u.forward(&x, Mode::Eval).unwrap();
        let r = u.branch.forward(&x, Mode::Eval).unwrap();
        prop_assert!(y.bit_eq(&WeightedUnit::combine(&x, lambda, &r).unwrap()));
        if lambda == 0.0 {
            prop_assert!(y.bit_eq(&x));
        }
    }

    #[test]
    fn original_unit_output_is_non_negative(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let mut u = OriginalUnit::<f32>::new(residual_branch(3, false, None, &mut rng).unwrap());
        let x = Tensor::<f32>::gaussian(&[2, 3, 5, 5], 0.0, 2.0, &mut rng).unwrap();
        prop_assert!(u.forward(&x, Mode::Train).unwrap().data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn layer_count_is_six_n_plus_four(n in 1usize..12, original in any::<bool>()) {
        let variant = if original { Variant::Original } else { Variant::Weighted };
        let net = build_network::<f32>(&NetworkConfig { base_width: 2, ..NetworkConfig::new(n, variant) }).unwrap();
        prop_assert_eq!(net.layer_count(), 6 * n + 4);
    }

    #[test]
    fn loader_bytes_round_trip(label in 0u8..10, pixels in prop::collection::vec(any::<u8>(), data::IMAGE_BYTES)) {
        let r = RawRecord { label, pixels };
        let bytes = r.to_bytes();
        prop_assert_eq!(bytes.len(), data::IMAGE_BYTES + 1);
        prop_assert_eq!(bytes[0], label);
        prop_assert_eq!(&bytes[1..], &r.pixels[..]);
        let s = DatasetStats::identity().normalize(&r);
        prop_assert_eq!(s.label, label as usize);
    }
}
