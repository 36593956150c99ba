use affectivenet::affnet::{
    build, closed_form_ledger, count_params, export_activations, load_checkpoint, save_checkpoint, Head,
    Network, NetworkSpec, Variant,
};
use affectivenet::ndnn::gradcheck::{central_difference, relative_error};
use affectivenet::ndnn::{softmax_cross_entropy, Mode, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_batch(n: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = n * h * w * 3;
    Tensor::from_vec(&[n, h, w, 3], (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn small(variant: Variant, size: usize, divisor: usize) -> NetworkSpec {
    NetworkSpec::variant(variant)
        .with_input_size(size, size)
        .with_depth_divisor(divisor)
        .with_seed(3)
}

#[test]
fn built_count_matches_ledger_for_every_variant() {
    for v in Variant::ALL {
        for (size, div) in [(112, 1), (64, 2), (17, 8), (9, 4)] {
            let spec = NetworkSpec::variant(v).with_input_size(size, size).with_depth_divisor(div);
            let net = build::<f32>(&spec).unwrap();
            let ledger = closed_form_ledger(&spec);
            assert_eq!(count_params(&net), (ledger.total, ledger.bytes), "{v} @ {size}/{div}");
        }
    }
}

#[test]
fn variant_count_magnitudes_and_ordering() {
    let total = |v| closed_form_ledger(&NetworkSpec::variant(v)).total;
    let af = total(Variant::AffectiveNet);
    assert!((2_270_000..=2_274_000).contains(&af), "{af}");
    let womfl = total(Variant::WoMfl);
    assert!((1_020_000..=1_040_000).contains(&womfl), "{womfl}");
    let ks2 = total(Variant::Ks2);
    assert!((2_540_000..=2_560_000).contains(&ks2), "{ks2}");
    let (lfc, a3, a1, ks1) = (
        total(Variant::Lfc),
        total(Variant::All3x3),
        total(Variant::All1x1),
        total(Variant::Ks1),
    );
    assert!(womfl < lfc && lfc < a3.min(a1) && a3.max(a1) < af && af < ks1 && ks1 < ks2);
}

#[test]
fn womfl_has_no_32_wide_fc_and_ks2_kernels() {
    let net = build::<f32>(&NetworkSpec::variant(Variant::WoMfl)).unwrap();
    assert!(matches!(net.head, Head::Direct { .. }));
    for (name, t) in net.named_params() {
        if name.ends_with(".weights") {
            assert_ne!(t.shape()[1], 32, "{name}");
        }
    }
    let ks2 = build::<f32>(&NetworkSpec::variant(Variant::Ks2)).unwrap();
    for b in &ks2.branches {
        assert_eq!(b.parallel_a.size(), 7);
        assert_eq!(b.parallel_b.size(), 11);
    }
    let a1 = build::<f32>(&NetworkSpec::variant(Variant::All1x1)).unwrap();
    assert!(a1.branches.iter().all(|b| b.refine.size() == 1));
}

#[test]
fn full_size_shape_chain() {
    let net = build::<f32>(&NetworkSpec::default().with_depth_divisor(8)).unwrap();
    let trace = net.trace(&Tensor::zeros(&[1, 112, 112, 3]), Mode::Infer).unwrap();
    let hw = |name: &str| {
        let s = trace.activation(name).unwrap().shape().to_vec();
        (s[1], s[2])
    };
    assert_eq!(hw("branch1.stem"), (112, 112));
    assert_eq!(hw("branch3.parallel_a"), (56, 56));
    assert_eq!(hw("branch4.refine"), (28, 28));
    assert_eq!(hw("fm2"), (14, 14));
    assert_eq!(hw("mid"), (7, 7));
    assert_eq!(hw("fm3"), (4, 4));
    assert_eq!(trace.activation("microfeat").unwrap().channels(), 4 * 8);
}

#[test]
fn forward_rows_are_distributions() {
    for v in Variant::ALL {
        let mut net = build::<f64>(&small(v, 20, 4)).unwrap();
        let x = random_batch(3, 20, 20, 1);
        for mode in [Mode::Train, Mode::Infer] {
            let p = net.forward(&x, mode).unwrap();
            assert_eq!(p.shape(), &[3, 4]);
            for row in p.data().chunks(4) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn infer_mode_is_deterministic_and_equivariant() {
    let net = build::<f64>(&small(Variant::AffectiveNet, 24, 4)).unwrap();
    let a = random_batch(1, 24, 24, 10);
    let b = random_batch(1, 24, 24, 11);
    let c = random_batch(1, 24, 24, 12);
    let x = Tensor::stack(&[&a, &b, &a, &c]).unwrap().reshape(&[4, 24, 24, 3]).unwrap();
    let p = net.predict(&x).unwrap();
    assert_eq!(p.data()[0..4], p.data()[8..12]);
    let y = Tensor::stack(&[&c, &a, &b, &a]).unwrap().reshape(&[4, 24, 24, 3]).unwrap();
    let q = net.predict(&y).unwrap();
    assert_eq!(q.data()[0..4], p.data()[12..16]);
    assert_eq!(q.data()[4..8], p.data()[0..4]);
    assert_eq!(q.data()[8..12], p.data()[4..8]);
}

#[test]
fn wrong_input_size_rejected() {
    let net = build::<f32>(&small(Variant::AffectiveNet, 16, 8)).unwrap();
    assert!(net.predict(&Tensor::zeros(&[1, 17, 16, 3])).is_err());
    assert!(net.predict(&Tensor::zeros(&[1, 16, 16, 1])).is_err());
}

/// Checks sampled entries of every parameter tensor of `net` against central
/// differences; returns the worst relative error, the number of entries
/// checked, and the number skipped because the perturbation crossed a ReLU
/// kink.
fn gradient_check(net: &mut Network<f64>, x: &Tensor<f64>, labels: &[usize], per_tensor: usize) -> (f64, usize, usize) {
    let (_, grads, _) = net.loss_and_gradients(x, labels).unwrap();
    let grads = grads.into_tensors();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = 0.0f64;
    let mut skipped = 0;
    let mut checked = 0;
    for (p, grad) in grads.iter().enumerate() {
        let picks: Vec<usize> = if grad.len() <= per_tensor {
            (0..grad.len()).collect()
        } else {
            (0..per_tensor).map(|_| rng.gen_range(0..grad.len())).collect()
        };
        for i in picks {
            let mut patterns = Vec::new();
            let num = central_difference(1e-5, |d| {
                net.named_params_mut()[p].1.data_mut()[i] += d;
                let trace = net.trace(x, Mode::Train).unwrap();
                net.named_params_mut()[p].1.data_mut()[i] -= d;
                patterns.push(trace.relu_pattern());
                softmax_cross_entropy(&trace.logits, labels).unwrap().0
            });
            if patterns[0] != patterns[1] {
                skipped += 1;
                continue;
            }
            checked += 1;
            worst = worst.max(relative_error(grad.data()[i], num));
        }
    }
    (worst, checked, skipped)
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    for v in [Variant::AffectiveNet, Variant::Lfc, Variant::WoMfl] {
        let mut net = build::<f64>(&small(v, 16, 8)).unwrap();
        let x = random_batch(4, 16, 16, 99);
        let (worst, checked, skipped) = gradient_check(&mut net, &x, &[0, 1, 2, 3], 24);
        assert!(worst <= 1e-3, "{v}: worst relative error {worst}");
        assert!(skipped * 100 <= checked, "{v}: {skipped} kink crossings of {checked}");
    }
}

#[test]
fn variants_share_untouched_layers() {
    let base = build::<f32>(&NetworkSpec::default().with_seed(5)).unwrap();
    let base_params: Vec<_> = base.named_params().into_iter().map(|(n, t)| (n, t.clone())).collect();
    let touched: &[(Variant, &[&str])] = &[
        (Variant::Ks1, &["parallel_a", "parallel_b"]),
        (Variant::Ks2, &["parallel_a", "parallel_b"]),
        (Variant::All3x3, &[".stem"]),
        (Variant::All1x1, &[".refine"]),
        (Variant::Lfc, &["mfl.", "lfc.", "head.norm", "classifier"]),
        (Variant::WoMfl, &["mfl.", "head.norm", "classifier"]),
    ];
    for (v, prefixes) in touched {
        let net = build::<f32>(&NetworkSpec::variant(*v).with_seed(5)).unwrap();
        let params = net.named_params();
        for (name, t) in &base_params {
            let is_touched = prefixes.iter().any(|p| name.contains(p));
            match params.iter().find(|(n, _)| n == name) {
                Some((_, other)) if !is_touched => assert_eq!(*other, t, "{v}: {name}"),
                None if !is_touched => panic!("{v} lost untouched layer {name}"),
                _ => {}
            }
        }
        // the first branch stem is 3x3 in both, so all3x3 keeps it identical
        if *v == Variant::All3x3 {
            assert_eq!(net.branches[0].stem, base.branches[0].stem);
            assert_ne!(net.branches[1].stem, base.branches[1].stem);
        }
    }
}

#[test]
fn checkpoint_roundtrip_preserves_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let mut net = build::<f32>(&small(Variant::Lfc, 16, 8)).unwrap();
    let x: Tensor<f32> = random_batch(4, 16, 16, 2).cast();
    net.train_step(&x, &[0, 1, 2, 3], 0.01).unwrap();
    let path = dir.path().join("model.afnw");
    save_checkpoint(&net, &path).unwrap();
    let back = load_checkpoint::<f32>(&path).unwrap();
    assert_eq!(back, net);
    assert_eq!(back.predict(&x).unwrap(), net.predict(&x).unwrap());
}

#[test]
fn activation_export_counts() {
    let dir = tempfile::tempdir().unwrap();
    let net = build::<f32>(&small(Variant::AffectiveNet, 16, 1)).unwrap();
    let x: Tensor<f32> = random_batch(1, 16, 16, 4).cast();
    let files = export_activations(&net, &x, &["branch1.stem".to_string()], dir.path()).unwrap();
    assert_eq!(files.len(), 16);
    let files = export_activations(&net, &x, &["microfeat".to_string()], dir.path()).unwrap();
    assert_eq!(files.len(), 256);
    assert!(export_activations(&net, &x, &["nope".to_string()], dir.path()).is_err());

    let zero = Tensor::<f32>::zeros(&[16, 16, 3]);
    let files = export_activations(&net, &zero, &["branch2.stem".to_string()], dir.path()).unwrap();
    for f in files {
        let img = image::open(&f).unwrap().to_luma8();
        assert!(img.pixels().all(|p| p.0[0] == 0));
    }
}

#[test]
fn train_steps_reduce_loss_on_fixed_batch() {
    let mut net = build::<f64>(&small(Variant::AffectiveNet, 16, 4)).unwrap();
    let x = random_batch(8, 16, 16, 8);
    let labels = [0, 1, 2, 3, 0, 1, 2, 3];
    let first = net.train_step(&x, &labels, 0.05).unwrap();
    let mut last = first;
    for _ in 0..20 {
        last = net.train_step(&x, &labels, 0.05).unwrap();
    }
    assert!(last < first, "{first} -> {last}");
}

fn max_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn recalibrated_inference_matches_train_mode_on_the_same_batch() {
    let mut net = build::<f64>(&small(Variant::AffectiveNet, 24, 8)).unwrap();
    let x = random_batch(6, 24, 24, 11);
    let train_probs = net.clone().forward(&x, Mode::Train).unwrap();
    assert!(max_diff(&net.predict(&x).unwrap(), &train_probs) > 1e-6);

    net.recalibrate_batch_norm([&x]).unwrap();
    assert!(max_diff(&net.predict(&x).unwrap(), &train_probs) < 1e-9);
    let single = net.clone();
    net.recalibrate_batch_norm([&x, &x, &x]).unwrap();
    assert!(max_diff(&net.predict(&x).unwrap(), &single.predict(&x).unwrap()) < 1e-9);
}
