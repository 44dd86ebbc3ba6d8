use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snider_core::nn::{build_snider, Layer, Mode, NetworkVariant, Pass, SniderModel, VariantKind};
use snider_core::Tensor;

fn image(seed: u64, b: usize, s: usize) -> Tensor<f32> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn([b, 3, s, s], |_| r.random_range(0.0..1.0))
}

#[test]
fn layer_tables_match_the_architectures() {
    let full = NetworkVariant::new(VariantKind::Snider);
    let convs: Vec<usize> = full
        .encoder
        .iter()
        .filter_map(|l| match l {
            Layer::Conv {
                kernel: 3,
                channels,
                stride: 1,
            } => Some(*channels),
            _ => None,
        })
        .collect();
    assert_eq!(convs, [32, 32, 64, 64, 128, 128, 256, 256, 512, 512]);
    assert_eq!(full.encoder.iter().filter(|l| **l == Layer::MaxPool).count(), 4);
    assert_eq!(full.decoder.iter().filter(|l| **l == Layer::UpConcat).count(), 4);
    assert_eq!(
        full.output,
        Layer::Conv {
            kernel: 1,
            channels: 3,
            stride: 1
        }
    );
    assert_eq!(full.divisor(), 16);
    assert_eq!(full.fused_channels(), 512);

    let tiny = NetworkVariant::new(VariantKind::SniderTiny);
    assert_eq!(tiny.encoder.len(), 3);
    assert_eq!(tiny.decoder.len() + 1, 3);
    assert_eq!(
        tiny.output,
        Layer::Deconv {
            kernel: 7,
            channels: 3,
            factor: 2
        }
    );
    assert_eq!(tiny.divisor(), 4);
    assert_eq!(tiny.fused_channels(), 128);
}

#[test]
fn indivisible_input_sizes_are_rejected() {
    assert!(build_snider::<f32>(VariantKind::SniderTiny, 66, 0).is_err());
    assert!(build_snider::<f32>(VariantKind::SniderTiny, 0, 0).is_err());
    assert!(build_snider::<f32>(VariantKind::Snider, 40, 0).is_err());
    assert!(build_snider::<f32>(VariantKind::SniderTiny, 8, 0).is_ok());
}

#[test]
fn parameter_counts_are_pinned() {
    // hand-tallied from the layer tables
    for (kind, size, count) in [
        (VariantKind::SniderTiny, 64, 5_751_112),
        (VariantKind::SniderTiny, 8, 1_622_344),
        (VariantKind::Snider, 32, 20_063_208),
    ] {
        assert_eq!(NetworkVariant::new(kind).parameter_count(size), count);
        let m = build_snider::<f32>(kind, size, 1).unwrap();
        assert_eq!(m.num_parameters(), count);
        assert_eq!(m.params().iter().map(|p| p.adam_m.len()).sum::<usize>(), count);
    }
    assert_eq!(
        NetworkVariant::new(VariantKind::Snider).parameter_count(320),
        123_872_232
    );
}

#[test]
fn initialization_is_seeded_gaussian() {
    let a = build_snider::<f32>(VariantKind::SniderTiny, 16, 5).unwrap();
    let b = build_snider::<f32>(VariantKind::SniderTiny, 16, 5).unwrap();
    let c = build_snider::<f32>(VariantKind::SniderTiny, 16, 6).unwrap();
    assert_eq!(a.params(), b.params());
    assert_ne!(a.params(), c.params());
    let mut weights = Vec::new();
    for p in a.params().iter() {
        if p.name.ends_with(".weight") {
            weights.extend(p.value.data().iter().map(|&v| v as f64));
        } else if p.name.ends_with(".bias") || p.name.ends_with(".beta") {
            assert!(p.value.data().iter().all(|&v| v == 0.0), "{}", p.name);
        } else {
            assert!(p.value.data().iter().all(|&v| v == 1.0), "{}", p.name);
        }
    }
    let n = weights.len() as f64;
    let mean = weights.iter().sum::<f64>() / n;
    let std = (weights.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!(mean.abs() < 1e-4);
    assert!((std - 0.01).abs() < 2e-4);
}

fn main_and_aux(m: &SniderModel<f32>, x: &Tensor<f32>, mode: Mode) -> Vec<Tensor<f32>> {
    let mut pass = Pass::new(mode);
    let xv = pass.tape.input(x.clone());
    let main = m.forward_main(&mut pass, xv).unwrap();
    let aux = m.forward_aux(&mut pass, &main.fused).unwrap();
    [
        main.denoised,
        main.rectified,
        main.fused.feature,
        aux.segment,
        aux.count,
    ]
    .into_iter()
    .map(|v| pass.tape.value(v).clone())
    .collect()
}

#[test]
fn tiny_shapes_and_ranges() {
    let m = build_snider::<f32>(VariantKind::SniderTiny, 64, 3).unwrap();
    let x = image(1, 2, 64);
    for mode in [Mode::Train, Mode::Eval] {
        let out = main_and_aux(&m, &x, mode);
        assert_eq!(out[0].shape(), &[2, 3, 64, 64]);
        assert_eq!(out[1].shape(), &[2, 3, 64, 64]);
        assert_eq!(out[2].shape(), &[2, 128, 16, 16]);
        assert_eq!(out[3].shape(), &[2, 1, 64, 64]);
        assert_eq!(out[4].shape(), &[2, 1]);
        for img in &out[..2] {
            assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        assert!(out[3].data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(out.iter().all(|t| t.all_finite()));
    }
}

#[test]
fn full_variant_runs_with_matching_skips() {
    let m = build_snider::<f32>(VariantKind::Snider, 32, 3).unwrap();
    let out = main_and_aux(&m, &image(2, 1, 32), Mode::Train);
    assert_eq!(out[0].shape(), &[1, 3, 32, 32]);
    assert_eq!(out[1].shape(), &[1, 3, 32, 32]);
    assert_eq!(out[2].shape(), &[1, 512, 2, 2]);
    assert_eq!(out[3].shape(), &[1, 1, 32, 32]);
    assert_eq!(out[4].shape(), &[1, 1]);
}

#[test]
fn full_denoiser_maps_320_to_320() {
    let m = build_snider::<f32>(VariantKind::Snider, 320, 0).unwrap();
    let y = m.denoise(&image(3, 1, 320)).unwrap();
    assert_eq!(y.shape(), &[1, 3, 320, 320]);
    assert!(y.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn fusion_is_additive() {
    let mut m = build_snider::<f32>(VariantKind::SniderTiny, 16, 4).unwrap();
    // zero scale and shift on the rectifier's last encoder norm silence its feature
    let last = m.variant().encoder.len() - 1;
    for p in m.params_mut().iter_mut() {
        if p.name == format!("g_r.enc.{last}.bn.gamma") || p.name == format!("g_r.enc.{last}.bn.beta") {
            p.value.data_mut().fill(0.0);
        }
    }
    let mut pass = Pass::new(Mode::Train);
    let x = pass.tape.input(image(4, 2, 16));
    let main = m.forward_main(&mut pass, x).unwrap();
    assert!(pass
        .tape
        .value(main.rectifier_feature)
        .data()
        .iter()
        .all(|&v| v == 0.0));
    assert_eq!(
        pass.tape.value(main.fused.feature),
        pass.tape.value(main.denoiser_feature)
    );
}

#[test]
fn eval_passes_are_bit_identical_and_recover_matches() {
    let m = build_snider::<f32>(VariantKind::SniderTiny, 32, 8).unwrap();
    let x = image(5, 3, 32);
    let a = main_and_aux(&m, &x, Mode::Eval);
    let b = main_and_aux(&m, &x, Mode::Eval);
    assert_eq!(a, b);
    let rec = m.recover(&x).unwrap();
    assert_eq!(rec, a[1]);
    assert_eq!(m.denoise(&x).unwrap(), a[0]);
}

#[test]
fn shape_mismatches_are_rejected() {
    let m = build_snider::<f32>(VariantKind::SniderTiny, 16, 0).unwrap();
    assert!(m.recover(&image(0, 1, 32)).is_err());
    assert!(m.recover(&Tensor::zeros([1, 1, 16, 16])).is_err());
    let mut pass = Pass::new(Mode::Eval);
    let wrong = pass.tape.input(Tensor::zeros([1, 64, 4, 4]));
    let fused = snider_core::nn::Fused {
        feature: wrong,
        skips: vec![],
    };
    assert!(m.forward_aux(&mut pass, &fused).is_err());
}

#[test]
fn total_loss_reaches_every_parameter() {
    for (kind, size) in [(VariantKind::SniderTiny, 16), (VariantKind::Snider, 32)] {
        let mut m = build_snider::<f32>(kind, size, 9).unwrap();
        let x = image(6, 2, size);
        let mut pass = Pass::new(Mode::Train);
        let xv = pass.tape.input(x.clone());
        let main = m.forward_main(&mut pass, xv).unwrap();
        let aux = m.forward_aux(&mut pass, &main.fused).unwrap();
        let t = &mut pass.tape;
        let l1 = t.mse_loss(main.denoised, &x).unwrap();
        let l2 = t.l1_loss(main.rectified, &x).unwrap();
        let seg = Tensor::from_fn([2, 1, size, size], |i| (i % 3 == 0) as u8 as f32);
        let l3 = t.bce_loss(aux.segment, &seg).unwrap();
        let l4 = t.mse_loss(aux.count, &Tensor::full([2, 1], 5.0)).unwrap();
        let total = t
            .weighted_sum(&[(l1, 0.4), (l2, 0.4), (l3, 0.15), (l4, 0.05)])
            .unwrap();
        snider_core::autodiff::backward(t, total, m.params_mut()).unwrap();
        for p in m.params().iter() {
            let g = p
                .grad
                .as_deref()
                .unwrap_or_else(|| panic!("no gradient for {}", p.name));
            assert!(g.iter().all(|v| v.is_finite()));
            if p.name.ends_with(".weight") {
                assert!(g.iter().any(|&v| v != 0.0), "zero gradient for {}", p.name);
            }
        }
    }
}

#[test]
fn running_statistics_follow_momentum() {
    let mut m = build_snider::<f64>(VariantKind::SniderTiny, 8, 2).unwrap();
    let mut pass = Pass::new(Mode::Train);
    let x = pass.tape.input(image(7, 2, 8).cast());
    m.forward_main(&mut pass, x).unwrap();
    let updates = pass.into_updates();
    assert_eq!(
        updates.len(),
        m.running_stats()
            .iter()
            .filter(|r| r.name.starts_with("g_"))
            .count()
    );
    let (slot, stats) = &updates[0];
    let before = m.running_stats()[*slot].clone();
    m.commit_norm_updates(&updates);
    let after = &m.running_stats()[*slot];
    for c in 0..stats.mean.len() {
        assert!((after.mean[c] - (0.9 * before.mean[c] + 0.1 * stats.mean[c])).abs() < 1e-15);
        assert!((after.var[c] - (0.9 * before.var[c] + 0.1 * stats.var[c])).abs() < 1e-15);
    }
}
