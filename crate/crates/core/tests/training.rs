mod common;

use std::fs;

use rand::Rng;
use snider_core::data::{
    generate_sample_noisy, make_dataset, plate_specs, DatasetConfig, TrainingSample, ANGLES,
};
use snider_core::nn::{build_snider, Mode, Pass, SniderModel, VariantKind};
use snider_core::train::{
    build_losses, checkpoint_name, compute_losses, load_checkpoint, load_checkpoint_expecting,
    save_checkpoint, train, train_step, Batch, LossBreakdown, LossWeights, StageSchedule, TrainConfig,
    TrainRun, Trainer, FINAL_CHECKPOINT, METRICS_HEADER,
};
use snider_core::Error;

const TINY: VariantKind = VariantKind::SniderTiny;

fn samples(n_plates: usize, size: usize, seed: u64) -> Vec<TrainingSample> {
    let cfg = DatasetConfig {
        n_plates,
        size,
        seed,
        ..DatasetConfig::default()
    };
    let mut out = Vec::new();
    for (spec, s) in plate_specs(&cfg).unwrap() {
        for a in ANGLES {
            out.push(generate_sample_noisy(&spec, a as f64, size, s, 0.05).unwrap());
        }
    }
    out
}

fn params_bits(model: &SniderModel<f32>) -> Vec<u32> {
    model
        .params()
        .iter()
        .flat_map(|p| p.value.data().iter().map(|v| v.to_bits()))
        .collect()
}

#[test]
fn paper_weights_sum_to_one() {
    let w = LossWeights::default();
    assert_eq!(LossBreakdown::from_components([1.0; 4], &w).total, 1.0);
    assert_eq!(LossBreakdown::from_components([0.0; 4], &w).total, 0.0);
}

#[test]
fn total_matches_dot_product_oracle() {
    let mut r = common::rng(3);
    for _ in 0..1000 {
        let c: [f64; 4] = std::array::from_fn(|_| r.random_range(0.0..30.0));
        let w = LossWeights::new(
            r.random_range(0.0..1.0),
            r.random_range(0.0..1.0),
            r.random_range(0.0..1.0),
            r.random_range(0.0..1.0),
        )
        .unwrap();
        let oracle: f64 = c.iter().zip(w.as_array()).map(|(a, b)| a * b).sum();
        let b = LossBreakdown::from_components(c, &w);
        assert!((b.total - oracle).abs() <= 1e-9 * oracle.max(1.0));
        assert_eq!(b.components(), c);
    }
}

#[test]
fn weights_are_validated() {
    assert!(LossWeights::new(-0.1, 0.4, 0.15, 0.05).is_err());
    assert!(LossWeights::new(f64::NAN, 0.4, 0.15, 0.05).is_err());
    assert!(LossWeights::new(0.0, 0.0, 0.0, 0.0).is_ok());
}

#[test]
fn losses_match_direct_formulas_on_network_outputs() {
    let data = samples(1, 32, 4);
    let model = build_snider::<f64>(TINY, 32, 9).unwrap();
    let refs: Vec<&TrainingSample> = data.iter().collect();
    let w = LossWeights::default();
    let got = compute_losses(&model, &refs, &w).unwrap();

    let batch = Batch::<f64>::from_samples(&refs).unwrap();
    let mut pass = Pass::new(Mode::Train);
    let x = pass.tape.input(batch.lq.clone());
    let out = model.forward_main(&mut pass, x).unwrap();
    let aux = model.forward_aux(&mut pass, &out.fused).unwrap();
    let v = |var| pass.tape.value(var).data().to_vec();
    let mean = |xs: Vec<f64>| xs.iter().sum::<f64>() / xs.len() as f64;
    let (den, rec, seg, cnt) = (v(out.denoised), v(out.rectified), v(aux.segment), v(aux.count));
    let l_gd = mean(
        den.iter()
            .zip(batch.hq.data())
            .map(|(a, b)| (a - b).powi(2))
            .collect(),
    );
    // the rectifier is scored against the unrotated clean plate
    let l_gr = mean(
        rec.iter()
            .zip(batch.hq0.data())
            .map(|(a, b)| (a - b).abs())
            .collect(),
    );
    let l_ds = mean(
        seg.iter()
            .zip(batch.seg.data())
            .map(|(&p, &t)| {
                let p = p.clamp(1e-7, 1.0 - 1e-7);
                -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            })
            .collect(),
    );
    let l_dc = mean(
        cnt.iter()
            .zip(&data)
            .map(|(c, s)| (c - s.count as f64).powi(2))
            .collect(),
    );
    for (a, b) in got.components().iter().zip([l_gd, l_gr, l_ds, l_dc]) {
        assert!((a - b).abs() < 1e-9 * b.max(1.0), "{a} vs {b}");
    }
    let wrong_target = mean(
        rec.iter()
            .zip(batch.hq.data())
            .map(|(a, b)| (a - b).abs())
            .collect(),
    );
    assert!((got.l_gr - wrong_target).abs() > 1e-6);
    assert!(got.components().iter().all(|&c| c >= 0.0));
    assert!(compute_losses(&model, &[], &w).is_err());
}

#[test]
fn train_step_is_deterministic() {
    let data = samples(1, 32, 5);
    let refs: Vec<&TrainingSample> = data.iter().collect();
    let batch = Batch::from_samples(&refs).unwrap();
    let base = build_snider::<f32>(TINY, 32, 1).unwrap();
    let (mut a, mut b) = (base.clone(), base.clone());
    let w = LossWeights::default();
    for it in 0..3 {
        let ra = train_step(&mut a, &batch, &w, 1e-4, 5.0, it).unwrap();
        let rb = train_step(&mut b, &batch, &w, 1e-4, 5.0, it).unwrap();
        assert_eq!(ra, rb);
    }
    assert_eq!(params_bits(&a), params_bits(&b));
    assert_eq!(a.running_stats(), b.running_stats());
    assert_ne!(params_bits(&a), params_bits(&base));
    assert!(a.params().iter().all(|p| p.step_count == 3));
}

#[test]
fn zero_weights_leave_parameters_unchanged() {
    let data = samples(1, 32, 6);
    let refs: Vec<&TrainingSample> = data.iter().collect();
    let batch = Batch::from_samples(&refs).unwrap();
    let mut model = build_snider::<f32>(TINY, 32, 2).unwrap();
    let before = params_bits(&model);
    let zero = LossWeights::new(0.0, 0.0, 0.0, 0.0).unwrap();
    let out = train_step(&mut model, &batch, &zero, 1e-4, 5.0, 0).unwrap();
    assert_eq!(out.losses.total, 0.0);
    assert_eq!(out.grad_norm, 0.0);
    assert_eq!(params_bits(&model), before);
}

#[test]
fn single_steps_descend() {
    let data = samples(25, 64, 7);
    let mut r = common::rng(8);
    let w = LossWeights::default();
    let mut decreased = 0;
    for trial in 0..100 {
        let sample = &data[trial];
        let mut model = build_snider::<f32>(TINY, 64, r.random()).unwrap();
        let lr = [1e-4, 5e-5, 1e-5][trial % 3];
        let batch = Batch::from_samples(&[sample]).unwrap();
        let before = train_step(&mut model, &batch, &w, lr, 5.0, 0)
            .unwrap()
            .losses
            .total;
        let after = compute_losses(&model, &[sample], &w).unwrap().total;
        if after < before {
            decreased += 1;
        }
    }
    assert!(decreased >= 95, "{decreased}/100 steps decreased the loss");
}

#[test]
fn non_finite_loss_aborts_without_mutation() {
    let mut data = samples(1, 32, 9);
    data[0].i_lq.data_mut()[17] = f32::NAN;
    let refs: Vec<&TrainingSample> = data.iter().collect();
    let batch = Batch::from_samples(&refs).unwrap();
    let mut model = build_snider::<f32>(TINY, 32, 3).unwrap();
    let before = model.clone();
    let err = train_step(&mut model, &batch, &LossWeights::default(), 1e-4, 5.0, 41).unwrap_err();
    assert!(matches!(err, Error::NonFinite { iteration: 41, .. }), "{err}");
    assert_eq!(params_bits(&model), params_bits(&before));
    assert_eq!(model.running_stats(), before.running_stats());
    assert!(model.params().iter().all(|p| p.step_count == 0));
}

fn grads_by_net(
    model: &SniderModel<f64>,
    weights: LossWeights,
    data: &[TrainingSample],
) -> Vec<(String, f64)> {
    let refs: Vec<&TrainingSample> = data.iter().collect();
    let batch = Batch::from_samples(&refs).unwrap();
    let mut pass = Pass::new(Mode::Train);
    let graph = build_losses(model, &mut pass, &batch, &weights, false).unwrap();
    let mut store = model.params().clone();
    store.zero_grads();
    pass.tape
        .backward(graph.total)
        .unwrap()
        .accumulate_into(&pass.tape, &mut store)
        .unwrap();
    ["g_d.enc", "g_d.dec", "g_r.enc", "g_r.dec", "d_s", "d_c"]
        .iter()
        .map(|net| {
            let norm: f64 = store
                .iter()
                .filter(|p| SniderModel::<f64>::is_in(&p.name, net))
                .flat_map(|p| p.grad.as_ref().unwrap().iter())
                .map(|g| g * g)
                .sum();
            (net.to_string(), norm)
        })
        .collect()
}

#[test]
fn each_term_reaches_its_sub_networks() {
    let data = samples(1, 32, 10);
    let model = build_snider::<f64>(TINY, 32, 4).unwrap();
    let only = |i: usize| {
        let mut w = [0.0; 4];
        w[i] = 1.0;
        LossWeights::new(w[0], w[1], w[2], w[3]).unwrap()
    };
    let reached = |w| -> Vec<bool> {
        grads_by_net(&model, w, &data)
            .iter()
            .map(|(_, n)| *n > 0.0)
            .collect()
    };
    //                         g_d.enc g_d.dec g_r.enc g_r.dec d_s    d_c
    assert_eq!(reached(only(0)), [true, true, false, false, false, false]);
    assert_eq!(reached(only(1)), [true, true, true, true, false, false]);
    assert_eq!(reached(only(2)), [true, true, true, false, true, false]);
    assert_eq!(reached(only(3)), [true, true, true, false, false, true]);
}

#[test]
fn staged_schedule_covers_the_run() {
    let s = StageSchedule::staged(2000, [0.2, 0.3]).unwrap();
    let spans: Vec<_> = s
        .stages()
        .iter()
        .map(|st| (st.name.as_str(), st.start, st.end))
        .collect();
    assert_eq!(
        spans,
        [("denoise", 0, 400), ("rectify", 400, 1000), ("joint", 1000, 2000)]
    );
    assert!(!s.stage_at(399).unwrap().terms.gr);
    assert!(s.stage_at(400).unwrap().terms.gr && !s.stage_at(999).unwrap().terms.ds);
    assert!(s.stage_at(1999).unwrap().terms.dc);
    assert!(s.stage_at(2000).is_none());
    assert!(StageSchedule::staged(10, [0.7, 0.5]).is_err());
    let mut stages = s.stages().to_vec();
    stages[1].start = 401;
    assert!(StageSchedule::new(stages, 2000).is_err());
    assert!(StageSchedule::new(s.stages().to_vec(), 2001).is_err());
    let empty = StageSchedule::staged(0, [0.2, 0.3]).unwrap();
    assert!(empty.stage_at(0).is_none());
}

#[test]
fn learning_rate_switches_after_the_configured_epoch() {
    let cfg = TrainConfig::default();
    assert_eq!(cfg.iterations_per_epoch(800), 50);
    assert_eq!(cfg.lr_switch_at(800), 5000);
    assert_eq!(cfg.lr_at(4999, 800), 1e-4);
    assert_eq!(cfg.lr_at(5000, 800), 1e-5);
    assert_eq!(cfg.iterations_per_epoch(8), 1);
    let over = TrainConfig {
        lr_switch_iteration: Some(7),
        ..cfg.clone()
    };
    assert_eq!((over.lr_at(6, 800), over.lr_at(7, 800)), (1e-4, 1e-5));
    assert!(TrainConfig {
        lr_final: 1e-3,
        ..cfg.clone()
    }
    .validate()
    .is_err());
    assert!(TrainConfig {
        batch_size: 0,
        ..cfg.clone()
    }
    .validate()
    .is_err());
    assert!(TrainConfig {
        clip_norm: 0.0,
        ..cfg
    }
    .validate()
    .is_err());
}

#[test]
fn batches_are_seeded_epoch_permutations() {
    let data = samples(3, 32, 11);
    let cfg = TrainConfig {
        batch_size: 4,
        max_iterations: 10,
        seed: 5,
        ..TrainConfig::default()
    };
    let t = Trainer::new(cfg.clone(), data.clone()).unwrap();
    let t2 = Trainer::new(cfg.clone(), data.clone()).unwrap();
    for epoch in 0..3u64 {
        let mut seen: Vec<usize> = (0..3).flat_map(|k| t.batch_indices(epoch * 3 + k)).collect();
        assert_eq!(
            seen,
            (0..3)
                .flat_map(|k| t2.batch_indices(epoch * 3 + k))
                .collect::<Vec<_>>()
        );
        seen.sort();
        assert_eq!(seen, (0..12).collect::<Vec<_>>());
    }
    assert_ne!(t.batch_indices(0), t.batch_indices(3));
    let other = Trainer::new(TrainConfig { seed: 6, ..cfg }, data).unwrap();
    assert_ne!(t.batch_indices(0), other.batch_indices(0));
}

fn trained_model() -> SniderModel<f32> {
    let data = samples(1, 32, 12);
    let cfg = TrainConfig {
        batch_size: 2,
        max_iterations: 3,
        stage_fractions: [0.0, 0.0],
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(cfg, data).unwrap();
    while !t.is_done() {
        t.step().unwrap();
    }
    t.into_model()
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let model = trained_model();
    let bytes = save_checkpoint(&model, 3);
    let (back, it) = load_checkpoint::<f32>(&bytes).unwrap();
    assert_eq!(it, 3);
    assert_eq!(save_checkpoint(&back, 3), bytes);
    for (a, b) in model.params().iter().zip(back.params().iter()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.value, b.value);
        assert_eq!(a.adam_m, b.adam_m);
        assert_eq!(a.adam_v, b.adam_v);
        assert_eq!(a.step_count, b.step_count);
    }
    assert_eq!(model.running_stats(), back.running_stats());
    assert_eq!(back.kind(), TINY);
    assert_eq!(back.input_size(), 32);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let bytes = save_checkpoint(&build_snider::<f32>(TINY, 32, 0).unwrap(), 0);
    for cut in [0, 3, 4, 9, 20, 33, 40, 100, bytes.len() / 2, bytes.len() - 1] {
        match load_checkpoint::<f32>(&bytes[..cut]) {
            Err(Error::Parse { offset, .. }) => assert!(offset <= cut),
            other => panic!("cut at {cut}: {:?}", other.map(|r| r.1)),
        }
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(
        load_checkpoint::<f32>(&bad),
        Err(Error::Parse { offset: 0, .. })
    ));
    let mut bad = bytes.clone();
    bad[4] = 2;
    let err = load_checkpoint::<f32>(&bad).unwrap_err();
    assert!(matches!(err, Error::Parse { offset: 4, .. }), "{err}");
    let mut bad = bytes.clone();
    bad.push(0);
    assert!(load_checkpoint::<f32>(&bad).is_err());
    let err = load_checkpoint_expecting::<f32>(&bytes, VariantKind::Snider).unwrap_err();
    assert!(matches!(err, Error::VariantMismatch { .. }), "{err}");
    assert!(load_checkpoint_expecting::<f32>(&bytes, TINY).is_ok());
}

fn small_dataset(dir: &std::path::Path) -> std::path::PathBuf {
    let cfg = DatasetConfig {
        n_plates: 3,
        size: 32,
        seed: 2,
        split: 0.67,
        ..DatasetConfig::default()
    };
    make_dataset(dir, &cfg).unwrap().train_manifest
}

#[test]
fn zero_iterations_write_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path());
    let cfg = TrainConfig {
        max_iterations: 0,
        seed: 17,
        ..TrainConfig::default()
    };
    let run = TrainRun {
        out_dir: dir.path().join("run"),
        ..TrainRun::default()
    };
    let summary = train(&cfg, &manifest, &run, &mut |_| {}).unwrap();
    assert_eq!(summary.final_checkpoint, run.out_dir.join(FINAL_CHECKPOINT));
    let init = build_snider::<f32>(TINY, 32, 17).unwrap();
    assert_eq!(
        fs::read(&summary.final_checkpoint).unwrap(),
        save_checkpoint(&init, 0)
    );
    assert_eq!(
        fs::read_to_string(&summary.metrics).unwrap(),
        format!("{METRICS_HEADER}\n")
    );
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path());
    let cfg = TrainConfig {
        batch_size: 3,
        max_iterations: 6,
        lr_switch_iteration: Some(4),
        seed: 3,
        ..TrainConfig::default()
    };
    let full = TrainRun {
        out_dir: dir.path().join("full"),
        checkpoint_every: 2,
        ..TrainRun::default()
    };
    let mut rows = Vec::new();
    let a = train(&cfg, &manifest, &full, &mut |r| rows.push(r.clone())).unwrap();
    assert_eq!(rows.len(), 6);
    let stages: Vec<_> = rows.iter().map(|r| r.stage.as_str()).collect();
    assert_eq!(
        stages,
        ["denoise", "rectify", "rectify", "joint", "joint", "joint"]
    );
    assert_eq!(rows[3].lr, 1e-4);
    assert_eq!(rows[4].lr, 1e-5);
    assert!(full.out_dir.join(checkpoint_name(4)).exists());

    let part = TrainRun {
        out_dir: dir.path().join("part"),
        checkpoint_every: 2,
        stop_at: Some(3),
        ..TrainRun::default()
    };
    let stopped = train(&cfg, &manifest, &part, &mut |_| {}).unwrap();
    assert_eq!(stopped.iterations, 3);
    let resume = TrainRun {
        resume: Some(part.out_dir.join(checkpoint_name(2))),
        stop_at: None,
        ..part.clone()
    };
    let b = train(&cfg, &manifest, &resume, &mut |_| {}).unwrap();
    assert_eq!(b.iterations, 6);
    assert_eq!(
        fs::read(&a.final_checkpoint).unwrap(),
        fs::read(&b.final_checkpoint).unwrap()
    );
    assert_eq!(
        fs::read_to_string(&a.metrics).unwrap(),
        fs::read_to_string(&b.metrics).unwrap()
    );
    let csv = fs::read_to_string(&a.metrics).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.lines().nth(1).unwrap().starts_with("0,denoise,0.0001,"));
}

#[test]
fn unreadable_data_aborts_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let run = TrainRun {
        out_dir: dir.path().join("run"),
        ..TrainRun::default()
    };
    let err = train(
        &TrainConfig::default(),
        &dir.path().join("missing.txt"),
        &run,
        &mut |_| {},
    )
    .unwrap_err();
    assert!(matches!(err, Error::Io { .. }), "{err}");
    assert!(!run.out_dir.exists());
}

#[test]
fn trainer_rejects_mismatched_inputs() {
    let data = samples(1, 32, 13);
    let cfg = TrainConfig::default();
    assert!(Trainer::new(cfg.clone(), Vec::new()).is_err());
    let wrong = build_snider::<f32>(TINY, 64, 0).unwrap();
    assert!(Trainer::resume(cfg.clone(), data.clone(), wrong, 0).is_err());
    let full = build_snider::<f32>(VariantKind::Snider, 32, 0).unwrap();
    assert!(matches!(
        Trainer::resume(cfg, data, full, 0),
        Err(Error::VariantMismatch { .. })
    ));
}
