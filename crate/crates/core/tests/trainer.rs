mod common;

use std::collections::HashMap;

use abutment_core::model::{is_decoder_param, AbutmentNet, ModelConfig};
use abutment_core::synth::{build_dataset, write_dataset, Resolution, Split};
use abutment_core::trainer::{
    evaluate, evaluate_checkpoint, predict_all, render_sweep, run_training, sweep, train_ssat, train_ssat_with_hook,
    train_ssl_ft, Paradigm, Sample, SweepKind, TrainConfig, TrainError, FINETUNE, JOINT, PRETRAIN,
    RESOLVED_CONFIG_FILE, RUNLOG_FILE,
};

fn small_samples(n: usize, seed: u64, cfg: &TrainConfig) -> Vec<Sample> {
    common::samples(n, seed, cfg)
}

fn max_grad(store: &abutment_core::tensor::ParamStore, select: impl Fn(&str) -> bool) -> f64 {
    store
        .iter()
        .filter(|(_, p)| select(&p.name))
        .flat_map(|(_, p)| p.tensor.grad().map(|g| g.to_vec()).unwrap_or_default())
        .fold(0.0, |m, g| m.max(g.abs()))
}

#[test]
fn zero_recon_weight_cuts_decoder_gradient() {
    let mut cfg = common::small_train_config();
    cfg.max_steps = 2;
    let data = small_samples(4, 1, &cfg);
    for (weight, expect_zero) in [(0.0, true), (0.1, false)] {
        cfg.loss.recon_weight = weight;
        let mut seen = Vec::new();
        train_ssat_with_hook(&cfg, &data, &[], &mut |_, _, store| {
            seen.push((max_grad(store, is_decoder_param), max_grad(store, |n| n.starts_with("encoder."))));
        })
        .unwrap();
        assert_eq!(seen.len(), 2);
        for (dec, enc) in seen {
            assert!(enc > 0.0);
            assert_eq!(dec == 0.0, expect_zero, "weight {weight}: decoder grad {dec}");
        }
    }
}

#[test]
fn identical_seeds_give_identical_runs() {
    let mut cfg = common::small_train_config();
    cfg.max_steps = 10;
    cfg.epochs = 10;
    let data = small_samples(4, 2, &cfg);
    let (a, la) = train_ssat(&cfg, &data, &[]).unwrap();
    let (b, lb) = train_ssat(&cfg, &data, &[]).unwrap();
    assert_eq!(la.steps.len(), 10);
    for (x, y) in la.steps.iter().zip(&lb.steps) {
        assert_eq!(x.loss.l_total.to_bits(), y.loss.l_total.to_bits());
    }
    assert_eq!(a.archive(), b.archive());
}

#[test]
fn finetuning_starts_from_the_pretrained_encoder() {
    let mut cfg = common::small_train_config();
    cfg.paradigm = Paradigm::SslFt;
    cfg.pretrain_epochs = 2;
    cfg.epochs = 1;
    let data = small_samples(4, 3, &cfg);
    let (_, log) = train_ssl_ft(&cfg, &data, &[]).unwrap();
    let sums: HashMap<_, _> = log.encoder_checksums.iter().cloned().collect();
    assert_eq!(sums["pretrain-end"], sums["finetune-start"]);
    assert_eq!(log.phase_steps(PRETRAIN).count(), 4);
    assert_eq!(log.phase_steps(FINETUNE).count(), 2);
    assert!(log.steps.iter().filter(|s| s.phase == PRETRAIN).all(|s| s.loss.l_rg == 0.0));
    assert!(log.steps.iter().filter(|s| s.phase == FINETUNE).all(|s| s.loss.l_re == 0.0));
}

#[test]
fn one_joint_step_moves_every_branch() {
    let mut cfg = common::small_train_config();
    cfg.max_steps = 1;
    let data = small_samples(2, 4, &cfg);
    let mut before = None;
    let (net, log) = train_ssat_with_hook(&cfg, &data, &[], &mut |phase, _, store| {
        assert_eq!(phase, JOINT);
        before = Some(store.clone());
    })
    .unwrap();
    assert_eq!(log.phase_steps(JOINT).count(), 1);
    let before = before.unwrap();
    for prefix in ["embed.", "encoder.", "decoder.", "fusion.", "head."] {
        let moved = net
            .store()
            .iter()
            .filter(|(_, p)| p.name.starts_with(prefix))
            .any(|(_, p)| before.by_name(&p.name).unwrap().values() != p.tensor.values());
        assert!(moved, "{prefix} unchanged after one step");
    }
}

#[test]
fn evaluation_scores_track_prediction_error() {
    let cfg = common::small_train_config();
    let net = AbutmentNet::new(&cfg.model, 9).unwrap();
    let data = small_samples(10, 5, &cfg);
    let pred = predict_all(&net, &data).unwrap();
    assert_eq!(pred, predict_all(&net, &data).unwrap());

    let mut exact = data.clone();
    for (s, p) in exact.iter_mut().zip(&pred) {
        s.label = *p;
    }
    let r = evaluate(&net, &exact).unwrap();
    assert_eq!((r.transgingival, r.diameter, r.height), (100.0, 100.0, 100.0));

    let mut off = exact.clone();
    for s in &mut off {
        s.label.transgingival += 1.0;
        s.label.diameter -= 1.2;
        s.label.height += 2.0;
    }
    let r = evaluate(&net, &off).unwrap();
    assert_eq!((r.transgingival, r.diameter, r.height), (0.0, 0.0, 0.0));

    let r = evaluate(&net, &data).unwrap();
    assert!(r.mean() >= 0.0 && r.mean() <= 100.0);
    assert_eq!(r, evaluate(&net, &data).unwrap());
}

#[test]
fn saved_run_reproduces_its_final_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = build_dataset(20, 0.85, 6).unwrap();
    write_dataset(&manifest, &dir.path().join("data"), &Resolution::default()).unwrap();

    let mut cfg = common::small_train_config();
    cfg.max_steps = 2;
    cfg.manifest = Some(dir.path().join("data/manifest.jsonl"));
    cfg.cache_dir = Some(dir.path().join("cache"));
    cfg.output_dir = dir.path().join("run");
    let log = run_training(&cfg).unwrap();
    let ckpt = log.checkpoint.clone().unwrap();
    let again = evaluate_checkpoint(&cfg, &ckpt, Split::Test).unwrap();
    assert_eq!(Some(again), log.final_eval);
    assert!(evaluate_checkpoint(&cfg, &ckpt, Split::Train).is_ok());

    let resolved = std::fs::read_to_string(cfg.output_dir.join(RESOLVED_CONFIG_FILE)).unwrap();
    assert_eq!(TrainConfig::from_toml(&resolved).unwrap(), cfg);
    let runlog = std::fs::read_to_string(cfg.output_dir.join(RUNLOG_FILE)).unwrap();
    assert_eq!(runlog.lines().filter(|l| l.contains("\"kind\":\"step\"")).count(), 2);
    for line in runlog.lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }
}

#[test]
fn fraction_sweep_reports_one_row_per_value() {
    let mut cfg = common::small_train_config();
    cfg.max_steps = 1;
    let data = small_samples(6, 7, &cfg);
    let rows = sweep(&cfg, SweepKind::TrainFraction, &[0.5, 1.0], &data[..4], &data[4..]).unwrap();
    assert_eq!(rows.len(), 2);
    let table = render_sweep(SweepKind::TrainFraction, &rows);
    let lines: Vec<_> = table.lines().collect();
    assert!(lines[0].starts_with("train_fraction,iou_transgingival"));
    assert!(lines[1].starts_with("0.5,") && lines[2].starts_with("1,"));
    assert!("mask".parse::<SweepKind>().is_ok() && "depth".parse::<SweepKind>().is_err());
}

#[test]
fn non_finite_loss_stops_training() {
    let cfg = common::small_train_config();
    let mut data = small_samples(2, 8, &cfg);
    data[1].pfs.features.values_mut()[5] = f64::NAN;
    match train_ssat(&cfg, &data, &[]) {
        Err(TrainError::NonFinite { phase, .. }) => assert_eq!(phase, JOINT),
        other => panic!("expected a non-finite error, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn config_files_round_trip_and_validate() {
    let cfg = TrainConfig { paradigm: Paradigm::SslFt, seed: 17, ..TrainConfig::default() };
    assert_eq!(TrainConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    assert!(TrainConfig::from_toml("epochs = 3\nwarmup = 2\n").is_err());
    assert!(TrainConfig::from_toml("paradigm = \"ssl-ft\"\npretrain_epochs = 0\n").is_err());
    assert!(TrainConfig::from_toml("[remesh]\nsubdivision_levels = 2\n").is_err());
    assert!(TrainConfig::from_toml("train_fraction = 0.0\n").is_err());
    let partial = TrainConfig::from_toml("epochs = 3\n[model]\nmask_ratio = 0.25\n").unwrap();
    assert_eq!((partial.epochs, partial.model.mask_ratio, partial.batch_size), (3, 0.25, 4));
    assert_eq!(partial.model, ModelConfig { mask_ratio: 0.25, ..ModelConfig::desk() });
}
