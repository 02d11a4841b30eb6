use std::sync::OnceLock;

use proptest::prelude::*;

use super::*;
use crate::datagen::{generate_dataset, Dataset, DatasetConfig, SplitSpec};
use crate::odomnet::OdomNetError;
use crate::preprocess::BScan;

fn dataset() -> &'static Dataset {
    static DS: OnceLock<Dataset> = OnceLock::new();
    DS.get_or_init(|| {
        let cfg = DatasetConfig {
            trajectories: 3,
            pairs_per_trajectory: 8,
            ..DatasetConfig::default()
        };
        generate_dataset(&cfg, 11).unwrap()
    })
}

fn net_cfg() -> NetConfig {
    NetConfig::tiny(64, 64)
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        optimizer: OptimizerConfig::adam(1e-2),
        validation_fraction: 0.25,
        ..TrainConfig::default()
    }
}

/// Returns fixed predictions in order.
struct Canned(Vec<f64>);

impl DistancePredictor for Canned {
    fn predict_pairs(&self, pairs: &[(&BScan, &BScan)]) -> Result<Vec<f64>, OdomNetError> {
        Ok(self.0[..pairs.len()].to_vec())
    }

    fn id(&self) -> String {
        "canned".into()
    }
}

#[test]
fn fixed_seed_reproduces_history_and_parameters() {
    let pairs = &dataset().pairs;
    let a = train(pairs, &net_cfg(), &quick(3)).unwrap();
    let b = train(pairs, &net_cfg(), &quick(3)).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.net.store, b.net.store);
    let c = train(pairs, &net_cfg(), &TrainConfig { seed: 1, ..quick(3) }).unwrap();
    assert_ne!(a.history, c.history);
}

#[test]
fn checkpoint_reload_gives_identical_rmse() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("best.bin");
    let pairs = &dataset().pairs;
    let cfg = TrainConfig {
        checkpoint: Some(path.clone()),
        ..quick(2)
    };
    let out = train(pairs, &net_cfg(), &cfg).unwrap();
    let loaded = load_model(&path).unwrap();
    assert_eq!(loaded.cfg, out.net.cfg);
    let refs: Vec<&OdomPair> = pairs.iter().collect();
    assert_eq!(pair_rmse(&loaded, &refs).unwrap(), pair_rmse(&out.net, &refs).unwrap());
    assert!(load_model(&dir.path().join("missing.bin")).is_err());
}

#[test]
fn best_so_far_never_increases() {
    let out = train(&dataset().pairs, &net_cfg(), &TrainConfig { eval_every: 2, ..quick(5) }).unwrap();
    let h = &out.history;
    assert!(h.epochs.windows(2).all(|w| w[1].best_eval_rmse <= w[0].best_eval_rmse));
    assert!(h.epochs[0].eval_rmse.is_nan());
    assert!(!h.epochs[4].eval_rmse.is_nan());
    let best = h.epochs.iter().filter(|e| !e.eval_rmse.is_nan()).map(|e| e.eval_rmse).fold(f64::INFINITY, f64::min);
    assert_eq!(h.epochs[h.best_epoch - 1].eval_rmse, best);
}

#[test]
fn early_stopping_waits_for_patience() {
    // A learning rate this small leaves the weights effectively frozen,
    // so validation error stalls.
    let cfg = TrainConfig {
        optimizer: OptimizerConfig::sgd(1e-12),
        patience: 2,
        ..quick(30)
    };
    let out = train(&dataset().pairs, &net_cfg(), &cfg).unwrap();
    let h = &out.history;
    assert!(h.stopped_early);
    assert_eq!(h.epochs.len(), h.best_epoch + 2);
}

#[test]
fn divergence_keeps_best_parameters() {
    let cfg = TrainConfig {
        optimizer: OptimizerConfig::sgd(1e200),
        ..quick(5)
    };
    match train(&dataset().pairs, &net_cfg(), &cfg) {
        Err(TrainError::Diverged { best, history, .. }) => {
            assert!(best.store.iter().all(|(_, p)| p.tensor.all_finite()));
            assert!(history.epochs.len() < 5);
        }
        other => panic!("expected divergence, got {:?}", other.map(|o| o.history)),
    }
}

#[test]
fn config_errors_are_all_reported() {
    let cfg = TrainConfig {
        epochs: 0,
        batch_size: 0,
        patience: 0,
        optimizer: OptimizerConfig::adam(0.0),
        ..TrainConfig::default()
    };
    assert_eq!(cfg.check().len(), 4);
    assert!(matches!(train(&dataset().pairs, &net_cfg(), &cfg), Err(TrainError::Config(e)) if e.len() == 4));
    assert!(matches!(train(&[], &net_cfg(), &TrainConfig::default()), Err(TrainError::Empty(_))));
    let json = r#"{"epochs": 3, "batch_sise": 4}"#;
    assert!(serde_json::from_str::<TrainConfig>(json).is_err());
}

#[test]
fn pooled_rmse_differs_from_mean_of_trajectories() {
    let errors = [("a".to_string(), 0.0), ("b".to_string(), 3.0), ("b".to_string(), 3.0)];
    let r = EvalReport::from_errors("x", &errors);
    assert!((r.overall_rmse - 6f64.sqrt()).abs() < 1e-15);
    assert!((r.overall_rmse - 2.449).abs() < 1e-3);
    let mean: f64 = r.per_trajectory.iter().map(|t| t.rmse).sum::<f64>() / 2.0;
    assert_eq!(mean, 1.5);
    assert_eq!(r.count, 3);
    assert_eq!(r.unit, "m");
}

#[test]
fn evaluation_examples() {
    let pairs = &dataset().pairs;
    let perfect = Canned(pairs.iter().map(|p| p.label).collect());
    assert_eq!(evaluate_relative(&perfect, pairs).unwrap().overall_rmse, 0.0);

    let mut one = pairs[0].clone();
    one.label = 1.3;
    let r = evaluate_relative(&Canned(vec![1.0]), std::slice::from_ref(&one)).unwrap();
    assert!((r.overall_rmse - 0.3).abs() < 1e-15);
    assert!(matches!(evaluate_relative(&perfect, &[]), Err(TrainError::Empty(_))));
}

#[test]
fn ablation_trains_every_variant_on_one_split() {
    let cfg = quick(1);
    let spec = SplitSpec::holdout(&["synth_02"]);
    let report = run_ablation(dataset(), &spec, &net_cfg(), &cfg, &Variant::ALL).unwrap();
    assert_eq!(report.rows.len(), 4);
    let labels: Vec<&str> = report.rows.iter().map(|r| variant_label(r.variant)).collect();
    assert_eq!(labels, ["Feature Concatenation", "Similarity Only", "Difference Only", "Full Network"]);
    for row in &report.rows {
        assert_eq!(row.report.count, 8);
        assert_eq!(row.report.per_trajectory.len(), 1);
        let solo = train(
            &crate::datagen::split(&dataset().pairs, &spec).unwrap().0,
            &net_cfg(),
            &TrainConfig { variant: row.variant, ..cfg.clone() },
        )
        .unwrap();
        assert_eq!(evaluate_relative(&solo.net, &dataset().pairs[16..]).unwrap().overall_rmse, row.report.overall_rmse);
    }
    let full = report.get(Variant::Full).unwrap().parameters;
    assert!(report.get(Variant::DifferenceOnly).unwrap().parameters < full);
    assert!(report.get(Variant::SimilarityOnly).unwrap().parameters < full);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ablation.csv");
    report.write_csv(&path).unwrap();
    let body = std::fs::read_to_string(&path).unwrap();
    assert!(body.starts_with("method,variant,parameters,synth_02_rmse_cm,overall_rmse_cm\n"));
    assert_eq!(body.lines().count(), 5);
}

#[test]
fn history_and_report_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(&dataset().pairs, &net_cfg(), &quick(2)).unwrap();
    let h = dir.path().join("history.csv");
    out.history.write_csv(&h).unwrap();
    let body = std::fs::read_to_string(&h).unwrap();
    assert_eq!(body.lines().next().unwrap(), "epoch,train_loss_m,eval_rmse_m,best_eval_rmse_m");
    assert_eq!(body.lines().count(), 3);

    let r = EvalReport::from_errors("full", &[("a".into(), 0.1), ("b".into(), 0.2)]);
    let p = dir.path().join("eval.csv");
    r.write_csv(&p).unwrap();
    let body = std::fs::read_to_string(&p).unwrap();
    let last = body.lines().last().unwrap();
    assert!(last.starts_with("full,overall,") && last.ends_with(",2,m"), "{last}");
}

#[test]
fn dataset_hash_tracks_content() {
    let ds = dataset();
    let h = dataset_hash(ds);
    assert_eq!(h.len(), 64);
    assert!(h.chars().all(|c| c.is_ascii_hexdigit()));
    assert_eq!(h, dataset_hash(&ds.clone()));
    let mut changed = ds.clone();
    changed.pairs[3].cur.data[7] += 1e-12;
    assert_ne!(h, dataset_hash(&changed));
    let mut relabelled = ds.clone();
    relabelled.pairs[0].trajectory = "synth_00x".into();
    assert_ne!(h, dataset_hash(&relabelled));
}

#[test]
fn run_metadata_is_json() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    let meta = RunMetadata {
        command: "train".into(),
        created: "2026-01-01T00:00:00Z".into(),
        seed: 3,
        config: serde_json::json!({"epochs": 2}),
        dataset_hash: None,
        threads: 1,
    };
    meta.write(&path).unwrap();
    let back: RunMetadata = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(back, meta);
}

proptest! {
    #[test]
    fn validation_split_partitions_indices(n in 1usize..300, fraction in 0.0f64..0.95, seed in any::<u64>()) {
        let (tr, val) = validation_split(n, fraction, seed);
        prop_assert_eq!(tr.len() + val.len(), n);
        prop_assert!(!tr.is_empty());
        let mut all: Vec<usize> = tr.iter().chain(&val).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(val.len(), ((n as f64 * fraction).round() as usize).min(n - 1));
        prop_assert_eq!((tr, val), validation_split(n, fraction, seed));
    }

    #[test]
    fn pooled_rmse_is_bounded_by_extremes(errs in proptest::collection::vec((0usize..3, -1.0f64..1.0), 1..40)) {
        let tagged: Vec<(String, f64)> = errs.iter().map(|(t, e)| (format!("t{t}"), *e)).collect();
        let r = EvalReport::from_errors("v", &tagged);
        let lo = r.per_trajectory.iter().map(|t| t.rmse).fold(f64::INFINITY, f64::min);
        let hi = r.per_trajectory.iter().map(|t| t.rmse).fold(0.0, f64::max);
        prop_assert!(r.overall_rmse >= lo - 1e-12 && r.overall_rmse <= hi + 1e-12);
    }
}
