//! End-to-end checks of the public API: protocol splits, file formats,
//! training, checkpoints and the report tables.

use cdb_core::data::{
    dataset_from_idx, exponential_counts, load_csv, make_exponential_longtail, make_gaussian_blobs, split_balanced,
    to_idx_bytes,
};
use cdb_core::eval::{evaluate, report_tables, EvalOptions, RunSummary};
use cdb_core::trainer::checkpoint::{load_checkpoint, save_checkpoint};
use cdb_core::trainer::log::parse_jsonl;
use cdb_core::trainer::{run_training, MetricRecord, Splits};
use cdb_core::{ImbalanceProfile, LabeledDataset, TrainConfig};

fn long_tail(seed: u64) -> (LabeledDataset, LabeledDataset, LabeledDataset) {
    let counts: Vec<usize> = exponential_counts(120, 0.1, 5).iter().map(|n| n + 60).collect();
    let pool = make_gaussian_blobs(5, 8, &counts, 3.0, seed).unwrap();
    let (test, rest) = split_balanced(&pool, 40, 1).unwrap();
    let (val, rest) = split_balanced(&rest, 20, 2).unwrap();
    let train = make_exponential_longtail(&rest, &ImbalanceProfile::Exponential { mu: 0.1, n_max: 120 }, 3).unwrap();
    (train, val, test)
}

fn config(text: &str) -> TrainConfig {
    TrainConfig::from_kv_text(text).unwrap()
}

#[test]
fn protocol_counts() {
    let (train, val, test) = long_tail(0);
    assert_eq!(train.class_counts(), &[120, 67, 38, 21, 12]);
    assert!(val.is_balanced() && test.is_balanced());
    assert_eq!(val.len(), 100);
    assert_eq!(test.len(), 200);
}

#[test]
fn csv_round_trip_keeps_rows() {
    let (train, ..) = long_tail(1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.csv");
    train.write_csv(&path).unwrap();
    let back = load_csv(&path).unwrap();
    assert_eq!(back.labels(), train.labels());
    assert_eq!(back.features().as_slice(), train.features().as_slice());
}

#[test]
fn idx_round_trip() {
    let ds = make_gaussian_blobs(3, 4, &[5, 6, 7], 1.0, 9).unwrap();
    let (images, labels) = to_idx_bytes(&ds, 2, 2);
    let back = dataset_from_idx(&images, &labels).unwrap();
    assert_eq!(back.labels(), ds.labels());
    assert_eq!(back.dim(), 4);
    assert!(back.features().as_slice().iter().all(|&x| (0.0..=1.0).contains(&x)));
}

#[test]
fn train_checkpoint_and_reload_agree() {
    let (train, val, test) = long_tail(2);
    let cfg = config("train.method = cdb_w_ce\ntau.schedule = sigmoid\ntrain.epochs = 6\ntau.interval = 2\nmodel.hidden = 12\n");
    let run = run_training(&cfg, Splits { train: &train, validation: &val, test: &test }).unwrap();

    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &run.model, cfg.seed, &cfg.hash()).unwrap();
    let (model, manifest) = load_checkpoint(dir.path()).unwrap();
    assert_eq!(manifest.config_hash, cfg.hash());
    let opts = EvalOptions { train_counts: Some(train.class_counts().to_vec()), ..EvalOptions::default() };
    let a = evaluate(&run.model, &test, &opts).unwrap();
    let b = evaluate(&model, &test, &opts).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.per_class_accuracy, run.metrics.per_class_accuracy);

    let log = parse_jsonl(&run.log_jsonl()).unwrap();
    assert_eq!(log, run.log);
    let snapshots: Vec<_> = log.iter().filter(|r| matches!(r, MetricRecord::Snapshot { .. })).collect();
    assert_eq!(snapshots.len(), 3);
    assert!(matches!(log.last(), Some(MetricRecord::Final { .. })));
}

#[test]
fn config_text_round_trip() {
    let cfg = config(
        "train.method = cdb_s\ntau.schedule = poly:3\nstage2.classifier = lws\nstage2.method = cdb_w_ce\n\
         train.lr_schedule = cosine\neval.track_hard = true\n",
    );
    let again = TrainConfig::from_kv_text(&cfg.to_kv_text()).unwrap();
    assert_eq!(again, cfg);
    assert_eq!(again.hash(), cfg.hash());
}

#[test]
fn decoupled_run_reports_both_stages_in_a_table() {
    let (train, val, test) = long_tail(3);
    let splits = Splits { train: &train, validation: &val, test: &test };
    let mut runs = Vec::new();
    for (i, stage1) in ["ce", "cdb_w_ce"].iter().enumerate() {
        let cfg = config(&format!(
            "train.method = {stage1}\ntrain.epochs = 4\nstage2.classifier = crt\nstage2.method = cdb_s\nstage2.epochs = 2\nmodel.hidden = 8\n"
        ));
        let run = run_training(&cfg, splits).unwrap();
        assert!(run.stage1_metrics.is_some());
        let params = [("train.method", *stage1), ("stage2.method", "cdb_s"), ("stage2.classifier", "crt")]
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        runs.push(RunSummary { id: format!("r{i}"), params, seed: cfg.seed, metrics: run.metrics });
    }
    let t = report_tables(&runs).unwrap();
    let grid = t.decoupled_csv.unwrap();
    assert_eq!(grid.lines().next().unwrap(), "stage2_classifier,stage2_method,stage1_ce,stage1_cdb_w_ce");
    assert_eq!(grid.lines().count(), 2);
}
