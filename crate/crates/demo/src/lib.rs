//! Browser demo: tau schedules, difficulty weights and a small two-class
//! training run, exposed to JavaScript as JSON strings.

use cdb_core::data::{make_gaussian_blobs, make_two_class_imbalance, split_balanced, two_class_counts};
use cdb_core::difficulty::{bias, class_weights, TauKind, TauSchedule};
use cdb_core::sampling::cdb_s_distribution;
use cdb_core::trainer::{run_training, MetricRecord, Splits};
use cdb_core::{ImbalanceProfile, TrainConfig};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const CURVES: [&str; 5] = ["linear", "poly:2", "poly:3", "log", "sigmoid"];
const MAX_EPOCHS: usize = 60;

fn schedule(name: &str, tau_max: f64, epsilon: f64) -> Result<TauSchedule, String> {
    let kind: TauKind = name.trim().parse().map_err(|e: cdb_core::Error| e.to_string())?;
    let s = TauSchedule { tau_max, epsilon, ..TauSchedule::new(kind) };
    s.validate().map_err(|e| e.to_string())?;
    Ok(s)
}

/// Tau against bias for every dynamic schedule, `samples` points on
/// `[0, max_bias]` (clipped to the attainable range).
pub fn tau_curves(samples: usize, max_bias: f64, tau_max: f64, epsilon: f64) -> Result<Value, String> {
    if samples < 2 {
        return Err("need at least two samples".into());
    }
    let first = schedule("linear", tau_max, epsilon)?;
    let top = max_bias.clamp(0.0, first.bias_max());
    let xs: Vec<f64> = (0..samples).map(|i| top * i as f64 / (samples - 1) as f64).collect();
    let mut series = Vec::new();
    for name in CURVES {
        let s = schedule(name, tau_max, epsilon)?;
        let ys = xs.iter().map(|&b| s.tau(b)).collect::<Result<Vec<_>, _>>().map_err(|e| e.to_string())?;
        series.push(json!({ "name": name, "tau": ys }));
    }
    Ok(json!({ "bias": xs, "bias_max": first.bias_max(), "series": series }))
}

/// Difficulties, bias, tau, loss weights and CDB-S sampling masses for a
/// comma-separated list of per-class accuracies.
pub fn weights_for(accuracies: &str, schedule_name: &str, floor: f64) -> Result<Value, String> {
    let acc: Vec<f64> = accuracies
        .split([',', ' '])
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("not a number: {t:?}")))
        .collect::<Result<_, _>>()?;
    if acc.len() < 2 {
        return Err("enter at least two accuracies".into());
    }
    if let Some(a) = acc.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(format!("accuracy {a} outside [0, 1]"));
    }
    let s = schedule(schedule_name, 5.0, 0.01)?;
    let b = bias(&acc, s.epsilon).min(s.bias_max());
    let tau = s.tau(b).map_err(|e| e.to_string())?;
    let d: Vec<f64> = acc.iter().map(|a| 1.0 - a).collect();
    let w = class_weights(&d, tau);
    let p = cdb_s_distribution(&d, tau, floor).map_err(|e| e.to_string())?;
    Ok(json!({ "accuracies": acc, "difficulties": d, "bias": b, "tau": tau, "weights": w, "sampling": p }))
}

/// Trains a small MLP on a two-class Gaussian problem where the head class
/// gets `head_ratio` of 1000 training points, and returns the validation
/// accuracies and tau at every epoch plus the final test recall per class.
pub fn two_class_run(head_ratio: f64, method: &str, tau: &str, epochs: usize, seed: u64) -> Result<Value, String> {
    let err = |e: cdb_core::Error| e.to_string();
    let profile = ImbalanceProfile::TwoClassHeadRatio { head_ratio, total: 1000 };
    profile.validate().map_err(err)?;
    let (head, tail) = two_class_counts(head_ratio, 1000);
    let (val_n, test_n) = (100, 200);
    let pool = make_gaussian_blobs(2, 2, &[head + val_n + test_n, tail + val_n + test_n], 2.0, seed).map_err(err)?;
    let (test, rest) = split_balanced(&pool, test_n, seed ^ 1).map_err(err)?;
    let (val, rest) = split_balanced(&rest, val_n, seed ^ 2).map_err(err)?;
    let train = make_two_class_imbalance(&rest, &profile, 0, 1, seed ^ 3).map_err(err)?;

    let mut cfg = TrainConfig { epochs: epochs.clamp(1, MAX_EPOCHS), batch_size: 50, hidden_dim: 8, seed, ..TrainConfig::default() };
    cfg.set("train.method", method).map_err(err)?;
    cfg.set("tau.schedule", tau).map_err(err)?;
    cfg.validate().map_err(err)?;
    let run = run_training(&cfg, Splits { train: &train, validation: &val, test: &test }).map_err(err)?;

    let (mut ep, mut head_acc, mut tail_acc, mut taus) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for r in &run.log {
        if let MetricRecord::Snapshot { epoch, accuracies, tau, .. } = r {
            ep.push(*epoch);
            head_acc.push(accuracies[0]);
            tail_acc.push(accuracies[1]);
            taus.push(*tau);
        }
    }
    let m = &run.metrics;
    Ok(json!({
        "train_counts": train.class_counts(),
        "epochs": ep,
        "head_acc": head_acc,
        "tail_acc": tail_acc,
        "tau": taus,
        "test_head_recall": m.per_class_accuracy[0],
        "test_tail_recall": m.per_class_accuracy[1],
        "test_error_pct": m.error_pct(),
    }))
}

fn to_js(r: Result<Value, String>) -> Result<String, JsValue> {
    r.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = tauCurves)]
pub fn tau_curves_js(samples: u32, max_bias: f64, tau_max: f64, epsilon: f64) -> Result<String, JsValue> {
    to_js(tau_curves(samples as usize, max_bias, tau_max, epsilon))
}

#[wasm_bindgen(js_name = classWeights)]
pub fn class_weights_js(accuracies: &str, schedule: &str, floor: f64) -> Result<String, JsValue> {
    to_js(weights_for(accuracies, schedule, floor))
}

#[wasm_bindgen(js_name = trainTwoClass)]
pub fn train_two_class_js(head_ratio: f64, method: &str, tau: &str, epochs: u32, seed: u32) -> Result<String, JsValue> {
    to_js(two_class_run(head_ratio, method, tau, epochs as usize, seed as u64))
}
