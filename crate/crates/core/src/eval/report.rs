use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::eval::MetricsReport;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Parameters that distinguish repetitions rather than settings.
const REPEAT_KEYS: &[&str] = &["train.seed", "repeat"];

/// One finished run as seen by the report tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub id: String,
    /// The swept parameter tuple, e.g. `tau.schedule -> sigmoid`.
    pub params: BTreeMap<String, String>,
    pub seed: u64,
    pub metrics: MetricsReport,
}

/// Rendered report outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Tables {
    /// One row per run.
    pub runs_csv: String,
    /// One row per setting, mean and std over repetitions.
    pub summary_csv: String,
    /// Stage-2 rows by stage-1 columns, when the runs form a decoupled grid.
    pub decoupled_csv: Option<String>,
    pub summary_json: serde_json::Value,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn csv_line(fields: &[String]) -> String {
    let mut line = fields.iter().map(|f| csv_field(f)).collect::<Vec<_>>().join(",");
    line.push('\n');
    line
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn setting_key(params: &BTreeMap<String, String>) -> Vec<(String, String)> {
    params
        .iter()
        .filter(|(k, _)| !REPEAT_KEYS.contains(&k.as_str()))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect()
}

struct Group {
    setting: Vec<(String, String)>,
    errors: Vec<f64>,
    macro_recall: Vec<f64>,
}

/// Builds the per-run, per-setting and (when applicable) decoupled-grid
/// tables. Runs must all have the same number of classes.
pub fn report_tables(runs: &[RunSummary]) -> Result<Tables> {
    let first = runs.first().ok_or_else(|| Error::Aggregation("no runs to report".into()))?;
    let k = first.metrics.num_classes;
    if let Some(bad) = runs.iter().find(|r| r.metrics.num_classes != k) {
        return Err(Error::Aggregation(format!(
            "run {} has {} classes, run {} has {k}",
            bad.id, bad.metrics.num_classes, first.id
        )));
    }

    let mut param_keys: Vec<String> = runs.iter().flat_map(|r| r.params.keys().cloned()).collect();
    param_keys.sort();
    param_keys.dedup();

    // per run
    let mut header = vec!["run_id".to_string()];
    header.extend(param_keys.iter().cloned());
    header.extend(
        ["seed", "top1_error_pct", "top5_acc", "macro_precision", "macro_recall", "many_acc", "medium_acc", "few_acc"]
            .map(String::from),
    );
    let mut runs_csv = csv_line(&header);
    for r in runs {
        let m = &r.metrics;
        let mut row = vec![r.id.clone()];
        row.extend(param_keys.iter().map(|k| r.params.get(k).cloned().unwrap_or_default()));
        row.extend([
            r.seed.to_string(),
            format!("{:.4}", m.error_pct()),
            format!("{:.6}", m.top5),
            format!("{:.6}", m.macro_precision),
            format!("{:.6}", m.macro_recall),
            opt(m.shot_accuracies.many),
            opt(m.shot_accuracies.medium),
            opt(m.shot_accuracies.few),
        ]);
        runs_csv.push_str(&csv_line(&row));
    }

    // per setting, in order of first appearance
    let mut groups: Vec<Group> = Vec::new();
    for r in runs {
        let setting = setting_key(&r.params);
        let g = match groups.iter_mut().position(|g| g.setting == setting) {
            Some(i) => &mut groups[i],
            None => {
                groups.push(Group { setting, errors: Vec::new(), macro_recall: Vec::new() });
                groups.last_mut().expect("just pushed")
            }
        };
        g.errors.push(r.metrics.error_pct());
        g.macro_recall.push(r.metrics.macro_recall);
    }
    let setting_keys: Vec<&String> =
        param_keys.iter().filter(|k| !REPEAT_KEYS.contains(&k.as_str())).collect();
    let mut header: Vec<String> = setting_keys.iter().map(|k| k.to_string()).collect();
    header.extend(["runs", "mean_error_pct", "std_error_pct", "mean_macro_recall"].map(String::from));
    let mut summary_csv = csv_line(&header);
    let mut json_rows = Vec::new();
    for g in &groups {
        let lookup: BTreeMap<_, _> = g.setting.iter().cloned().collect();
        let (mean, std) = mean_std(&g.errors);
        let (recall, _) = mean_std(&g.macro_recall);
        let mut row: Vec<String> =
            setting_keys.iter().map(|k| lookup.get(*k).cloned().unwrap_or_default()).collect();
        row.extend([g.errors.len().to_string(), format!("{mean:.4}"), format!("{std:.4}"), format!("{recall:.6}")]);
        summary_csv.push_str(&csv_line(&row));
        json_rows.push(json!({
            "setting": lookup,
            "runs": g.errors.len(),
            "mean_error_pct": mean,
            "std_error_pct": std,
            "mean_macro_recall": recall,
        }));
    }

    let decoupled_csv = decoupled_table(&groups);

    let summary_json = json!({
        "schema_version": REPORT_SCHEMA_VERSION,
        "num_classes": k,
        "num_runs": runs.len(),
        "settings": json_rows,
        "runs": runs.iter().map(|r| json!({
            "id": r.id,
            "params": r.params,
            "seed": r.seed,
            "top1_error_pct": r.metrics.error_pct(),
            "macro_precision": r.metrics.macro_precision,
            "macro_recall": r.metrics.macro_recall,
        })).collect::<Vec<_>>(),
    });

    Ok(Tables { runs_csv, summary_csv, decoupled_csv, summary_json })
}

/// Mean error laid out with `(stage2.classifier, stage2.method)` rows and
/// `train.method` columns.
fn decoupled_table(groups: &[Group]) -> Option<String> {
    const STAGE1: &str = "train.method";
    const S2_METHOD: &str = "stage2.method";
    const S2_CLASSIFIER: &str = "stage2.classifier";
    let lookups: Vec<BTreeMap<String, String>> =
        groups.iter().map(|g| g.setting.iter().cloned().collect()).collect();
    if !lookups.iter().all(|l| l.contains_key(STAGE1) && l.contains_key(S2_METHOD) && l.contains_key(S2_CLASSIFIER)) {
        return None;
    }
    let mut stage1: Vec<String> = Vec::new();
    let mut rows: Vec<(String, String)> = Vec::new();
    for l in &lookups {
        if !stage1.contains(&l[STAGE1]) {
            stage1.push(l[STAGE1].clone());
        }
        let row = (l[S2_CLASSIFIER].clone(), l[S2_METHOD].clone());
        if !rows.contains(&row) {
            rows.push(row);
        }
    }
    let mut header = vec!["stage2_classifier".to_string(), "stage2_method".to_string()];
    header.extend(stage1.iter().map(|s| format!("stage1_{s}")));
    let mut out = csv_line(&header);
    for (classifier, method) in &rows {
        let mut line = vec![classifier.clone(), method.clone()];
        for s1 in &stage1 {
            // other swept keys are averaged together
            let errs: Vec<f64> = groups
                .iter()
                .zip(&lookups)
                .filter(|(_, l)| &l[STAGE1] == s1 && &l[S2_METHOD] == method && &l[S2_CLASSIFIER] == classifier)
                .flat_map(|(g, _)| g.errors.iter().copied())
                .collect();
            line.push(if errs.is_empty() { String::new() } else { format!("{:.4}", mean_std(&errs).0) });
        }
        out.push_str(&csv_line(&line));
    }
    Some(out)
}
