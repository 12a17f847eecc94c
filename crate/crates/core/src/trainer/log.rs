//! JSON-lines metric log.
//!
//! Every line is one object with a `type` tag (`epoch`, `snapshot` or
//! `final`) and a `schema` version. Field order is fixed, so identical runs
//! produce byte-identical logs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{HardCounts, MetricsReport};

pub const LOG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MetricRecord {
    /// One pass over a sampled epoch.
    Epoch {
        schema: u32,
        stage: usize,
        epoch: usize,
        lr: f64,
        mean_loss: f64,
        steps: usize,
        class_distribution: Vec<f64>,
    },
    /// Difficulty measurement taken before `epoch` (or after the last one).
    Snapshot {
        schema: u32,
        stage: usize,
        epoch: usize,
        accuracies: Vec<f64>,
        difficulties: Vec<f64>,
        bias: f64,
        tau: f64,
        class_weights: Vec<f64>,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        hard_instances: Option<HardCounts>,
    },
    /// Test metrics at the end of a stage.
    Final { schema: u32, stage: usize, metrics: MetricsReport },
}

impl MetricRecord {
    pub fn stage(&self) -> usize {
        match self {
            MetricRecord::Epoch { stage, .. }
            | MetricRecord::Snapshot { stage, .. }
            | MetricRecord::Final { stage, .. } => *stage,
        }
    }
}

pub fn to_jsonl(records: &[MetricRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("metric records serialise"));
        out.push('\n');
    }
    out
}

pub fn parse_jsonl(text: &str) -> Result<Vec<MetricRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Format(format!("metric log line {}: {e}", i + 1)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let recs = vec![
            MetricRecord::Epoch {
                schema: LOG_SCHEMA_VERSION,
                stage: 1,
                epoch: 0,
                lr: 0.1,
                mean_loss: 0.693,
                steps: 10,
                class_distribution: vec![0.5, 0.5],
            },
            MetricRecord::Snapshot {
                schema: LOG_SCHEMA_VERSION,
                stage: 1,
                epoch: 1,
                accuracies: vec![0.9, 0.3],
                difficulties: vec![0.1, 0.7],
                bias: 1.9,
                tau: 1.2,
                class_weights: vec![0.06, 0.65],
                hard_instances: None,
            },
        ];
        let text = to_jsonl(&recs);
        assert!(text.starts_with("{\"type\":\"epoch\",\"schema\":1,"));
        assert!(!text.contains("hard_instances"));
        assert_eq!(parse_jsonl(&text).unwrap(), recs);
        assert!(parse_jsonl("{\"type\":\"nope\"}").is_err());
    }
}
