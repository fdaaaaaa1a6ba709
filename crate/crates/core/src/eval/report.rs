//! Aggregated evaluation output: one JSON document plus a flat CSV table
//! with a `task,metric,value` row per number.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::metrics::{MatchingMetrics, RetrievalReport};
use super::probe::ProbeResult;
use super::zeroshot::ZeroShotReport;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zero_shot: Option<ZeroShotReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub retrieval: Vec<RetrievalReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matching: Option<MatchingMetrics>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub probe: Vec<ProbeResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn write_json<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w)?;
        Ok(())
    }

    /// Every number in the report as a `(task, metric, value)` row, in the
    /// order the CSV emits them.
    pub fn rows(&self) -> Vec<(String, String, f64)> {
        let mut out = Vec::new();
        if let Some(zs) = &self.zero_shot {
            out.push(("zero_shot".to_string(), "accuracy".to_string(), zs.accuracy));
        }
        for r in &self.retrieval {
            for (name, value) in &r.metrics {
                out.push((r.task.clone(), name.clone(), *value));
            }
        }
        if let Some(m) = &self.matching {
            out.push(("matching".to_string(), "precision".to_string(), m.precision));
            out.push(("matching".to_string(), "recall".to_string(), m.recall));
            out.push(("matching".to_string(), "f1".to_string(), m.f1));
        }
        for p in &self.probe {
            out.push(("probe".to_string(), format!("accuracy@{}", p.ratio), p.accuracy));
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "task,metric,value")?;
        for (task, metric, value) in self.rows() {
            writeln!(w, "{task},{metric},{value}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;

    fn sample() -> EvalReport {
        EvalReport {
            zero_shot: Some(ZeroShotReport {
                predictions: vec![0, 1],
                accuracy: 0.5,
                n_classes: 2,
            }),
            retrieval: vec![RetrievalReport {
                task: "i2t".into(),
                metrics: BTreeMap::from([("R@1".to_string(), 0.25), ("R@5".to_string(), 0.75)]),
                n_queries: 4,
                k_values: vec![1, 5],
                excluded_queries: 0,
            }],
            matching: Some(MatchingMetrics { precision: 0.5, recall: 0.25, f1: 1.0 / 3.0, n_images: 4 }),
            probe: vec![ProbeResult { ratio: 0.1, accuracy: 0.9, n_train: 12 }],
            warnings: vec!["one warning".into()],
        }
    }

    #[test]
    fn json_round_trips() {
        let mut buf = Vec::new();
        sample().write_json(&mut buf).unwrap();
        let back: EvalReport = serde_json::from_slice(&buf).unwrap();
        assert_eq!(back.zero_shot.unwrap().accuracy, 0.5);
        assert_eq!(back.retrieval[0].metrics["R@5"], 0.75);
        assert_eq!(back.probe[0].n_train, 12);
    }

    #[test]
    fn csv_has_one_row_per_metric() {
        let mut buf = Vec::new();
        sample().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "task,metric,value");
        assert_eq!(lines.len(), 1 + 1 + 2 + 3 + 1);
        assert!(lines.contains(&"i2t,R@1,0.25"));
        assert!(lines.contains(&"probe,accuracy@0.1,0.9"));
    }
}
