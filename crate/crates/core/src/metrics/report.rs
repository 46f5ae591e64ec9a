use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One metric value for one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub image: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub metric: String,
    pub mean: f64,
    pub count: usize,
    pub seed: u64,
}

/// Per-image records plus one aggregate per metric, written as JSON lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub records: Vec<MetricRecord>,
}

impl MetricReport {
    pub fn push(&mut self, image: impl Into<String>, metric: impl Into<String>, value: f64) {
        self.records.push(MetricRecord {
            image: image.into(),
            metric: metric.into(),
            value,
        });
    }

    /// Means per metric, in order of first appearance.
    pub fn aggregates(&self, seed: u64) -> Vec<Aggregate> {
        let mut out: Vec<Aggregate> = Vec::new();
        for r in &self.records {
            match out.iter_mut().find(|a| a.metric == r.metric) {
                Some(a) => {
                    a.mean += r.value;
                    a.count += 1;
                }
                None => out.push(Aggregate {
                    metric: r.metric.clone(),
                    mean: r.value,
                    count: 1,
                    seed,
                }),
            }
        }
        for a in &mut out {
            a.mean /= a.count as f64;
        }
        out
    }

    pub fn write_jsonl<W: Write>(&self, seed: u64, mut w: W) -> Result<()> {
        let io = |e| crate::Error::io("<report>", e);
        for r in &self.records {
            writeln!(w, "{}", serde_json::to_string(r).expect("record serializes")).map_err(io)?;
        }
        for a in self.aggregates(seed) {
            writeln!(w, "{}", serde_json::to_string(&a).expect("aggregate serializes")).map_err(io)?;
        }
        Ok(())
    }
}
