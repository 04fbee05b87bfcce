//! Per-step telemetry records and the append-only JSON Lines sink.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::harness::RunError;

/// One telemetry record. Step-level records carry the loss and gradient norm;
/// projection-event records carry the layer name with its subspace stats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricRecord {
    pub step: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layer: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_star: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
}

/// Serialized, flushed-per-append metrics writer; safe for concurrent layer
/// emitters.
pub struct MetricsSink {
    inner: Mutex<SinkInner>,
}

struct SinkInner {
    writer: BufWriter<File>,
    records: Vec<MetricRecord>,
}

impl MetricsSink {
    pub fn create(path: &Path) -> Result<Self, RunError> {
        let file = File::create(path)
            .map_err(|e| RunError::Io(format!("cannot create {}: {e}", path.display())))?;
        Ok(MetricsSink {
            inner: Mutex::new(SinkInner {
                writer: BufWriter::new(file),
                records: Vec::new(),
            }),
        })
    }

    pub fn append(&self, record: MetricRecord) -> Result<(), RunError> {
        let mut inner = self.inner.lock().expect("metrics sink poisoned");
        let line = serde_json::to_string(&record)
            .map_err(|e| RunError::Io(format!("metric serialization: {e}")))?;
        writeln!(inner.writer, "{line}").map_err(|e| RunError::Io(e.to_string()))?;
        inner
            .writer
            .flush()
            .map_err(|e| RunError::Io(e.to_string()))?;
        inner.records.push(record);
        Ok(())
    }

    pub fn into_records(self) -> Vec<MetricRecord> {
        self.inner
            .into_inner()
            .expect("metrics sink poisoned")
            .records
    }
}

/// Reads a metrics.jsonl file back into records.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>, RunError> {
    let file = File::open(path)
        .map_err(|e| RunError::Io(format!("cannot open {}: {e}", path.display())))?;
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| RunError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: MetricRecord = serde_json::from_str(&line).map_err(|e| {
            RunError::Io(format!(
                "{}:{}: bad metric record: {e}",
                path.display(),
                idx + 1
            ))
        })?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_field_elision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.jsonl");
        let sink = MetricsSink::create(&path).unwrap();
        sink.append(MetricRecord {
            step: 0,
            train_loss: Some(1.5),
            grad_norm: Some(2.0),
            ..MetricRecord::default()
        })
        .unwrap();
        sink.append(MetricRecord {
            step: 0,
            layer: Some("w".into()),
            r_star: Some(3),
            rho: Some(0.8),
            tau: Some(20),
            ..MetricRecord::default()
        })
        .unwrap();
        let records = sink.into_records();

        let text = std::fs::read_to_string(&path).unwrap();
        assert!(!text.contains("wall_time_ms"), "absent fields are omitted");
        assert!(!text.contains("null"));

        let back = read_metrics(&path).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn concurrent_appends_do_not_interleave() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.jsonl");
        let sink = MetricsSink::create(&path).unwrap();
        std::thread::scope(|scope| {
            for t in 0..4 {
                let sink = &sink;
                scope.spawn(move || {
                    for i in 0..50 {
                        sink.append(MetricRecord {
                            step: (t * 50 + i) as u64,
                            train_loss: Some(i as f64),
                            ..MetricRecord::default()
                        })
                        .unwrap();
                    }
                });
            }
        });
        let back = read_metrics(&path).unwrap();
        assert_eq!(back.len(), 200);
    }
}
