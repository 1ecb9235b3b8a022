use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRACE_HEADER: [&str; 5] = ["iteration", "d_loss", "g_loss", "d_acc_real", "d_acc_fake"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub iteration: u64,
    pub d_loss: f64,
    pub g_loss: f64,
    pub d_acc_real: f64,
    pub d_acc_fake: f64,
}

impl TraceRecord {
    /// Accuracy over real and fake samples together, for equal batch sizes.
    pub fn d_acc_combined(&self) -> f64 {
        (self.d_acc_real + self.d_acc_fake) / 2.0
    }
}

/// Per-iteration losses and discriminator accuracies.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LossTrace {
    records: Vec<TraceRecord>,
}

impl LossTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: Vec<TraceRecord>) -> Result<Self> {
        let mut trace = Self::new();
        for r in records {
            trace.push(r)?;
        }
        Ok(trace)
    }

    /// Appends `record`; iterations must increase strictly and accuracies lie in [0, 1].
    pub fn push(&mut self, record: TraceRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.iteration <= last.iteration {
                return Err(Error::Domain(format!(
                    "iteration {} does not follow {}",
                    record.iteration, last.iteration
                )));
            }
        }
        for acc in [record.d_acc_real, record.d_acc_fake] {
            if !(0.0..=1.0).contains(&acc) {
                return Err(Error::Domain(format!("accuracy {acc} outside [0, 1]")));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// Mean combined accuracy over the last `window` records.
    pub fn recent_accuracy(&self, window: usize) -> Option<f64> {
        if window == 0 || self.records.len() < window {
            return None;
        }
        let tail = &self.records[self.records.len() - window..];
        Some(tail.iter().map(TraceRecord::d_acc_combined).sum::<f64>() / window as f64)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;
        w.write_record(TRACE_HEADER)
            .map_err(|e| csv_error(path, e))?;
        for r in &self.records {
            w.serialize(r).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Parses a trace CSV. Errors name the offending line.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
        if header.iter().ne(TRACE_HEADER) {
            return Err(Error::Domain(format!(
                "{}: line 1: expected header {}, got {}",
                path.display(),
                TRACE_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut trace = Self::new();
        for (i, row) in r.deserialize::<TraceRecord>().enumerate() {
            let line = i + 2;
            let record =
                row.map_err(|e| Error::Domain(format!("{}: line {line}: {e}", path.display())))?;
            trace
                .push(record)
                .map_err(|e| Error::Domain(format!("{}: line {line}: {e}", path.display())))?;
        }
        Ok(trace)
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(source) => Error::io(path, source),
            _ => unreachable!("checked io kind"),
        }
    } else {
        Error::Domain(format!("{}: {e}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(i: u64) -> TraceRecord {
        TraceRecord {
            iteration: i,
            d_loss: 1.0 / (i as f64 + 3.0),
            g_loss: -0.1 * i as f64,
            d_acc_real: 0.75,
            d_acc_fake: 0.5,
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let trace = LossTrace::from_records((1..=20).map(rec).collect()).unwrap();
        trace.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "iteration,d_loss,g_loss,d_acc_real,d_acc_fake"
        );
        assert_eq!(text.lines().count(), 21);
        assert_eq!(LossTrace::read_csv(&path).unwrap(), trace);
    }

    #[test]
    fn ordering_and_range_enforced() {
        let mut t = LossTrace::new();
        t.push(rec(2)).unwrap();
        assert!(t.push(rec(2)).is_err());
        assert!(t
            .push(TraceRecord {
                d_acc_real: 1.5,
                ..rec(3)
            })
            .is_err());
    }

    #[test]
    fn malformed_line_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(
            &path,
            "iteration,d_loss,g_loss,d_acc_real,d_acc_fake\n1,0.5,0.5,1,1\n2,x,0.5,1,1\n",
        )
        .unwrap();
        let err = LossTrace::read_csv(&path).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        std::fs::write(&path, "iter,d\n").unwrap();
        assert!(LossTrace::read_csv(&path)
            .unwrap_err()
            .to_string()
            .contains("line 1"));
    }

    #[test]
    fn recent_accuracy_window() {
        let t = LossTrace::from_records((1..=4).map(rec).collect()).unwrap();
        assert_eq!(t.recent_accuracy(5), None);
        assert_eq!(t.recent_accuracy(2), Some(0.625));
    }
}
