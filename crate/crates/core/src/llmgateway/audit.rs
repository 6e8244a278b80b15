use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::{self, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

/// One audited event of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub run: String,
    pub seq: u64,
    pub event: String,
    pub payload: serde_json::Value,
}

/// In-memory audit buffer shared by concurrent runs.
///
/// Records are flushed sorted by `(run, seq)`, so the file content does not
/// depend on how runs interleaved.
#[derive(Debug, Default)]
pub struct AuditTrail {
    inner: Mutex<Inner>,
}

#[derive(Debug, Default)]
struct Inner {
    records: Vec<AuditRecord>,
    next_seq: HashMap<String, u64>,
}

impl AuditTrail {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, run: &str, event: &str, payload: serde_json::Value) {
        let mut inner = self.inner.lock().expect("audit lock poisoned");
        let seq = inner.next_seq.entry(run.to_string()).or_insert(0);
        *seq += 1;
        let seq = *seq;
        inner.records.push(AuditRecord {
            run: run.to_string(),
            seq,
            event: event.to_string(),
            payload,
        });
    }

    /// Records for one run, in sequence order.
    pub fn run_records(&self, run: &str) -> Vec<AuditRecord> {
        let inner = self.inner.lock().expect("audit lock poisoned");
        let mut out: Vec<_> = inner.records.iter().filter(|r| r.run == run).cloned().collect();
        out.sort_by_key(|r| r.seq);
        out
    }

    /// Removes and returns every buffered record, sorted by run then sequence.
    pub fn drain(&self) -> Vec<AuditRecord> {
        let mut inner = self.inner.lock().expect("audit lock poisoned");
        let mut out = std::mem::take(&mut inner.records);
        out.sort_by(|a, b| a.run.cmp(&b.run).then(a.seq.cmp(&b.seq)));
        out
    }

    /// Appends the drained records to a JSON Lines file.
    pub fn flush_to(&self, path: &Path) -> io::Result<()> {
        let records = self.drain();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        f.write_all(&crate::fsutil::to_jsonl(&records))?;
        f.sync_all()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn drain_orders_by_run_then_sequence() {
        let a = AuditTrail::new();
        a.record("b", "x", json!(1));
        a.record("a", "x", json!(2));
        a.record("b", "y", json!(3));
        let recs = a.drain();
        let keys: Vec<_> = recs.iter().map(|r| (r.run.as_str(), r.seq)).collect();
        assert_eq!(keys, vec![("a", 1), ("b", 1), ("b", 2)]);
        assert!(a.drain().is_empty());
    }
}
