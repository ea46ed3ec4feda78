//! JSON-lines run logs: one object per line, always carrying an `event` key.
//!
//! Wall-clock fields (`ts`, `elapsed_s`) are left out in deterministic mode
//! so reruns produce identical logs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Map, Value};

use crate::error::Result;
use crate::nn::EpochReport;

pub struct RunLog {
    path: PathBuf,
    out: BufWriter<File>,
    deterministic: bool,
    started: Instant,
}

impl RunLog {
    pub fn create(path: &Path, deterministic: bool) -> Result<Self> {
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(File::create(path)?),
            deterministic,
            started: Instant::now(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes `{"event": event, ...fields}`; `fields` must be a JSON object.
    pub fn event(&mut self, event: &str, fields: Value) -> Result<()> {
        let mut obj = Map::new();
        obj.insert("event".into(), json!(event));
        if !self.deterministic {
            obj.insert("ts".into(), json!(chrono::Utc::now().to_rfc3339()));
            obj.insert("elapsed_s".into(), json!(self.started.elapsed().as_secs_f64()));
        }
        if let Value::Object(extra) = fields {
            obj.extend(extra);
        }
        serde_json::to_writer(&mut self.out, &Value::Object(obj)).map_err(std::io::Error::from)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }

    pub fn epoch(&mut self, stage: &str, r: &EpochReport) -> Result<()> {
        self.event(
            "epoch",
            json!({"stage": stage, "epoch": r.epoch, "train_loss": r.train_loss, "val_loss": r.val_loss}),
        )
    }
}

/// Non-finite floats are not JSON; they become strings.
pub fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(x.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lines_are_json_objects() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        let mut log = RunLog::create(&path, true).unwrap();
        log.event("start", json!({"argv": ["x", "--seed", "1"], "config_hash": "00ff"})).unwrap();
        log.epoch("train", &EpochReport { epoch: 1, train_loss: 0.5, val_loss: None }).unwrap();
        drop(log);
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0]["event"], "start");
        assert_eq!(lines[1]["train_loss"], 0.5);
        assert!(lines[0].get("ts").is_none());
        assert_eq!(num(f64::NAN), json!("NaN"));
    }

    #[test]
    fn timestamps_outside_deterministic_mode() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        let mut log = RunLog::create(&path, false).unwrap();
        log.event("start", json!({})).unwrap();
        let v: Value = serde_json::from_str(std::fs::read_to_string(&path).unwrap().trim()).unwrap();
        assert!(v["ts"].as_str().unwrap().contains('T'));
    }
}
