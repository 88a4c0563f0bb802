//! Training metrics.
//!
//! The main log holds one tab-separated record per line,
//! `stage<TAB>round<TAB>step<TAB>loss`, preceded by a header row. `step` is a
//! sub-step name (`in-lm`, `out-lm`, `out-mt`, `in-mt`) or `dev`. Losses use
//! the shortest decimal form that round-trips. The log contains no wall-clock
//! values, so identical runs produce identical bytes. Per-step wall times go
//! to a separate timing file with the same first three columns.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const HEADER: &str = "stage\tround\tstep\tloss";
pub const TIMING_HEADER: &str = "stage\tround\tstep\tseconds";

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub stage: String,
    pub round: usize,
    pub step: String,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub records: Vec<Record>,
    pub timings: Vec<(String, usize, String, f64)>,
}

impl MetricsLog {
    pub fn push(&mut self, stage: &str, round: usize, step: &str, loss: f64, seconds: f64) {
        self.records.push(Record {
            stage: stage.to_string(),
            round,
            step: step.to_string(),
            loss,
        });
        self.timings
            .push((stage.to_string(), round, step.to_string(), seconds));
    }

    pub fn extend(&mut self, other: MetricsLog) {
        self.records.extend(other.records);
        self.timings.extend(other.timings);
    }

    /// Losses of one stage and step name, in order.
    pub fn losses(&self, stage: &str, step: &str) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.stage == stage && r.step == step)
            .map(|r| r.loss)
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from(HEADER);
        s.push('\n');
        for r in &self.records {
            s.push_str(&format!("{}\t{}\t{}\t{}\n", r.stage, r.round, r.step, r.loss));
        }
        s
    }

    pub fn timing_text(&self) -> String {
        let mut s = String::from(TIMING_HEADER);
        s.push('\n');
        for (stage, round, step, secs) in &self.timings {
            s.push_str(&format!("{stage}\t{round}\t{step}\t{secs:.6}\n"));
        }
        s
    }

    pub fn parse(text: &str) -> Result<MetricsLog> {
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(Error::Format("metrics log lacks its header row".into()));
        }
        let mut log = MetricsLog::default();
        for line in lines {
            let f: Vec<&str> = line.split('\t').collect();
            let bad = || Error::Format(format!("bad metrics record `{line}`"));
            if f.len() != 4 {
                return Err(bad());
            }
            log.records.push(Record {
                stage: f[0].to_string(),
                round: f[1].parse().map_err(|_| bad())?,
                step: f[2].to_string(),
                loss: f[3].parse().map_err(|_| bad())?,
            });
        }
        Ok(log)
    }

    /// Writes the log to `path` and timings to `<path>.timing`.
    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))?;
        let mut timing = path.as_os_str().to_owned();
        timing.push(".timing");
        fs::write(&timing, self.timing_text()).map_err(|e| Error::io(&timing, e))
    }
}
