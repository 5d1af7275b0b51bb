//! Append-only session log, one JSON object per line:
//! `{"type": <event>, "t_ms": <session clock>, "payload": {...}}`.

use std::fmt::Write as _;
use std::path::Path;

use serde::de::Error as _;
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use super::Stage;
use crate::error::{Error, Result};
use crate::flt::{FltMetrics, TrialRecord};
use crate::movement::Movement;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum SessionEvent {
    SessionStarted {
        session_index: u32,
        stage: Stage,
        movements: Vec<Movement>,
        t_max_ms: u64,
    },
    Collected {
        movement: Movement,
        samples: usize,
        positions: Vec<u8>,
        replaced: bool,
    },
    ModelFitted {
        snapshot: usize,
        provenance: String,
        p: usize,
        lambda: f64,
        degenerate: bool,
    },
    ExplorationStarted {
        t_max_ms: u64,
    },
    Recalibrated {
        movement: Movement,
        samples: usize,
        nr: usize,
    },
    ExplorationEnded {
        t_d_ms: u64,
        t_max_ms: u64,
        nr: usize,
        ntt: f64,
        early: bool,
    },
    AssessmentStarted {
        trials: usize,
        seed: u64,
    },
    Trial {
        provenance: String,
        record: TrialRecord,
    },
    AssessmentSummary {
        metrics: FltMetrics,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub t_ms: u64,
    pub event: SessionEvent,
}

impl Serialize for LogRecord {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let tagged = serde_json::to_value(&self.event).map_err(serde::ser::Error::custom)?;
        let mut map = serializer.serialize_map(Some(3))?;
        map.serialize_entry("type", &tagged["type"])?;
        map.serialize_entry("t_ms", &self.t_ms)?;
        map.serialize_entry("payload", &tagged["payload"])?;
        map.end()
    }
}

impl<'de> Deserialize<'de> for LogRecord {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            #[serde(rename = "type")]
            kind: String,
            t_ms: u64,
            payload: Value,
        }
        let raw = Raw::deserialize(deserializer)?;
        let event = serde_json::from_value(serde_json::json!({ "type": raw.kind, "payload": raw.payload }))
            .map_err(D::Error::custom)?;
        Ok(LogRecord { t_ms: raw.t_ms, event })
    }
}

pub fn write_log_string(records: &[LogRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("log records serialize"));
        out.push('\n');
    }
    out
}

pub fn write_log(records: &[LogRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_log_string(records)).map_err(|e| Error::io(path, e))
}

pub fn read_log_str(text: &str, source: &Path) -> Result<Vec<LogRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| serde_json::from_str(line).map_err(|e| Error::parse(source, i + 1, e.to_string())))
        .collect()
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<LogRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_log_str(&text, path)
}

/// Exploration and assessment figures recomputed from log events alone,
/// next to the values the session logged when it ran.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionReport {
    pub session_index: u32,
    pub t_d_ms: u64,
    pub t_max_ms: u64,
    pub nr: usize,
    pub ntt: f64,
    pub snapshots: usize,
    pub logged_exploration: Option<(u64, usize, f64)>,
    pub metrics: Option<FltMetrics>,
    pub logged_metrics: Option<FltMetrics>,
}

impl SessionReport {
    pub fn from_log(records: &[LogRecord]) -> Result<Self> {
        let source = Path::new("<log>");
        let (session_index, t_max_ms) = records
            .iter()
            .find_map(|r| match &r.event {
                SessionEvent::SessionStarted {
                    session_index,
                    t_max_ms,
                    ..
                } => Some((*session_index, *t_max_ms)),
                _ => None,
            })
            .ok_or_else(|| Error::parse(source, 1, "log has no session_started event"))?;
        let start = records.iter().find_map(|r| match r.event {
            SessionEvent::ExplorationStarted { .. } => Some(r.t_ms),
            _ => None,
        });
        let ended = records.iter().find_map(|r| match r.event {
            SessionEvent::ExplorationEnded { t_d_ms, nr, ntt, .. } => Some((r.t_ms, (t_d_ms, nr, ntt))),
            _ => None,
        });
        let last = records.last().map(|r| r.t_ms).unwrap_or(0);
        let t_d_ms = match start {
            Some(s) => (ended.map(|e| e.0).unwrap_or(last).saturating_sub(s)).min(t_max_ms),
            None => 0,
        };
        let nr = records
            .iter()
            .filter(|r| matches!(r.event, SessionEvent::Recalibrated { .. }))
            .count();
        let snapshots = records
            .iter()
            .filter(|r| matches!(r.event, SessionEvent::ModelFitted { .. }))
            .count();
        let trials: Vec<TrialRecord> = records
            .iter()
            .filter_map(|r| match &r.event {
                SessionEvent::Trial { record, .. } => Some(record.clone()),
                _ => None,
            })
            .collect();
        let logged_metrics = records.iter().find_map(|r| match r.event {
            SessionEvent::AssessmentSummary { metrics } => Some(metrics),
            _ => None,
        });
        let ntt = if t_max_ms == 0 {
            0.0
        } else {
            t_d_ms as f64 / t_max_ms as f64
        };
        Ok(SessionReport {
            session_index,
            t_d_ms,
            t_max_ms,
            nr,
            ntt,
            snapshots,
            logged_exploration: ended.map(|e| e.1),
            metrics: (!trials.is_empty()).then(|| FltMetrics::from_records(&trials)),
            logged_metrics,
        })
    }

    /// Recomputed values agree with what was logged, and NR matches the
    /// snapshot count.
    pub fn is_consistent(&self) -> bool {
        let exploration_ok = self
            .logged_exploration
            .is_none_or(|(t_d, nr, ntt)| t_d == self.t_d_ms && nr == self.nr && ntt == self.ntt);
        let snapshots_ok = self.snapshots == 0 || self.nr + 1 == self.snapshots;
        let metrics_ok = match (self.logged_metrics, self.metrics) {
            (Some(logged), Some(recomputed)) => logged == recomputed,
            (Some(logged), None) => logged.trials == 0,
            (None, _) => true,
        };
        exploration_ok && snapshots_ok && metrics_ok
    }

    pub fn csv_header() -> &'static str {
        "session,t_d_s,t_max_s,ntt,nr,trials,successes,cr,ot,pe,tp"
    }

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        let m = self.metrics;
        format!(
            "{},{:.3},{:.3},{:.4},{},{},{},{},{},{},{}",
            self.session_index,
            self.t_d_ms as f64 / 1000.0,
            self.t_max_ms as f64 / 1000.0,
            self.ntt,
            self.nr,
            m.map(|m| m.trials).unwrap_or(0),
            m.map(|m| m.successes).unwrap_or(0),
            opt(m.map(|m| m.completion_rate)),
            opt(m.and_then(|m| m.overshoot)),
            opt(m.and_then(|m| m.path_efficiency)),
            opt(m.and_then(|m| m.throughput)),
        )
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let dash = |v: Option<f64>, prec: usize| v.map(|x| format!("{x:.prec$}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(out, "session {}", self.session_index);
        let _ = writeln!(
            out,
            "  exploration  T_d {:.1} s / T_max {:.1} s  NTT {:.3}  NR {}",
            self.t_d_ms as f64 / 1000.0,
            self.t_max_ms as f64 / 1000.0,
            self.ntt,
            self.nr
        );
        if let Some(m) = self.metrics {
            let _ = writeln!(out, "  assessment   {} / {} trials succeeded", m.successes, m.trials);
            let _ = writeln!(out, "  metric  value");
            let _ = writeln!(out, "  CR      {:.3}", m.completion_rate);
            let _ = writeln!(out, "  OT      {}", dash(m.overshoot, 3));
            let _ = writeln!(out, "  PE      {}", dash(m.path_efficiency, 2));
            let _ = writeln!(out, "  TP      {}", dash(m.throughput, 3));
        }
        let _ = writeln!(
            out,
            "  consistent with logged values: {}",
            if self.is_consistent() { "yes" } else { "NO" }
        );
        out
    }
}
