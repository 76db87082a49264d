//! Append-only execution trace of an optimization run, stored as JSONL.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Seeded,
    Scored,
    ParentSelected,
    Reflected,
    ChildProposed,
    FrontUpdated,
    BudgetTick,
    Finished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub run_id: String,
    pub seq: u64,
    pub timestamp: u64,
    pub kind: EventKind,
    pub payload: Value,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TraceError {
    #[error("trace {0} is already finished")]
    AlreadyFinished(String),
    #[error("trace line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub run_id: String,
    events: Vec<TraceEvent>,
}

impl ExecutionTrace {
    pub fn new(run_id: impl Into<String>) -> Self {
        Self { run_id: run_id.into(), events: Vec::new() }
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn is_finished(&self) -> bool {
        self.events.last().is_some_and(|e| e.kind == EventKind::Finished)
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn push(&mut self, kind: EventKind, timestamp: u64, payload: Value) -> Result<(), TraceError> {
        if self.is_finished() {
            return Err(TraceError::AlreadyFinished(self.run_id.clone()));
        }
        // timestamps never go backwards even if the clock does
        let timestamp = self.events.last().map_or(timestamp, |e| e.timestamp.max(timestamp));
        self.events.push(TraceEvent {
            run_id: self.run_id.clone(),
            seq: self.events.len() as u64,
            timestamp,
            kind,
            payload,
        });
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("trace events serialize"));
            out.push('\n');
        }
        out
    }

    /// Parses and validates a trace: one run id, contiguous sequence numbers,
    /// at most one `finished` event and nothing after it.
    pub fn from_jsonl(text: &str) -> Result<Self, TraceError> {
        let mut trace: Option<ExecutionTrace> = None;
        for (idx, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = |reason: String| TraceError::Malformed { line: idx + 1, reason };
            let event: TraceEvent = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
            let t = trace.get_or_insert_with(|| ExecutionTrace::new(event.run_id.clone()));
            if event.run_id != t.run_id {
                return Err(bad(format!("run id {} differs from {}", event.run_id, t.run_id)));
            }
            if event.seq != t.events.len() as u64 {
                return Err(bad(format!("sequence number {} out of order", event.seq)));
            }
            if t.is_finished() {
                return Err(bad("event after finished".into()));
            }
            t.events.push(event);
        }
        trace.ok_or(TraceError::Malformed { line: 0, reason: "empty trace".into() })
    }

    /// Rebuilds candidate lineage and scores from the events.
    pub fn replay(&self) -> TraceReplay {
        let mut replay = TraceReplay::default();
        for e in &self.events {
            let p = &e.payload;
            let str_field = |k: &str| p.get(k).and_then(Value::as_str).map(str::to_string);
            match e.kind {
                EventKind::Seeded | EventKind::ChildProposed => {
                    if let Some(id) = str_field("candidate_id") {
                        replay.candidates.insert(
                            id,
                            ReplayedCandidate {
                                parent_id: str_field("parent_id"),
                                generation: p.get("generation").and_then(Value::as_u64).unwrap_or(0) as u32,
                                scores: None,
                            },
                        );
                    }
                }
                EventKind::Scored => {
                    if let (Some(id), Some(scores)) = (str_field("candidate_id"), p.get("scores")) {
                        let scores: Option<Vec<f64>> = serde_json::from_value(scores.clone()).ok();
                        if let Some(c) = replay.candidates.get_mut(&id) {
                            c.scores = scores;
                        }
                    }
                }
                EventKind::FrontUpdated => {
                    if let Some(members) = p.get("members") {
                        replay.front = serde_json::from_value(members.clone()).unwrap_or_default();
                    }
                }
                EventKind::BudgetTick => replay.metric_calls += 1,
                EventKind::Finished => {
                    replay.best = str_field("best_id");
                    replay.status = str_field("status");
                }
                EventKind::ParentSelected | EventKind::Reflected => {}
            }
        }
        replay
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayedCandidate {
    pub parent_id: Option<String>,
    pub generation: u32,
    pub scores: Option<Vec<f64>>,
}

/// State reconstructed from a trace.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceReplay {
    pub candidates: BTreeMap<String, ReplayedCandidate>,
    pub front: Vec<String>,
    pub best: Option<String>,
    pub status: Option<String>,
    pub metric_calls: usize,
}

impl TraceReplay {
    /// Ids from `id` back to the seed, following parent pointers.
    pub fn lineage(&self, id: &str) -> Vec<String> {
        let mut chain = Vec::new();
        let mut cursor = Some(id.to_string());
        while let Some(current) = cursor {
            if chain.contains(&current) || !self.candidates.contains_key(&current) {
                break;
            }
            cursor = self.candidates[&current].parent_id.clone();
            chain.push(current);
        }
        chain
    }
}
