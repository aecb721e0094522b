//! Sources, sinks and input pacing: the boundary between files and update streams.

mod clock;
mod csv;
mod driver;
mod jsonl;
mod replay;
mod sink;

use std::path::PathBuf;

use serde_json::Value as Json;
use thiserror::Error;

pub use self::csv::read_csv;
pub use clock::{Clock, SimulatedClock, SystemClock};
pub use driver::{drive, spawn_source};
pub use jsonl::{
    parse_jsonl_line, read_jsonl, read_jsonl_updates, write_jsonl_updates, JsonlUpdateWriter, LoggedUpdate,
};
pub use replay::{replay, schedule, BurnIn, BurstModel, Replay, ReplaySpec, Scheduler, Slot, TimestampedRecord};
pub use sink::{run_pipeline, EpochUpdates, NullSink, PipelineOutput, SinkWriters};

use crate::update::StreamRecord;
use crate::value::{Key, Value, ValueType};

#[derive(Debug, Error)]
pub enum ConnectorError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: missing column `{column}`")]
    MissingColumn { line: usize, column: String },
    #[error("line {line}: unknown column `{column}`")]
    UnknownColumn { line: usize, column: String },
    #[error("line {line}: column `{column}` expects {expected}, got {found}")]
    TypeMismatch {
        line: usize,
        column: String,
        expected: ValueType,
        found: String,
    },
    #[error("line {line}: unknown _action `{action}`")]
    BadAction { line: usize, action: String },
    #[error(transparent)]
    Engine(#[from] crate::engine::EngineError),
}

impl ConnectorError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ConnectorError::Io {
            path: path.into(),
            source,
        }
    }
}

fn json_kind(v: &Json) -> &'static str {
    match v {
        Json::Null => "null",
        Json::Bool(_) => "bool",
        Json::Number(n) if n.is_i64() => "integer",
        Json::Number(_) => "number",
        Json::String(_) => "string",
        Json::Array(_) => "array",
        Json::Object(_) => "object",
    }
}

/// Converts one JSON field to a value of type `ty`. Pointers travel as hex strings.
pub(crate) fn value_from_json(v: &Json, ty: ValueType) -> Result<Value, String> {
    let bad = || json_kind(v).to_string();
    Ok(match (ty, v) {
        (_, Json::Null) => Value::None,
        (ValueType::Int, Json::Number(n)) => Value::Int(n.as_i64().ok_or_else(bad)?),
        (ValueType::Float, Json::Number(n)) => Value::Float(n.as_f64().ok_or_else(bad)?),
        (ValueType::Str, Json::String(s)) => Value::from(s.as_str()),
        (ValueType::Bool, Json::Bool(b)) => Value::Bool(*b),
        (ValueType::Key, Json::String(s)) => Value::Key(Key::from_hex(s).ok_or_else(|| "malformed pointer".to_string())?),
        _ => return Err(bad()),
    })
}

pub(crate) fn value_to_json(v: &Value) -> Json {
    match v {
        Value::Int(i) => Json::from(*i),
        Value::Float(f) => serde_json::Number::from_f64(*f).map_or(Json::Null, Json::Number),
        Value::Str(s) => Json::String(s.to_string()),
        Value::Bool(b) => Json::Bool(*b),
        Value::Key(k) => Json::String(k.to_hex()),
        Value::None => Json::Null,
    }
}

/// When a source closes its open epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommitPolicy {
    EveryNRecords(usize),
    EveryMillis(u64),
    /// Only `Commit` records in the stream close epochs.
    Explicit,
    EndOfInputOnly,
}

/// Applies a [`CommitPolicy`] to a record stream. In-stream `Commit` records
/// are honoured only under `Explicit`. A final `Commit` closes any trailing
/// data at end of input.
#[derive(Debug, Clone)]
pub struct Committer {
    policy: CommitPolicy,
    pending: usize,
    last_commit_ms: u64,
}

impl Committer {
    pub fn new(policy: CommitPolicy, now_ms: u64) -> Self {
        if let CommitPolicy::EveryNRecords(n) = policy {
            assert!(n > 0, "commit window must be positive");
        }
        Committer {
            policy,
            pending: 0,
            last_commit_ms: now_ms,
        }
    }

    pub fn policy(&self) -> CommitPolicy {
        self.policy
    }

    /// Data records admitted since the last commit.
    pub fn pending(&self) -> usize {
        self.pending
    }

    /// Admits one record; returns what to forward, in order.
    pub fn admit(&mut self, rec: StreamRecord, now_ms: u64) -> Vec<StreamRecord> {
        let mut out = Vec::with_capacity(2);
        if rec.is_commit() {
            if self.policy == CommitPolicy::Explicit {
                out.push(self.take_commit(now_ms));
            }
            return out;
        }
        if let Some(c) = self.tick(now_ms) {
            out.push(c);
        }
        out.push(rec);
        self.pending += 1;
        if let CommitPolicy::EveryNRecords(n) = self.policy {
            if self.pending == n {
                out.push(self.take_commit(now_ms));
            }
        }
        out
    }

    /// Time-based commit, if due. Empty windows are never committed.
    pub fn tick(&mut self, now_ms: u64) -> Option<StreamRecord> {
        match self.policy {
            CommitPolicy::EveryMillis(ms) if self.pending > 0 && now_ms >= self.last_commit_ms + ms => {
                Some(self.take_commit(now_ms))
            }
            CommitPolicy::EveryMillis(ms) if self.pending == 0 && now_ms >= self.last_commit_ms + ms => {
                self.last_commit_ms = now_ms;
                None
            }
            _ => None,
        }
    }

    /// Deadline of the next time-based commit, if one is armed.
    pub fn deadline(&self) -> Option<u64> {
        match self.policy {
            CommitPolicy::EveryMillis(ms) if self.pending > 0 => Some(self.last_commit_ms + ms),
            _ => None,
        }
    }

    pub fn finish(&mut self, now_ms: u64) -> Option<StreamRecord> {
        (self.pending > 0).then(|| self.take_commit(now_ms))
    }

    fn take_commit(&mut self, now_ms: u64) -> StreamRecord {
        self.pending = 0;
        self.last_commit_ms = now_ms;
        StreamRecord::Commit
    }
}

/// Wraps a record iterator with a commit policy. Time comes from `clock`.
pub fn with_commits<'a, I, E, C>(
    records: I,
    policy: CommitPolicy,
    clock: C,
) -> impl Iterator<Item = Result<StreamRecord, E>> + 'a
where
    I: IntoIterator<Item = Result<StreamRecord, E>>,
    I::IntoIter: 'a,
    E: 'a,
    C: Clock + 'a,
{
    let mut committer = Committer::new(policy, clock.now_ms());
    let mut inner = records.into_iter();
    let mut queue: std::collections::VecDeque<Result<StreamRecord, E>> = Default::default();
    let mut done = false;
    std::iter::from_fn(move || loop {
        if let Some(r) = queue.pop_front() {
            return Some(r);
        }
        if done {
            return None;
        }
        match inner.next() {
            Some(Ok(rec)) => queue.extend(committer.admit(rec, clock.now_ms()).into_iter().map(Ok)),
            Some(Err(e)) => {
                done = true;
                return Some(Err(e));
            }
            None => {
                done = true;
                queue.extend(committer.finish(clock.now_ms()).map(Ok));
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::update::row;

    fn data(i: i64) -> StreamRecord {
        StreamRecord::insert(row([Value::Int(i)]))
    }

    fn windows(out: &[StreamRecord]) -> Vec<usize> {
        out.split(|r| r.is_commit()).map(|w| w.len()).collect()
    }

    fn drive(policy: CommitPolicy, input: Vec<StreamRecord>) -> Vec<StreamRecord> {
        let clock = SimulatedClock::new();
        with_commits(input.into_iter().map(Ok::<_, ()>), policy, &clock)
            .map(Result::unwrap)
            .collect()
    }

    #[test]
    fn every_n_records_windows() {
        let out = drive(CommitPolicy::EveryNRecords(3), (0..10).map(data).collect());
        assert_eq!(windows(&out), vec![3, 3, 3, 1, 0]);
        assert!(out.last().unwrap().is_commit());
    }

    #[test]
    fn exact_multiple_has_no_empty_commit() {
        let out = drive(CommitPolicy::EveryNRecords(5), (0..10).map(data).collect());
        assert_eq!(out.iter().filter(|r| r.is_commit()).count(), 2);
    }

    #[test]
    fn stream_commits_only_count_when_explicit() {
        let input = vec![data(0), StreamRecord::Commit, data(1), data(2)];
        let out = drive(CommitPolicy::Explicit, input.clone());
        assert_eq!(windows(&out), vec![1, 2, 0]);
        let out = drive(CommitPolicy::EndOfInputOnly, input.clone());
        assert_eq!(windows(&out), vec![3, 0]);
        let out = drive(CommitPolicy::EveryNRecords(2), input);
        assert_eq!(windows(&out), vec![2, 1, 0]);
    }

    #[test]
    fn every_millis_uses_the_clock() {
        let mut c = Committer::new(CommitPolicy::EveryMillis(100), 0);
        assert_eq!(c.admit(data(0), 10).len(), 1);
        assert_eq!(c.deadline(), Some(100));
        assert!(c.tick(99).is_none());
        assert!(c.tick(100).is_some());
        // idle windows are skipped
        assert!(c.tick(250).is_none());
        let out = c.admit(data(1), 260);
        assert_eq!(out.len(), 1);
        assert_eq!(c.deadline(), Some(350));
        assert!(c.finish(300).is_some());
        assert!(c.finish(300).is_none());
    }

    #[test]
    fn json_values_round_trip() {
        let k = crate::value::hash_key(&[Value::from("x")]);
        for (v, ty) in [
            (Value::Int(-3), ValueType::Int),
            (Value::Float(0.5), ValueType::Float),
            (Value::from("hi"), ValueType::Str),
            (Value::Bool(true), ValueType::Bool),
            (Value::Key(k), ValueType::Key),
            (Value::None, ValueType::Int),
        ] {
            assert_eq!(value_from_json(&value_to_json(&v), ty).unwrap(), v);
        }
        assert_eq!(value_from_json(&Json::from("1"), ValueType::Int).unwrap_err(), "string");
        assert!(value_from_json(&Json::from(1.5), ValueType::Int).is_err());
    }
}
