//! Live single-source streaming: a source thread replays records into a
//! bounded queue, the calling thread drains it into a [`Runtime`].

use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam_channel::{bounded, Receiver, RecvTimeoutError};

use super::{replay, Clock, CommitPolicy, Committer, ConnectorError, ReplaySpec, TimestampedRecord};
use crate::engine::{EpochResult, Runtime};
use crate::graph::SourceId;
use crate::update::StreamRecord;

/// Spawns a source thread. With `spec` the records follow its schedule on
/// `clock`; without, they are admitted as fast as the queue accepts them. A
/// full queue blocks the source.
pub fn spawn_source<C>(
    records: Vec<StreamRecord>,
    spec: Option<ReplaySpec>,
    clock: C,
    capacity: usize,
) -> (Receiver<TimestampedRecord>, JoinHandle<()>)
where
    C: Clock + 'static,
{
    let (tx, rx) = bounded(capacity.max(1));
    let handle = std::thread::Builder::new()
        .name("deltaflow-source".into())
        .spawn(move || match spec {
            Some(spec) => {
                for t in replay(records, spec, clock) {
                    if tx.send(t).is_err() {
                        return;
                    }
                }
            }
            None => {
                for record in records {
                    let t = TimestampedRecord {
                        record,
                        ingress_ms: clock.now_ms(),
                        burn_in: false,
                    };
                    if tx.send(t).is_err() {
                        return;
                    }
                }
            }
        })
        .expect("spawn source thread");
    (rx, handle)
}

/// Drains `rx` into `source` of `runtime` under `policy` until the sender
/// hangs up, then finishes the source. `on_input` sees every admitted record,
/// `on_epoch` every closed epoch together with the clock time of emission.
pub fn drive<C, I, E>(
    runtime: &mut Runtime,
    source: SourceId,
    rx: &Receiver<TimestampedRecord>,
    policy: CommitPolicy,
    clock: &C,
    mut on_input: I,
    mut on_epoch: E,
) -> Result<(), ConnectorError>
where
    C: Clock + ?Sized,
    I: FnMut(&TimestampedRecord) -> Result<(), ConnectorError>,
    E: FnMut(&EpochResult, u64) -> Result<(), ConnectorError>,
{
    let mut committer = Committer::new(policy, clock.now_ms());
    let forward = |runtime: &mut Runtime, rec: StreamRecord, on_epoch: &mut E| -> Result<(), ConnectorError> {
        match rec {
            StreamRecord::Data { kind, row } => runtime.push(source, kind, row)?,
            StreamRecord::Commit => {
                for r in runtime.commit(source)? {
                    on_epoch(&r, clock.now_ms())?;
                }
            }
        }
        Ok(())
    };
    loop {
        let msg = match committer.deadline() {
            Some(d) => {
                let wait = d.saturating_sub(clock.now_ms());
                rx.recv_timeout(Duration::from_millis(wait))
            }
            None => rx.recv().map_err(|_| RecvTimeoutError::Disconnected),
        };
        match msg {
            Ok(t) => {
                on_input(&t)?;
                for rec in committer.admit(t.record, clock.now_ms()) {
                    forward(runtime, rec, &mut on_epoch)?;
                }
            }
            Err(RecvTimeoutError::Timeout) => {
                if let Some(c) = committer.tick(clock.now_ms()) {
                    forward(runtime, c, &mut on_epoch)?;
                }
            }
            Err(RecvTimeoutError::Disconnected) => break,
        }
    }
    if let Some(c) = committer.finish(clock.now_ms()) {
        forward(runtime, c, &mut on_epoch)?;
    }
    for r in runtime.finish(source)? {
        on_epoch(&r, clock.now_ms())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connectors::SystemClock;
    use crate::engine::EngineConfig;
    use crate::graph::{GraphBuilder, ReduceColumn, ReducerSpec, SinkSpec};
    use crate::update::row;
    use crate::value::{Value, ValueType};
    use crate::{col, Schema};
    use std::sync::Arc;

    fn wordcount() -> Arc<crate::OperatorGraph> {
        let mut g = GraphBuilder::new();
        let w = g
            .source("words", Schema::new([("word", ValueType::Str)]).unwrap(), &[])
            .unwrap();
        let c = g
            .groupby_reduce(
                &w,
                [col("word")],
                [
                    ("word", ReduceColumn::Group(0)),
                    ("count", ReducerSpec::Count.into()),
                ],
            )
            .unwrap();
        g.sink(&c, SinkSpec::Collect).unwrap();
        Arc::new(g.build().unwrap())
    }

    fn words(n: usize) -> Vec<StreamRecord> {
        (0..n)
            .map(|i| StreamRecord::insert(row([Value::from(["a", "b", "c"][i % 3])])))
            .collect()
    }

    fn run(policy: CommitPolicy, spec: Option<ReplaySpec>, n: usize) -> (usize, Vec<i64>) {
        let clock = SystemClock::new();
        let (rx, h) = spawn_source(words(n), spec, clock, 16);
        let mut rt = Runtime::new(wordcount(), EngineConfig::default());
        let mut inputs = 0;
        let mut epochs = 0;
        let mut counts = std::collections::BTreeMap::new();
        drive(
            &mut rt,
            SourceId(0),
            &rx,
            policy,
            &clock,
            |_| {
                inputs += 1;
                Ok(())
            },
            |r, _| {
                epochs += 1;
                for u in &r.sinks[0] {
                    if u.diff > 0 {
                        counts.insert(u.row[0].clone(), u.row[1].as_int().unwrap());
                    }
                }
                Ok(())
            },
        )
        .unwrap();
        h.join().unwrap();
        assert_eq!(inputs, n);
        (epochs, counts.into_values().collect())
    }

    #[test]
    fn counted_commits() {
        let (epochs, counts) = run(CommitPolicy::EveryNRecords(10), None, 95);
        assert_eq!(epochs, 10);
        assert_eq!(counts, vec![32, 32, 31]);
    }

    #[test]
    fn timed_commits_under_replay() {
        let spec = ReplaySpec::new(2000.0, 1);
        let (epochs, counts) = run(CommitPolicy::EveryMillis(20), Some(spec), 300);
        assert!(epochs >= 3, "{epochs}");
        assert_eq!(counts, vec![100, 100, 100]);
    }
}
