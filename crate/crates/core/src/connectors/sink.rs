use std::fs::File;
use std::path::PathBuf;
use std::sync::Arc;

use super::{Clock, ConnectorError, JsonlUpdateWriter};
use crate::engine::{run_with, EngineConfig, EngineError, EpochResult, EpochStats, RunMode, SourceFeed};
use crate::graph::{OperatorGraph, SinkSpec};
use crate::update::{Epoch, Update};

/// Discards updates, counting them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NullSink {
    pub updates: u64,
    pub epochs: u64,
}

impl NullSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, updates: &[Update]) {
        self.updates += updates.len() as u64;
        self.epochs += 1;
    }
}

enum Writer {
    Collect(Vec<(Epoch, Vec<Update>)>),
    Null(NullSink),
    Jsonl(PathBuf, JsonlUpdateWriter<File>),
}

/// Dispatches each epoch's sink outputs according to the graph's sink specs.
/// Collected output of one sink: its updates, epoch by epoch.
pub type EpochUpdates = Vec<(Epoch, Vec<Update>)>;

pub struct SinkWriters {
    writers: Vec<Writer>,
}

#[derive(Debug, Default)]
pub struct PipelineOutput {
    /// Per sink; only `Collect` sinks are filled.
    pub collected: Vec<EpochUpdates>,
    /// Per sink; every sink counts.
    pub counts: Vec<NullSink>,
    pub epochs: Vec<(Epoch, EpochStats)>,
}

impl SinkWriters {
    pub fn new(graph: &OperatorGraph) -> Result<Self, ConnectorError> {
        let writers = graph
            .sinks()
            .iter()
            .map(|s| {
                Ok(match &s.spec {
                    SinkSpec::Collect => Writer::Collect(Vec::new()),
                    SinkSpec::Null => Writer::Null(NullSink::new()),
                    SinkSpec::Jsonl(p) => Writer::Jsonl(p.clone(), JsonlUpdateWriter::create(p, &s.schema)?),
                })
            })
            .collect::<Result<_, ConnectorError>>()?;
        Ok(SinkWriters { writers })
    }

    pub fn emit(&mut self, result: &EpochResult, time_ms: u64) -> Result<(), ConnectorError> {
        for (w, updates) in self.writers.iter_mut().zip(&result.sinks) {
            if updates.is_empty() {
                continue;
            }
            match w {
                Writer::Collect(v) => v.push((result.epoch, updates.clone())),
                Writer::Null(n) => n.push(updates),
                Writer::Jsonl(path, out) => out
                    .write_epoch(result.epoch, updates, time_ms)
                    .map_err(|e| ConnectorError::io(path.clone(), e))?,
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Result<(Vec<EpochUpdates>, Vec<NullSink>), ConnectorError> {
        let mut collected = Vec::new();
        let mut counts = Vec::new();
        for w in self.writers {
            match w {
                Writer::Collect(v) => {
                    counts.push(NullSink {
                        updates: v.iter().map(|(_, u)| u.len() as u64).sum(),
                        epochs: v.len() as u64,
                    });
                    collected.push(v);
                }
                Writer::Null(n) => {
                    counts.push(n);
                    collected.push(Vec::new());
                }
                Writer::Jsonl(path, mut out) => {
                    out.flush().map_err(|e| ConnectorError::io(path, e))?;
                    counts.push(NullSink {
                        updates: out.lines(),
                        epochs: 0,
                    });
                    collected.push(Vec::new());
                }
            }
        }
        Ok((collected, counts))
    }
}

/// Runs `graph` over `inputs`, writing every sink per its spec. Output lines
/// carry `clock` time at emission.
pub fn run_pipeline(
    graph: Arc<OperatorGraph>,
    mode: RunMode,
    config: EngineConfig,
    inputs: Vec<SourceFeed<'_>>,
    clock: &dyn Clock,
) -> Result<PipelineOutput, ConnectorError> {
    let mut writers = SinkWriters::new(&graph)?;
    let mut epochs = Vec::new();
    let mut io_error = None;
    let r = run_with(graph, mode, config, inputs, |res| {
        epochs.push((res.epoch, res.stats));
        writers.emit(res, clock.now_ms()).map_err(|e| {
            let msg = e.to_string();
            io_error = Some(e);
            EngineError::Input(msg)
        })
    });
    if let Some(e) = io_error {
        return Err(e);
    }
    r?;
    let (collected, counts) = writers.finish()?;
    Ok(PipelineOutput {
        collected,
        counts,
        epochs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connectors::{read_jsonl_updates, SimulatedClock};
    use crate::engine::feed;
    use crate::graph::{GraphBuilder, ReduceColumn, ReducerSpec};
    use crate::update::{row, StreamRecord};
    use crate::value::{Value, ValueType};
    use crate::{col, Schema};

    #[test]
    fn null_sink_counts() {
        let mut n = NullSink::new();
        assert_eq!(n, NullSink { updates: 0, epochs: 0 });
        let u = Update::insert(crate::hash_key(&[Value::Int(1)]), row([]), 0);
        n.push(&vec![u; 100]);
        assert_eq!(n.updates, 100);
    }

    #[test]
    fn pipeline_writes_each_sink() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("counts.jsonl");
        let mut g = GraphBuilder::new();
        let words = g
            .source("words", Schema::new([("word", ValueType::Str)]).unwrap(), &[])
            .unwrap();
        let counts = g
            .groupby_reduce(
                &words,
                [col("word")],
                [
                    ("word", ReduceColumn::Group(0)),
                    ("count", ReducerSpec::Count.into()),
                ],
            )
            .unwrap();
        g.sink(&counts, SinkSpec::Jsonl(path.clone())).unwrap();
        g.sink(&counts, SinkSpec::Collect).unwrap();
        g.sink(&counts, SinkSpec::Null).unwrap();
        let graph = Arc::new(g.build().unwrap());
        let w = |s: &str| StreamRecord::insert(row([Value::from(s)]));
        let input = vec![w("a"), w("a"), StreamRecord::Commit, w("b"), StreamRecord::Commit];
        let clock = SimulatedClock::new();
        let out = run_pipeline(
            graph.clone(),
            RunMode::Streaming,
            EngineConfig::default(),
            vec![feed(input)],
            &clock,
        )
        .unwrap();
        assert_eq!(out.collected[1].len(), 2);
        assert_eq!(out.counts[2], NullSink { updates: 2, epochs: 2 });
        let logged = read_jsonl_updates(&path, &graph.sinks()[0].schema).unwrap();
        let from_file: Vec<Update> = logged.into_iter().map(|l| l.update).collect();
        let collected: Vec<Update> = out.collected[1].iter().flat_map(|(_, u)| u.clone()).collect();
        assert_eq!(from_file, collected);
    }
}
