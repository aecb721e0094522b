//! Running the pipelines end to end, with logs and timings.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};

use deltaflow::connectors::{drive, spawn_source, Clock, ConnectorError, JsonlUpdateWriter, SystemClock};
use deltaflow::engine::{EngineConfig, EpochResult, Runtime};
use deltaflow::{Key, SinkSpec, SourceId, StreamRecord};

use crate::datasets::{edge_stream, word_records, Edge};
use crate::latency::{match_latencies, InputEvent, InputLog, LatencyReport, OutputEvent};
use crate::oracle::{self, Accumulator};
use crate::pipelines;
use crate::report::{LatencySummary, RunReport};
use crate::BenchConfig;

const QUEUE_CAPACITY: usize = 10_000;

fn engine(workers: usize) -> EngineConfig {
    EngineConfig {
        workers,
        check_universes: false,
    }
}

pub struct WordcountOutcome {
    pub report: RunReport,
    pub latency: LatencyReport,
    pub counts: BTreeMap<String, i64>,
}

/// Streams `words` through the wordcount pipeline under the configured
/// commit policy and replay schedule. With `logs`, writes
/// `input.log.jsonl` and `output.log.jsonl` there.
pub fn run_wordcount(cfg: &BenchConfig, words: &[String], run: usize, logs: Option<&Path>) -> Result<WordcountOutcome> {
    let (graph, sink) = pipelines::wordcount(SinkSpec::Null)?;
    let schema = graph.sinks()[sink.0].schema.clone();
    let mut rt = Runtime::new(graph, engine(cfg.workers));
    let clock = SystemClock::new();
    let start = Instant::now();
    let (rx, source) = spawn_source(word_records(words), cfg.replay_spec(run), clock, QUEUE_CAPACITY);

    let mut input_log = logs.map(|d| InputLog::create(&d.join("input.log.jsonl"))).transpose()?;
    let mut output_log = logs
        .map(|d| JsonlUpdateWriter::create(&d.join("output.log.jsonl"), &schema))
        .transpose()?;
    let mut inputs = Vec::with_capacity(words.len());
    let mut outputs = Vec::new();
    let mut acc = Accumulator::new();
    let mut epochs = 0u64;
    let mut first_epoch_ms = None;
    let mut log_error: Option<anyhow::Error> = None;

    let driven = drive(
        &mut rt,
        SourceId(0),
        &rx,
        cfg.commit_policy(),
        &clock,
        |t| {
            if let StreamRecord::Data { row, .. } = &t.record {
                let e = InputEvent {
                    word: row[0].as_str().unwrap_or_default().to_string(),
                    time_ms: t.ingress_ms,
                    burn_in: t.burn_in,
                };
                if let (Some(log), Some(dir)) = (&mut input_log, logs) {
                    log.write(&e).map_err(|source| ConnectorError::Io {
                        path: dir.join("input.log.jsonl"),
                        source,
                    })?;
                }
                inputs.push(e);
            }
            Ok(())
        },
        |r, now| {
            let updates = &r.sinks[sink.0];
            if updates.is_empty() {
                return Ok(());
            }
            epochs += 1;
            first_epoch_ms.get_or_insert(start.elapsed().as_secs_f64() * 1e3);
            if let Some(log) = &mut output_log {
                if let Err(err) = log.write_epoch(r.epoch, updates, now) {
                    log_error.get_or_insert(err.into());
                }
            }
            if let Err(err) = acc.apply(updates) {
                log_error.get_or_insert(err);
            }
            for u in updates.iter().filter(|u| u.diff > 0) {
                outputs.push(OutputEvent {
                    word: u.row[0].as_str().unwrap_or_default().to_string(),
                    count: u.row[1].as_int().unwrap_or_default(),
                    time_ms: now,
                });
            }
            Ok(())
        },
    );
    let runtime = start.elapsed();
    source.join().map_err(|_| anyhow::anyhow!("source thread panicked"))?;
    driven.context("wordcount run failed")?;
    if let Some(e) = log_error {
        return Err(e);
    }
    if let Some(l) = &mut input_log {
        l.flush()?;
    }
    if let Some(l) = &mut output_log {
        l.flush()?;
    }

    let counts = acc.pairs(0, 1);
    let verified = cfg.verify.then(|| counts == oracle::wordcount(words));
    let latency = match_latencies(&inputs, &outputs);
    let secs = runtime.as_secs_f64().max(1e-9);
    let report = RunReport {
        runtime_ms: secs * 1e3,
        records: words.len() as u64,
        throughput: words.len() as f64 / secs,
        epochs,
        first_epoch_ms,
        latency: Some(LatencySummary::from(&latency)),
        verified,
    };
    Ok(WordcountOutcome {
        report,
        latency,
        counts,
    })
}

/// One closed epoch of a PageRank run.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: u64,
    /// Edges admitted up to and including this epoch.
    pub edges: usize,
    pub wall_ms: f64,
    /// Accumulated ranks after this epoch, when snapshots were requested.
    pub ranks: Option<BTreeMap<Key, i64>>,
}

#[derive(Debug, Clone)]
pub struct PagerankOutcome {
    pub runtime_ms: f64,
    pub epochs: Vec<EpochRecord>,
    pub ranks: BTreeMap<Key, i64>,
}

impl PagerankOutcome {
    pub fn first_epoch_ms(&self) -> Option<f64> {
        self.epochs.first().map(|e| e.wall_ms)
    }

    /// Epochs whose snapshot differs from the integer recurrence on the
    /// edges seen so far.
    pub fn oracle_mismatches(&self, edges: &[Edge], steps: usize) -> Vec<u64> {
        self.epochs
            .iter()
            .filter(|e| match &e.ranks {
                Some(r) => *r != oracle::by_key(&oracle::pagerank(&edges[..e.edges], steps)),
                None => false,
            })
            .map(|e| e.epoch)
            .collect()
    }
}

/// Options for [`run_pagerank`].
#[derive(Debug, Clone, Copy, Default)]
pub struct PagerankOptions<'a> {
    pub workers: usize,
    pub snapshots: bool,
    pub log: Option<&'a Path>,
}

/// Runs PageRank over `edges`: the first `floor(backfill_fraction * E)` edges
/// in epoch 0, the rest committed every `batch_size` edges.
pub fn run_pagerank(
    edges: &[Edge],
    batch_size: usize,
    backfill_fraction: f64,
    opts: PagerankOptions<'_>,
) -> Result<PagerankOutcome> {
    let stream = edge_stream(edges, batch_size, backfill_fraction)?;
    run_pagerank_stream(&stream, opts)
}

pub fn run_pagerank_stream(stream: &[StreamRecord], opts: PagerankOptions<'_>) -> Result<PagerankOutcome> {
    let (graph, sink) = pipelines::pagerank(pipelines::PAGERANK_STEPS, SinkSpec::Null)?;
    let schema = graph.sinks()[sink.0].schema.clone();
    let mut log = opts.log.map(|p| JsonlUpdateWriter::create(p, &schema)).transpose()?;
    let clock = SystemClock::new();
    let start = Instant::now();
    let mut rt = Runtime::new(graph, engine(opts.workers.max(1)));
    let source = SourceId(0);
    let mut acc = Accumulator::new();
    let mut epochs = Vec::new();
    let mut admitted = 0usize;
    let mut epoch_start = Instant::now();

    let mut absorb = |results: Vec<EpochResult>, admitted: usize, epoch_start: &mut Instant| -> Result<()> {
        for r in results {
            let updates = &r.sinks[sink.0];
            if let Some(l) = &mut log {
                l.write_epoch(r.epoch, updates, clock.now_ms())?;
            }
            acc.apply(updates)?;
            epochs.push(EpochRecord {
                epoch: r.epoch,
                edges: admitted,
                wall_ms: epoch_start.elapsed().as_secs_f64() * 1e3,
                ranks: opts.snapshots.then(|| acc.ints(0)),
            });
            *epoch_start = Instant::now();
        }
        Ok(())
    };
    for rec in stream {
        match rec {
            StreamRecord::Data { kind, row } => {
                rt.push(source, *kind, row.clone())?;
                admitted += 1;
            }
            StreamRecord::Commit => absorb(rt.commit(source)?, admitted, &mut epoch_start)?,
        }
    }
    absorb(rt.finish(source)?, admitted, &mut epoch_start)?;
    let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
    if let Some(l) = &mut log {
        l.flush()?;
    }
    Ok(PagerankOutcome {
        runtime_ms,
        ranks: acc.ints(0),
        epochs,
    })
}
