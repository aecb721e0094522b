//! Incremental execution of an [`OperatorGraph`] over committed epochs.
//!
//! A [`Runtime`] accepts rows per source, turns them into keyed updates and
//! buffers them under the source's open epoch. Commits advance a
//! [`Frontier`]; each epoch it closes is pushed through the graph once, in
//! topological order, by `W` workers that each own a key partition of every
//! stateful operator. Sinks receive the consolidated delta of the epoch.

mod arrangement;
mod exchange;
mod frontier;
pub mod operators;
mod worker;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, Sender};
use thiserror::Error;

pub use arrangement::{Arrangement, Change, KeyConflict};
pub use exchange::{exchange, WorkerPlan};
pub use frontier::{Frontier, FrontierError};
pub use operators::OpError;

use crate::graph::{NodeId, OperatorGraph, SinkId, SourceId, UniverseId, UniverseRelation};
use crate::update::{consolidate_in_place, DataKind, Epoch, Row, StreamRecord, Update};
use crate::value::{hash_key, Key, KeyMap, Value};

use exchange::{Local, Mesh};
use worker::{Worker, WorkerOutput};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("{operator} failed at epoch {epoch}: {error}")]
    Operator {
        operator: String,
        epoch: Epoch,
        error: OpError,
    },
    #[error("source `{table}`: row has {found} values, schema has {expected}")]
    Arity {
        table: String,
        expected: usize,
        found: usize,
    },
    #[error("source `{table}`: column `{column}` expects {expected}, got {found}")]
    ColumnType {
        table: String,
        column: String,
        expected: crate::value::ValueType,
        found: crate::value::ValueType,
    },
    #[error("source `{table}`: key {key} inserted while already present")]
    DuplicateKey { table: String, key: Key },
    #[error("source `{table}`: delete of a row that is not present")]
    UnknownDelete { table: String },
    #[error(transparent)]
    Frontier(#[from] FrontierError),
    #[error("universe check failed at epoch {epoch}: {detail}")]
    Universe { epoch: Epoch, detail: String },
    #[error("worker failed: {0}")]
    WorkerFailed(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("runtime stopped after an earlier error")]
    Poisoned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EngineConfig {
    pub workers: usize,
    /// Verify declared universe relations against runtime key sets after every epoch.
    pub check_universes: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            workers: 1,
            check_universes: cfg!(debug_assertions),
        }
    }
}

impl EngineConfig {
    pub fn with_workers(workers: usize) -> Self {
        EngineConfig {
            workers,
            ..Self::default()
        }
    }
}

/// How input streams map onto epochs. All modes run the same graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    /// Everything in epoch 0; in-stream commits are ignored.
    Batch,
    /// Every commit in the stream closes an epoch.
    Streaming,
    /// The first `prefix_records` data records of each source form epoch 0,
    /// then the stream continues as in `Streaming`.
    Backfill { prefix_records: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EpochStats {
    pub updates_in: u64,
    pub updates_out: u64,
    pub arranged_rows: usize,
    pub row_touches: u64,
    pub wall_time: Duration,
}

/// Consolidated per-sink output of one closed epoch, sorted by `(key, row)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochResult {
    pub epoch: Epoch,
    pub sinks: Vec<Vec<Update>>,
    pub stats: EpochStats,
}

impl EpochResult {
    pub fn sink(&self, id: SinkId) -> &[Update] {
        &self.sinks[id.0]
    }
}

struct SourceState {
    name: String,
    schema: Arc<crate::schema::Schema>,
    key_columns: Vec<usize>,
    next_auto: i64,
    live: KeyMap<Row>,
    auto_keys: HashMap<Row, Vec<Key>>,
}

impl SourceState {
    fn check_row(&self, row: &Row) -> Result<(), EngineError> {
        if row.len() != self.schema.len() {
            return Err(EngineError::Arity {
                table: self.name.clone(),
                expected: self.schema.len(),
                found: row.len(),
            });
        }
        for (v, c) in row.iter().zip(self.schema.columns()) {
            if v.value_type() != c.ty && *v != Value::None {
                return Err(EngineError::ColumnType {
                    table: self.name.clone(),
                    column: c.name.clone(),
                    expected: c.ty,
                    found: v.value_type(),
                });
            }
        }
        Ok(())
    }

    fn make_update(&mut self, kind: DataKind, row: Row, epoch: Epoch) -> Result<Update, EngineError> {
        self.check_row(&row)?;
        if self.key_columns.is_empty() {
            match kind {
                DataKind::Insert => {
                    let key = hash_key(&[Value::from(self.name.as_str()), Value::Int(self.next_auto)]);
                    self.next_auto += 1;
                    self.auto_keys.entry(row.clone()).or_default().push(key);
                    Ok(Update::insert(key, row, epoch))
                }
                DataKind::Delete => {
                    let keys = self.auto_keys.get_mut(&row).ok_or_else(|| EngineError::UnknownDelete {
                        table: self.name.clone(),
                    })?;
                    let key = keys.pop().expect("empty key lists are removed");
                    if keys.is_empty() {
                        self.auto_keys.remove(&row);
                    }
                    Ok(Update::retract(key, row, epoch))
                }
            }
        } else {
            let vals: Vec<Value> = self.key_columns.iter().map(|&i| row[i].clone()).collect();
            let key = hash_key(&vals);
            match kind {
                DataKind::Insert => {
                    if self.live.contains_key(&key) {
                        return Err(EngineError::DuplicateKey {
                            table: self.name.clone(),
                            key,
                        });
                    }
                    self.live.insert(key, row.clone());
                    Ok(Update::insert(key, row, epoch))
                }
                DataKind::Delete => {
                    if self.live.get(&key) != Some(&row) {
                        return Err(EngineError::UnknownDelete {
                            table: self.name.clone(),
                        });
                    }
                    self.live.remove(&key);
                    Ok(Update::retract(key, row, epoch))
                }
            }
        }
    }
}

enum Command {
    Epoch { epoch: Epoch, inputs: Vec<Vec<Update>> },
}

enum Pool {
    Inline(Box<Worker<Local>>),
    Threads {
        commands: Vec<Sender<Command>>,
        results: Receiver<(usize, Result<WorkerOutput, EngineError>)>,
        handles: Vec<JoinHandle<()>>,
    },
}

impl Pool {
    fn new(graph: &Arc<OperatorGraph>, workers: usize, tracked: &[NodeId]) -> Pool {
        let plan = WorkerPlan::new(graph, workers);
        if workers == 1 {
            return Pool::Inline(Box::new(Worker::new(graph.clone(), plan, Local, tracked.to_vec())));
        }
        let (result_tx, results) = unbounded();
        let mut commands = Vec::with_capacity(workers);
        let mut handles = Vec::with_capacity(workers);
        for (index, mesh) in Mesh::build(workers).into_iter().enumerate() {
            let (tx, rx) = unbounded::<Command>();
            commands.push(tx);
            let mut worker = Worker::new(graph.clone(), plan.clone(), mesh, tracked.to_vec());
            let result_tx = result_tx.clone();
            let handle = std::thread::Builder::new()
                .name(format!("deltaflow-worker-{index}"))
                .spawn(move || {
                    while let Ok(Command::Epoch { epoch, inputs }) = rx.recv() {
                        let out = worker.run_epoch(epoch, inputs);
                        let failed = out.is_err();
                        if result_tx.send((index, out)).is_err() || failed {
                            break;
                        }
                    }
                })
                .expect("spawn worker thread");
            handles.push(handle);
        }
        Pool::Threads {
            commands,
            results,
            handles,
        }
    }

    fn workers(&self) -> usize {
        match self {
            Pool::Inline(_) => 1,
            Pool::Threads { commands, .. } => commands.len(),
        }
    }

    /// `inputs[w][s]`: worker `w`'s share of source `s`.
    fn run_epoch(&mut self, epoch: Epoch, inputs: Vec<Vec<Vec<Update>>>) -> Result<Vec<WorkerOutput>, EngineError> {
        match self {
            Pool::Inline(w) => {
                let input = inputs.into_iter().next().expect("one worker");
                Ok(vec![w.run_epoch(epoch, input)?])
            }
            Pool::Threads { commands, results, .. } => {
                for (tx, input) in commands.iter().zip(inputs) {
                    tx.send(Command::Epoch { epoch, inputs: input })
                        .map_err(|_| EngineError::WorkerFailed("worker exited".into()))?;
                }
                let mut outs: Vec<Option<WorkerOutput>> = (0..commands.len()).map(|_| None).collect();
                let mut first_err: Option<EngineError> = None;
                for _ in 0..commands.len() {
                    match results.recv() {
                        Ok((i, Ok(o))) => outs[i] = Some(o),
                        Ok((_, Err(e))) => {
                            // Prefer an operator error over the disconnects it causes in peers.
                            let replace = matches!(
                                (&first_err, &e),
                                (None, _) | (Some(EngineError::WorkerFailed(_)), EngineError::Operator { .. })
                            );
                            if replace {
                                first_err = Some(e);
                            }
                        }
                        Err(_) => {
                            first_err.get_or_insert(EngineError::WorkerFailed("worker panicked".into()));
                            break;
                        }
                    }
                }
                match first_err {
                    Some(e) => Err(e),
                    None => Ok(outs.into_iter().map(|o| o.expect("every worker answered")).collect()),
                }
            }
        }
    }
}

impl Drop for Pool {
    fn drop(&mut self) {
        if let Pool::Threads { commands, handles, .. } = self {
            commands.clear();
            for h in handles.drain(..) {
                let _ = h.join();
            }
        }
    }
}

/// Checks declared subset/disjoint facts against the keys each table holds.
struct UniverseChecker {
    /// Representative node per universe, in the order workers report them.
    nodes: Vec<NodeId>,
    keys: Vec<KeyMap<i64>>,
    facts: Vec<(usize, usize, UniverseRelation)>,
}

impl UniverseChecker {
    fn new(graph: &OperatorGraph) -> Option<UniverseChecker> {
        let mut rep: BTreeMap<UniverseId, NodeId> = BTreeMap::new();
        for n in graph.nodes() {
            if !matches!(n.op, crate::graph::Operator::Sink { .. }) {
                rep.entry(n.universe).or_insert(n.id);
            }
        }
        let mut nodes = Vec::new();
        let mut index: BTreeMap<UniverseId, usize> = BTreeMap::new();
        let mut facts = Vec::new();
        for (a, b, rel) in graph.universes().declared() {
            let (Some(&na), Some(&nb)) = (rep.get(&a), rep.get(&b)) else {
                continue;
            };
            let mut slot = |u: UniverseId, n: NodeId| {
                *index.entry(u).or_insert_with(|| {
                    nodes.push(n);
                    nodes.len() - 1
                })
            };
            let ia = slot(a, na);
            let ib = slot(b, nb);
            facts.push((ia, ib, rel));
        }
        if facts.is_empty() {
            return None;
        }
        let keys = nodes.iter().map(|_| KeyMap::default()).collect();
        Some(UniverseChecker { nodes, keys, facts })
    }

    fn absorb(&mut self, slot: usize, updates: &[Update]) {
        let keys = &mut self.keys[slot];
        for u in updates {
            let c = keys.entry(u.key).or_insert(0);
            *c += u.diff;
            if *c == 0 {
                keys.remove(&u.key);
            }
        }
    }

    fn verify(&self, graph: &OperatorGraph, epoch: Epoch) -> Result<(), EngineError> {
        for &(a, b, rel) in &self.facts {
            let (ka, kb) = (&self.keys[a], &self.keys[b]);
            let bad = match rel {
                UniverseRelation::Subset => ka.keys().find(|k| !kb.contains_key(k)),
                UniverseRelation::Disjoint => ka.keys().find(|k| kb.contains_key(k)),
                _ => None,
            };
            if let Some(k) = bad {
                return Err(EngineError::Universe {
                    epoch,
                    detail: format!(
                        "{:?} between {} and {} violated at key {k}",
                        rel,
                        graph.node(self.nodes[a]).label(),
                        graph.node(self.nodes[b]).label()
                    ),
                });
            }
        }
        Ok(())
    }
}

/// Long-lived execution of one graph.
pub struct Runtime {
    graph: Arc<OperatorGraph>,
    frontier: Frontier,
    sources: Vec<SourceState>,
    pending: Vec<BTreeMap<Epoch, Vec<Update>>>,
    pool: Pool,
    checker: Option<UniverseChecker>,
    poisoned: bool,
}

impl Runtime {
    pub fn new(graph: Arc<OperatorGraph>, config: EngineConfig) -> Self {
        let checker = if config.check_universes {
            UniverseChecker::new(&graph)
        } else {
            None
        };
        let tracked = checker.as_ref().map(|c| c.nodes.clone()).unwrap_or_default();
        let pool = Pool::new(&graph, config.workers.max(1), &tracked);
        let sources = graph
            .sources()
            .iter()
            .map(|s| SourceState {
                name: s.name.clone(),
                schema: s.schema.clone(),
                key_columns: s.key_columns.clone(),
                next_auto: 0,
                live: KeyMap::default(),
                auto_keys: HashMap::new(),
            })
            .collect();
        Runtime {
            frontier: Frontier::new(graph.sources().len()),
            pending: vec![BTreeMap::new(); graph.sources().len()],
            sources,
            pool,
            checker,
            poisoned: false,
            graph,
        }
    }

    pub fn graph(&self) -> &OperatorGraph {
        &self.graph
    }

    pub fn workers(&self) -> usize {
        self.pool.workers()
    }

    pub fn frontier(&self) -> &Frontier {
        &self.frontier
    }

    fn guard(&self) -> Result<(), EngineError> {
        if self.poisoned {
            Err(EngineError::Poisoned)
        } else {
            Ok(())
        }
    }

    fn poison<T>(&mut self, r: Result<T, EngineError>) -> Result<T, EngineError> {
        if r.is_err() {
            self.poisoned = true;
        }
        r
    }

    pub fn insert(&mut self, source: SourceId, row: Row) -> Result<(), EngineError> {
        self.push(source, DataKind::Insert, row)
    }

    pub fn delete(&mut self, source: SourceId, row: Row) -> Result<(), EngineError> {
        self.push(source, DataKind::Delete, row)
    }

    pub fn push(&mut self, source: SourceId, kind: DataKind, row: Row) -> Result<(), EngineError> {
        self.guard()?;
        let epoch = self.frontier.open_epoch(source.0);
        let r = self.sources[source.0].make_update(kind, row, epoch);
        let u = self.poison(r)?;
        self.pending[source.0].entry(epoch).or_default().push(u);
        Ok(())
    }

    /// Commits the open epoch of `source` and runs every epoch that closes.
    pub fn commit(&mut self, source: SourceId) -> Result<Vec<EpochResult>, EngineError> {
        self.guard()?;
        let epoch = self.frontier.open_epoch(source.0);
        let r = self.frontier.advance(source.0, epoch).map_err(EngineError::from);
        let closed = self.poison(r)?;
        self.run_closed(closed)
    }

    /// Declares that `source` will send nothing more. Uncommitted rows are
    /// committed first.
    pub fn finish(&mut self, source: SourceId) -> Result<Vec<EpochResult>, EngineError> {
        self.guard()?;
        let mut results = Vec::new();
        let open = self.frontier.open_epoch(source.0);
        if self.pending[source.0].contains_key(&open) {
            results.extend(self.commit(source)?);
        }
        let closed = self.frontier.finish(source.0);
        results.extend(self.run_closed(closed)?);
        Ok(results)
    }

    fn run_closed(&mut self, closed: Vec<Epoch>) -> Result<Vec<EpochResult>, EngineError> {
        let mut results = Vec::with_capacity(closed.len());
        for e in closed {
            let r = self.run_epoch(e);
            results.push(self.poison(r)?);
        }
        Ok(results)
    }

    fn run_epoch(&mut self, epoch: Epoch) -> Result<EpochResult, EngineError> {
        let start = Instant::now();
        let workers = self.pool.workers();
        let n_sources = self.sources.len();
        let mut inputs: Vec<Vec<Vec<Update>>> = (0..workers).map(|_| vec![Vec::new(); n_sources]).collect();
        let mut updates_in = 0u64;
        for (s, pending) in self.pending.iter_mut().enumerate() {
            let batch = pending.remove(&epoch).unwrap_or_default();
            updates_in += batch.len() as u64;
            if workers == 1 {
                inputs[0][s] = batch;
            } else {
                for u in batch {
                    inputs[u.key.worker(workers)][s].push(u);
                }
            }
        }
        let outs = self.pool.run_epoch(epoch, inputs)?;

        let mut sinks: Vec<Vec<Update>> = vec![Vec::new(); self.graph.sinks().len()];
        let mut stats = EpochStats {
            updates_in,
            ..EpochStats::default()
        };
        for out in &outs {
            stats.row_touches += out.row_touches;
            stats.arranged_rows += out.arranged_rows;
        }
        if let Some(checker) = &mut self.checker {
            for out in &outs {
                for (slot, updates) in out.tracked.iter().enumerate() {
                    checker.absorb(slot, updates);
                }
            }
            checker.verify(&self.graph, epoch)?;
        }
        for out in outs {
            for (s, mut updates) in out.sinks.into_iter().enumerate() {
                sinks[s].append(&mut updates);
            }
        }
        for s in sinks.iter_mut() {
            consolidate_in_place(s);
            stats.updates_out += s.len() as u64;
        }
        stats.wall_time = start.elapsed();
        Ok(EpochResult { epoch, sinks, stats })
    }
}

pub type InputError = Box<dyn std::error::Error + Send + Sync>;
pub type SourceFeed<'a> = Box<dyn Iterator<Item = Result<StreamRecord, InputError>> + 'a>;

/// Drives `graph` over one record stream per source (in source order) and
/// hands every closed epoch to `on_epoch`.
///
/// Sources are consumed one after another; epochs close once every source
/// has committed them or ended.
pub fn run_with<F>(
    graph: Arc<OperatorGraph>,
    mode: RunMode,
    config: EngineConfig,
    inputs: Vec<SourceFeed<'_>>,
    mut on_epoch: F,
) -> Result<(), EngineError>
where
    F: FnMut(&EpochResult) -> Result<(), EngineError>,
{
    assert_eq!(inputs.len(), graph.sources().len(), "one input per source");
    let mut rt = Runtime::new(graph, config);
    for (s, feed) in inputs.into_iter().enumerate() {
        let source = SourceId(s);
        let mut data_seen = 0usize;
        let mut streaming = matches!(mode, RunMode::Streaming);
        if let RunMode::Backfill { prefix_records: 0 } = mode {
            streaming = true;
        }
        for rec in feed {
            let rec = rec.map_err(|e| EngineError::Input(e.to_string()))?;
            match rec {
                StreamRecord::Data { kind, row } => {
                    rt.push(source, kind, row)?;
                    data_seen += 1;
                    if let RunMode::Backfill { prefix_records } = mode {
                        if !streaming && data_seen == prefix_records {
                            for r in rt.commit(source)? {
                                on_epoch(&r)?;
                            }
                            streaming = true;
                        }
                    }
                }
                StreamRecord::Commit if streaming => {
                    for r in rt.commit(source)? {
                        on_epoch(&r)?;
                    }
                }
                StreamRecord::Commit => {}
            }
        }
        for r in rt.finish(source)? {
            on_epoch(&r)?;
        }
    }
    Ok(())
}

/// [`run_with`] collecting every epoch result.
pub fn run(
    graph: Arc<OperatorGraph>,
    mode: RunMode,
    config: EngineConfig,
    inputs: Vec<SourceFeed<'_>>,
) -> Result<Vec<EpochResult>, EngineError> {
    let mut results = Vec::new();
    run_with(graph, mode, config, inputs, |r| {
        results.push(r.clone());
        Ok(())
    })?;
    Ok(results)
}

/// Feed over an in-memory record list.
pub fn feed(records: Vec<StreamRecord>) -> SourceFeed<'static> {
    Box::new(records.into_iter().map(Ok))
}
