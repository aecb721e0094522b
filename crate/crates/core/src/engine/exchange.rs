//! Key partitioning and the channel mesh workers use to trade update batches.

use crossbeam_channel::{unbounded, Receiver, Sender};

use crate::graph::{Operator, OperatorGraph};
use crate::update::Update;
use crate::value::Key;

/// Which inputs must be re-partitioned before each operator runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkerPlan {
    pub workers: usize,
    /// Per node, per input port: whether updates are exchanged by key first.
    pub exchange: Vec<Vec<bool>>,
}

impl WorkerPlan {
    pub fn new(graph: &OperatorGraph, workers: usize) -> Self {
        assert!(workers > 0, "at least one worker");
        let exchange = graph
            .nodes()
            .iter()
            .map(|n| {
                let stateful = n.op.is_stateful() && workers > 1;
                match n.op {
                    Operator::Source { .. } => Vec::new(),
                    _ => vec![stateful; n.inputs.len()],
                }
            })
            .collect();
        WorkerPlan { workers, exchange }
    }

    pub fn worker_of(&self, key: Key) -> usize {
        key.worker(self.workers)
    }
}

/// Splits updates by `worker_of(key)`, keeping relative order within each part.
pub fn exchange(updates: Vec<Update>, plan: &WorkerPlan) -> Vec<Vec<Update>> {
    partition_by(updates, plan.workers, |u| u.key)
}

pub(crate) fn partition_by<T>(items: Vec<T>, workers: usize, route: impl Fn(&T) -> Key) -> Vec<Vec<T>> {
    if workers == 1 {
        return vec![items];
    }
    let mut parts: Vec<Vec<T>> = (0..workers).map(|_| Vec::new()).collect();
    for item in items {
        let w = route(&item).worker(workers);
        parts[w].push(item);
    }
    parts
}

pub(crate) type Routed = Vec<(Key, Update)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct PeerGone;

/// Trades one batch with every peer per call. All workers call `exchange`
/// the same number of times in the same order, so batches never mix between
/// operators.
pub(crate) trait Exchanger: Send {
    fn workers(&self) -> usize;
    fn exchange(&mut self, outgoing: Vec<Routed>) -> Result<Routed, PeerGone>;
}

pub(crate) struct Local;

impl Exchanger for Local {
    fn workers(&self) -> usize {
        1
    }

    fn exchange(&mut self, mut outgoing: Vec<Routed>) -> Result<Routed, PeerGone> {
        Ok(outgoing.pop().unwrap_or_default())
    }
}

/// One point-to-point channel per ordered worker pair.
pub(crate) struct Mesh {
    me: usize,
    to: Vec<Sender<Routed>>,
    from: Vec<Receiver<Routed>>,
}

impl Mesh {
    pub(crate) fn build(workers: usize) -> Vec<Mesh> {
        let mut senders: Vec<Vec<Option<Sender<Routed>>>> = vec![vec![None; workers]; workers];
        let mut receivers: Vec<Vec<Option<Receiver<Routed>>>> =
            (0..workers).map(|_| (0..workers).map(|_| None).collect()).collect();
        for (from, row) in senders.iter_mut().enumerate() {
            for (to, slot) in row.iter_mut().enumerate() {
                let (tx, rx) = unbounded();
                *slot = Some(tx);
                receivers[to][from] = Some(rx);
            }
        }
        senders
            .into_iter()
            .zip(receivers)
            .enumerate()
            .map(|(me, (to, from))| Mesh {
                me,
                to: to.into_iter().map(Option::unwrap).collect(),
                from: from.into_iter().map(Option::unwrap).collect(),
            })
            .collect()
    }
}

impl Exchanger for Mesh {
    fn workers(&self) -> usize {
        self.to.len()
    }

    fn exchange(&mut self, outgoing: Vec<Routed>) -> Result<Routed, PeerGone> {
        let mut own = Vec::new();
        for (peer, batch) in outgoing.into_iter().enumerate() {
            if peer == self.me {
                own = batch;
            } else {
                self.to[peer].send(batch).map_err(|_| PeerGone)?;
            }
        }
        let mut incoming = Vec::new();
        for peer in 0..self.from.len() {
            if peer == self.me {
                incoming.append(&mut own);
            } else {
                let mut batch = self.from[peer].recv().map_err(|_| PeerGone)?;
                incoming.append(&mut batch);
            }
        }
        Ok(incoming)
    }
}
