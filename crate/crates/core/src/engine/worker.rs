//! One worker: owns a key partition of every stateful operator and runs the
//! whole graph over its share of each epoch.

use std::sync::Arc;

use crate::graph::{NodeId, Operator, OperatorGraph};
use crate::update::{Epoch, Update};
use crate::value::Key;

use super::exchange::{partition_by, Exchanger, Routed, WorkerPlan};
use super::operators::{apply_set_delta, apply_stateless_delta, GroupbyState, IxState, OpError, SetOp, SetState};
use super::EngineError;

enum NodeState {
    Stateless,
    Groupby(GroupbyState),
    Ix(IxState),
    Set(SetState),
}

impl NodeState {
    fn arranged_rows(&self) -> usize {
        match self {
            NodeState::Stateless => 0,
            NodeState::Groupby(g) => g.len(),
            NodeState::Ix(s) => s.arranged_rows(),
            NodeState::Set(s) => s.arranged_rows(),
        }
    }
}

#[derive(Debug, Default)]
pub(crate) struct WorkerOutput {
    pub sinks: Vec<Vec<Update>>,
    pub tracked: Vec<Vec<Update>>,
    pub row_touches: u64,
    pub arranged_rows: usize,
}

pub(crate) struct Worker<X: Exchanger> {
    graph: Arc<OperatorGraph>,
    plan: WorkerPlan,
    states: Vec<NodeState>,
    exchanger: X,
    tracked: Vec<NodeId>,
}

impl<X: Exchanger> Worker<X> {
    pub(crate) fn new(graph: Arc<OperatorGraph>, plan: WorkerPlan, exchanger: X, tracked: Vec<NodeId>) -> Self {
        let states = graph
            .nodes()
            .iter()
            .map(|n| match &n.op {
                Operator::GroupbyReduce { group, outputs } => {
                    NodeState::Groupby(GroupbyState::new(group.clone(), outputs.clone()))
                }
                Operator::IxJoin { key, columns, policy } => {
                    NodeState::Ix(IxState::new(key.clone(), columns.clone(), *policy))
                }
                op => match SetOp::from_operator(op) {
                    Some(s) => NodeState::Set(SetState::new(s)),
                    None => NodeState::Stateless,
                },
            })
            .collect();
        Worker {
            graph,
            plan,
            states,
            exchanger,
            tracked,
        }
    }

    fn shuffle(&mut self, node: usize, port: usize, items: Routed) -> Result<Routed, EngineError> {
        if !self.plan.exchange[node][port] {
            return Ok(items);
        }
        let parts = partition_by(items, self.exchanger.workers(), |(k, _)| *k);
        self.exchanger
            .exchange(parts)
            .map_err(|_| EngineError::WorkerFailed("peer worker disconnected".into()))
    }

    /// Runs one epoch. `sources[s]` holds this worker's share of source `s`'s input.
    ///
    /// On an operator error the worker keeps taking part in every exchange
    /// with empty batches, so that peers do not block, and reports the first
    /// error at the end.
    pub(crate) fn run_epoch(&mut self, epoch: Epoch, mut sources: Vec<Vec<Update>>) -> Result<WorkerOutput, EngineError> {
        let graph = self.graph.clone();
        let nodes = graph.nodes();
        let mut outputs: Vec<Vec<Update>> = Vec::with_capacity(nodes.len());
        let mut failure: Option<EngineError> = None;
        let mut touches = 0u64;
        let mut sinks = vec![Vec::new(); graph.sinks().len()];

        for (i, node) in nodes.iter().enumerate() {
            let ok = failure.is_none();
            let input = |port: usize, outputs: &Vec<Vec<Update>>| -> Vec<Update> {
                if ok {
                    outputs[node.inputs[port].0].clone()
                } else {
                    Vec::new()
                }
            };
            let fail = |e: OpError| EngineError::Operator {
                operator: node.label(),
                epoch,
                error: e,
            };
            let result: Result<Vec<Update>, EngineError> = match &node.op {
                Operator::Source { source, .. } => Ok(std::mem::take(&mut sources[source.0])),
                Operator::Select { .. } | Operator::Filter { .. } => {
                    if ok {
                        apply_stateless_delta(&node.op, &outputs[node.inputs[0].0]).map_err(fail)
                    } else {
                        Ok(Vec::new())
                    }
                }
                Operator::Sink { sink, .. } => {
                    if ok {
                        sinks[sink.0] = outputs[node.inputs[0].0].clone();
                    }
                    Ok(Vec::new())
                }
                Operator::GroupbyReduce { .. } => {
                    let NodeState::Groupby(state) = &self.states[i] else { unreachable!() };
                    let projected: Result<Routed, OpError> = input(0, &outputs)
                        .iter()
                        .map(|u| state.project(u).map(|p| (p.key, p)))
                        .collect();
                    let (projected, err) = split_err(projected);
                    let local = self.shuffle(i, 0, projected)?;
                    match err {
                        Some(e) => Err(fail(e)),
                        None => {
                            let NodeState::Groupby(state) = &mut self.states[i] else { unreachable!() };
                            touches += local.len() as u64;
                            state
                                .apply_projected(epoch, local.into_iter().map(|(_, u)| u).collect())
                                .map_err(fail)
                        }
                    }
                }
                Operator::IxJoin { .. } => {
                    let NodeState::Ix(state) = &self.states[i] else { unreachable!() };
                    let routed: Result<Routed, OpError> =
                        input(0, &outputs).into_iter().map(|u| state.route(u)).collect();
                    let (routed, err) = split_err(routed);
                    let rows = self.shuffle(i, 0, routed)?;
                    let target = self.shuffle(i, 1, keyed(input(1, &outputs)))?;
                    match err {
                        Some(e) => Err(fail(e)),
                        None => {
                            let NodeState::Ix(state) = &mut self.states[i] else { unreachable!() };
                            touches += (rows.len() + target.len()) as u64;
                            state
                                .apply_routed(epoch, rows, target.into_iter().map(|(_, u)| u).collect())
                                .map_err(fail)
                        }
                    }
                }
                Operator::Difference | Operator::UpdateRows | Operator::Concat => {
                    let left = self.shuffle(i, 0, keyed(input(0, &outputs)))?;
                    let right = self.shuffle(i, 1, keyed(input(1, &outputs)))?;
                    let NodeState::Set(state) = &mut self.states[i] else { unreachable!() };
                    touches += (left.len() + right.len()) as u64;
                    apply_set_delta(state, epoch, unkeyed(left), unkeyed(right)).map_err(fail)
                }
            };
            match result {
                Ok(out) => {
                    touches += out.len() as u64;
                    outputs.push(out);
                }
                Err(e) => {
                    if failure.is_none() {
                        failure = Some(e);
                    }
                    outputs.push(Vec::new());
                }
            }
        }

        if let Some(e) = failure {
            return Err(e);
        }
        let tracked = self.tracked.iter().map(|n| outputs[n.0].clone()).collect();
        Ok(WorkerOutput {
            sinks,
            tracked,
            row_touches: touches,
            arranged_rows: self.states.iter().map(NodeState::arranged_rows).sum(),
        })
    }
}

fn keyed(updates: Vec<Update>) -> Routed {
    updates.into_iter().map(|u| (u.key, u)).collect()
}

fn unkeyed(routed: Routed) -> Vec<Update> {
    routed.into_iter().map(|(_, u)| u).collect()
}

fn split_err(r: Result<Vec<(Key, Update)>, OpError>) -> (Routed, Option<OpError>) {
    match r {
        Ok(v) => (v, None),
        Err(e) => (Vec::new(), Some(e)),
    }
}
