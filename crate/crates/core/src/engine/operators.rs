//! Per-operator delta rules.
//!
//! Each stateful operator keeps the arranged state of its inputs and turns
//! one epoch of input deltas into the consolidated delta of its output: the
//! output rows of every touched key are computed before and after applying
//! the inputs, and the difference is emitted.

use thiserror::Error;

use crate::expr::{CompiledExpr, EvalError};
use crate::graph::{CompiledReduce, MissingKeyPolicy, Operator};
use crate::update::{consolidate_in_place, Epoch, Row, Update};
use crate::value::{hash_key, Key, KeyMap, Value};

use super::arrangement::{Arrangement, Change, KeyConflict};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OpError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("dangling pointer {pointer} dereferenced by row {row}")]
    MissingKey { pointer: Key, row: Key },
    #[error("key {0} present on both sides of concat")]
    Collision(Key),
    #[error("key {0} would hold more than one live row")]
    KeyConflict(Key),
    #[error("integer overflow aggregating group {0}")]
    Overflow(Key),
    #[error("group {0} retracted below zero rows")]
    NegativeCount(Key),
}

impl From<KeyConflict> for OpError {
    fn from(c: KeyConflict) -> Self {
        OpError::KeyConflict(c.key)
    }
}

/// Select and filter: every input update maps to at most one output update
/// with the same key and diff.
pub fn apply_stateless_delta(op: &Operator, deltas: &[Update]) -> Result<Vec<Update>, OpError> {
    match op {
        Operator::Select { exprs } => deltas
            .iter()
            .map(|u| {
                let row = exprs
                    .iter()
                    .map(|e| e.eval(u.key, &u.row))
                    .collect::<Result<Row, _>>()?;
                Ok(Update::new(u.key, row, u.diff, u.epoch))
            })
            .collect(),
        Operator::Filter { predicate } => {
            let mut out = Vec::with_capacity(deltas.len());
            for u in deltas {
                if predicate.eval(u.key, &u.row)? == Value::Bool(true) {
                    out.push(u.clone());
                }
            }
            Ok(out)
        }
        Operator::Sink { .. } => Ok(deltas.to_vec()),
        other => panic!("{} is not a stateless operator", other.kind()),
    }
}

fn emit_change(out: &mut Vec<Update>, key: Key, old: Option<Row>, new: Option<Row>, epoch: Epoch) {
    if old == new {
        return;
    }
    if let Some(r) = old {
        out.push(Update::retract(key, r, epoch));
    }
    if let Some(r) = new {
        out.push(Update::insert(key, r, epoch));
    }
}

#[derive(Debug, Clone)]
struct Group {
    values: Row,
    count: i64,
    sums: Vec<i64>,
}

/// Aggregates per group for one groupby-reduce operator.
#[derive(Debug, Clone)]
pub struct GroupbyState {
    group: Vec<CompiledExpr>,
    outputs: Vec<CompiledReduce>,
    sum_args: Vec<CompiledExpr>,
    groups: KeyMap<Group>,
}

impl GroupbyState {
    pub fn new(group: Vec<CompiledExpr>, outputs: Vec<CompiledReduce>) -> Self {
        let sum_args = outputs
            .iter()
            .filter_map(|o| match o {
                CompiledReduce::IntSum(e) => Some(e.clone()),
                _ => None,
            })
            .collect();
        GroupbyState {
            group,
            outputs,
            sum_args,
            groups: KeyMap::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Rewrites an input update as `(group key, [group values.., sum args..])`.
    /// This is what travels between workers.
    pub fn project(&self, u: &Update) -> Result<Update, OpError> {
        let mut vals = Vec::with_capacity(self.group.len() + self.sum_args.len());
        for g in &self.group {
            vals.push(g.eval(u.key, &u.row)?);
        }
        let gk = hash_key(&vals);
        for s in &self.sum_args {
            vals.push(s.eval(u.key, &u.row)?);
        }
        Ok(Update::new(gk, vals.into(), u.diff, u.epoch))
    }

    fn render(&self, g: &Group) -> Row {
        let mut sums = g.sums.iter();
        self.outputs
            .iter()
            .map(|o| match o {
                CompiledReduce::Group(i) => g.values[*i].clone(),
                CompiledReduce::Const(v) => v.clone(),
                CompiledReduce::Count => Value::Int(g.count),
                CompiledReduce::IntSum(_) => Value::Int(*sums.next().expect("one sum per int_sum")),
            })
            .collect()
    }

    /// Applies projected deltas (see [`GroupbyState::project`]).
    pub fn apply_projected(&mut self, epoch: Epoch, mut deltas: Vec<Update>) -> Result<Vec<Update>, OpError> {
        consolidate_in_place(&mut deltas);
        let n_group = self.group.len();
        let mut out = Vec::new();
        let mut i = 0;
        while i < deltas.len() {
            let key = deltas[i].key;
            let old = self.groups.get(&key).map(|g| self.render(g));
            let mut g = self.groups.remove(&key).unwrap_or_else(|| Group {
                values: deltas[i].row[..n_group].iter().cloned().collect(),
                count: 0,
                sums: vec![0; self.sum_args.len()],
            });
            while i < deltas.len() && deltas[i].key == key {
                let d = &deltas[i];
                g.count = g.count.checked_add(d.diff).ok_or(OpError::Overflow(key))?;
                for (slot, v) in g.sums.iter_mut().zip(&d.row[n_group..]) {
                    let arg = v.as_int().expect("int_sum argument typechecked to int");
                    let add = arg.checked_mul(d.diff).ok_or(OpError::Overflow(key))?;
                    *slot = slot.checked_add(add).ok_or(OpError::Overflow(key))?;
                }
                i += 1;
            }
            if g.count < 0 {
                return Err(OpError::NegativeCount(key));
            }
            let new = (g.count > 0).then(|| self.render(&g));
            if g.count > 0 {
                self.groups.insert(key, g);
            }
            emit_change(&mut out, key, old, new, epoch);
        }
        Ok(out)
    }
}

/// One epoch of a groupby-reduce on unprojected input deltas.
pub fn apply_groupby_delta(state: &mut GroupbyState, epoch: Epoch, in_deltas: &[Update]) -> Result<Vec<Update>, OpError> {
    let projected = in_deltas
        .iter()
        .map(|u| state.project(u))
        .collect::<Result<Vec<_>, _>>()?;
    state.apply_projected(epoch, projected)
}

/// Arranged inputs of an `ix` dereference.
#[derive(Debug, Clone)]
pub struct IxState {
    key: CompiledExpr,
    columns: Vec<usize>,
    policy: MissingKeyPolicy,
    rows: Arrangement,
    pointer_of: KeyMap<Key>,
    referrers: KeyMap<Vec<Key>>,
    target: Arrangement,
}

impl IxState {
    pub fn new(key: CompiledExpr, columns: Vec<usize>, policy: MissingKeyPolicy) -> Self {
        IxState {
            key,
            columns,
            policy,
            rows: Arrangement::new(),
            pointer_of: KeyMap::default(),
            referrers: KeyMap::default(),
            target: Arrangement::new(),
        }
    }

    pub fn arranged_rows(&self) -> usize {
        self.rows.len() + self.target.len()
    }

    /// Pairs an input update with the pointer it dereferences.
    pub fn route(&self, u: Update) -> Result<(Key, Update), OpError> {
        match self.key.eval(u.key, &u.row)? {
            Value::Key(p) => Ok((p, u)),
            other => unreachable!("ix key typechecked to pointer, got {other}"),
        }
    }

    fn joined(&self, row_key: Key, row: &Row, pointer: Key) -> Result<Option<Row>, OpError> {
        match self.target.get(&pointer) {
            Some(target) => {
                let mut out = Vec::with_capacity(row.len() + self.columns.len());
                out.extend(row.iter().cloned());
                out.extend(self.columns.iter().map(|&c| target[c].clone()));
                Ok(Some(out.into()))
            }
            None => match self.policy {
                MissingKeyPolicy::Strict => Err(OpError::MissingKey {
                    pointer,
                    row: row_key,
                }),
                MissingKeyPolicy::Skip => Ok(None),
            },
        }
    }

    fn output(&self, row_key: Key) -> Result<Option<Row>, OpError> {
        match (self.rows.get(&row_key), self.pointer_of.get(&row_key)) {
            (Some(row), Some(p)) => self.joined(row_key, row, *p),
            _ => Ok(None),
        }
    }

    /// Applies routed row deltas and target deltas for one epoch.
    pub fn apply_routed(
        &mut self,
        epoch: Epoch,
        rows: Vec<(Key, Update)>,
        target: Vec<Update>,
    ) -> Result<Vec<Update>, OpError> {
        let mut new_pointer: KeyMap<Key> = KeyMap::default();
        let mut touched: Vec<Key> = Vec::with_capacity(rows.len());
        let mut row_deltas = Vec::with_capacity(rows.len());
        for (p, u) in rows {
            touched.push(u.key);
            if u.diff > 0 {
                new_pointer.insert(u.key, p);
            }
            row_deltas.push(u);
        }
        for t in &target {
            if let Some(refs) = self.referrers.get(&t.key) {
                touched.extend_from_slice(refs);
            }
        }
        touched.sort_unstable();
        touched.dedup();

        let mut before = Vec::with_capacity(touched.len());
        for &k in &touched {
            // Old state was complete at the end of the previous epoch.
            before.push(self.output(k).unwrap_or(None));
        }

        let changes = self.rows.apply(epoch, row_deltas)?;
        for Change { key, old, new } in changes {
            if old.is_some() {
                if let Some(p) = self.pointer_of.remove(&key) {
                    if let Some(refs) = self.referrers.get_mut(&p) {
                        if let Some(pos) = refs.iter().position(|r| *r == key) {
                            refs.swap_remove(pos);
                        }
                        if refs.is_empty() {
                            self.referrers.remove(&p);
                        }
                    }
                }
            }
            if new.is_some() {
                let p = *new_pointer
                    .get(&key)
                    .expect("inserted rows arrive with their pointer");
                self.pointer_of.insert(key, p);
                self.referrers.entry(p).or_default().push(key);
            }
        }
        self.target.apply(epoch, target)?;

        let mut out = Vec::new();
        for (k, old) in touched.into_iter().zip(before) {
            let new = self.output(k)?;
            emit_change(&mut out, k, old, new, epoch);
        }
        Ok(out)
    }
}

/// One epoch of `ix`: row deltas of the dereferencing table and of the target.
pub fn apply_ix_delta(
    state: &mut IxState,
    epoch: Epoch,
    in_deltas_t: &[Update],
    in_deltas_target: &[Update],
) -> Result<Vec<Update>, OpError> {
    let routed = in_deltas_t
        .iter()
        .cloned()
        .map(|u| state.route(u))
        .collect::<Result<Vec<_>, _>>()?;
    state.apply_routed(epoch, routed, in_deltas_target.to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetOp {
    Difference,
    UpdateRows,
    Concat,
}

impl SetOp {
    pub fn from_operator(op: &Operator) -> Option<SetOp> {
        match op {
            Operator::Difference => Some(SetOp::Difference),
            Operator::UpdateRows => Some(SetOp::UpdateRows),
            Operator::Concat => Some(SetOp::Concat),
            _ => None,
        }
    }

    fn combine(self, key: Key, a: Option<&Row>, b: Option<&Row>) -> Result<Option<Row>, OpError> {
        Ok(match self {
            SetOp::Difference => match b {
                Some(_) => None,
                None => a.cloned(),
            },
            SetOp::UpdateRows => b.or(a).cloned(),
            SetOp::Concat => match (a, b) {
                (Some(_), Some(_)) => return Err(OpError::Collision(key)),
                (x, y) => x.or(y).cloned(),
            },
        })
    }
}

/// Arranged inputs of a key-wise binary operator.
#[derive(Debug, Clone)]
pub struct SetState {
    op: SetOp,
    left: Arrangement,
    right: Arrangement,
}

impl SetState {
    pub fn new(op: SetOp) -> Self {
        SetState {
            op,
            left: Arrangement::new(),
            right: Arrangement::new(),
        }
    }

    pub fn arranged_rows(&self) -> usize {
        self.left.len() + self.right.len()
    }
}

fn side<'a>(changes: &'a KeyMap<Change>, arr: &'a Arrangement, key: &Key) -> (Option<&'a Row>, Option<&'a Row>) {
    match changes.get(key) {
        Some(c) => (c.old.as_ref(), c.new.as_ref()),
        None => {
            let cur = arr.get(key);
            (cur, cur)
        }
    }
}

/// One epoch of difference / update_rows / concat.
pub fn apply_set_delta(
    state: &mut SetState,
    epoch: Epoch,
    a_deltas: Vec<Update>,
    b_deltas: Vec<Update>,
) -> Result<Vec<Update>, OpError> {
    let ca = state.left.apply(epoch, a_deltas)?;
    let cb = state.right.apply(epoch, b_deltas)?;
    let mut keys: Vec<Key> = ca.iter().chain(cb.iter()).map(|c| c.key).collect();
    keys.sort_unstable();
    keys.dedup();
    let ca: KeyMap<Change> = ca.into_iter().map(|c| (c.key, c)).collect();
    let cb: KeyMap<Change> = cb.into_iter().map(|c| (c.key, c)).collect();
    let mut out = Vec::new();
    for key in keys {
        let (old_a, new_a) = side(&ca, &state.left, &key);
        let (old_b, new_b) = side(&cb, &state.right, &key);
        let old = state.op.combine(key, old_a, old_b).unwrap_or(None);
        let new = state.op.combine(key, new_a, new_b)?;
        emit_change(&mut out, key, old, new, epoch);
    }
    Ok(out)
}
