//! Update records, consolidation and the source record type.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::value::{Key, Value};

/// Logical batch index. Epoch 0 is the first batch.
pub type Epoch = u64;

/// Row payload in schema column order. Cheap to clone.
pub type Row = Arc<[Value]>;

pub fn row<I: IntoIterator<Item = Value>>(values: I) -> Row {
    values.into_iter().collect()
}

/// Signed change to a table: `diff` copies of `row` at `key`, as of `epoch`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Update {
    pub key: Key,
    pub row: Row,
    pub diff: i64,
    pub epoch: Epoch,
}

impl Update {
    pub fn new(key: Key, row: Row, diff: i64, epoch: Epoch) -> Self {
        Update {
            key,
            row,
            diff,
            epoch,
        }
    }

    pub fn insert(key: Key, row: Row, epoch: Epoch) -> Self {
        Update::new(key, row, 1, epoch)
    }

    pub fn retract(key: Key, row: Row, epoch: Epoch) -> Self {
        Update::new(key, row, -1, epoch)
    }
}

/// Sums diffs per `(key, row, epoch)`, drops the zeros and sorts by
/// `(epoch, key, row)`.
pub fn consolidate(mut updates: Vec<Update>) -> Vec<Update> {
    consolidate_in_place(&mut updates);
    updates
}

pub fn consolidate_in_place(updates: &mut Vec<Update>) {
    if updates.is_empty() {
        return;
    }
    updates.sort_unstable_by(|a, b| {
        (a.epoch, a.key)
            .cmp(&(b.epoch, b.key))
            .then_with(|| a.row.cmp(&b.row))
    });
    let mut write = 0;
    for read in 0..updates.len() {
        if write > 0 {
            let prev = &updates[write - 1];
            let cur = &updates[read];
            if prev.epoch == cur.epoch && prev.key == cur.key && prev.row == cur.row {
                let diff = cur.diff;
                updates[write - 1].diff += diff;
                if updates[write - 1].diff == 0 {
                    write -= 1;
                }
                continue;
            }
        }
        updates.swap(write, read);
        write += 1;
    }
    updates.truncate(write);
    updates.retain(|u| u.diff != 0);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    Insert,
    Delete,
}

/// Unit delivered by a source: a row insert/delete or a commit marker.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StreamRecord {
    Data { kind: DataKind, row: Row },
    Commit,
}

impl StreamRecord {
    pub fn insert(row: Row) -> Self {
        StreamRecord::Data {
            kind: DataKind::Insert,
            row,
        }
    }

    pub fn delete(row: Row) -> Self {
        StreamRecord::Data {
            kind: DataKind::Delete,
            row,
        }
    }

    pub fn is_commit(&self) -> bool {
        matches!(self, StreamRecord::Commit)
    }
}
