//! Straight-line reference computations, independent of the engine, plus a
//! helper that folds sink updates back into a table.

use std::collections::{BTreeMap, HashMap};

use anyhow::{bail, Result};

use deltaflow::{hash_key, Key, Row, Update, Value};

use crate::datasets::Edge;

/// Occurrences per word, in one pass over a hash map.
pub fn wordcount(words: &[String]) -> BTreeMap<String, i64> {
    let mut counts: HashMap<&str, i64> = HashMap::new();
    for w in words {
        *counts.entry(w).or_default() += 1;
    }
    counts.into_iter().map(|(w, c)| (w.to_string(), c)).collect()
}

/// `steps` rounds of the integer recurrence over adjacency lists:
/// everyone starts at 6000; each round a vertex of out-degree `d` sends
/// `(rank * 5) // (d * 6)` along each out-edge and ends the round with
/// 1000 plus what it received.
pub fn pagerank(edges: &[Edge], steps: usize) -> BTreeMap<String, i64> {
    let mut out_edges: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (u, v) in edges {
        out_edges.entry(u).or_default().push(v);
        out_edges.entry(v).or_default();
    }
    let mut rank: BTreeMap<&str, i64> = out_edges.keys().map(|&x| (x, 6_000)).collect();
    for _ in 0..steps {
        let mut next: BTreeMap<&str, i64> = out_edges.keys().map(|&x| (x, 1_000)).collect();
        for (&u, targets) in &out_edges {
            if targets.is_empty() {
                continue;
            }
            let share = (rank[u] * 5) / (targets.len() as i64 * 6);
            for &v in targets {
                *next.get_mut(v).expect("every endpoint is a vertex") += share;
            }
        }
        rank = next;
    }
    rank.into_iter().map(|(x, r)| (x.to_string(), r)).collect()
}

/// Key of a vertex in the engine's rank table.
pub fn vertex_key(label: &str) -> Key {
    hash_key(&[Value::from(label)])
}

/// Re-keys label → value to engine keys.
pub fn by_key<V: Clone>(m: &BTreeMap<String, V>) -> BTreeMap<Key, V> {
    m.iter().map(|(k, v)| (vertex_key(k), v.clone())).collect()
}

/// Accumulated state of a sink: at most one live row per key.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Accumulator {
    rows: BTreeMap<Key, Row>,
}

impl Accumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Applies one epoch's consolidated updates: retractions first, then inserts.
    pub fn apply(&mut self, updates: &[Update]) -> Result<()> {
        for u in updates.iter().filter(|u| u.diff < 0) {
            if u.diff != -1 || self.rows.get(&u.key) != Some(&u.row) {
                bail!("retraction of a row that is not live at key {}", u.key);
            }
            self.rows.remove(&u.key);
        }
        for u in updates.iter().filter(|u| u.diff > 0) {
            if u.diff != 1 || self.rows.insert(u.key, u.row.clone()).is_some() {
                bail!("second live row at key {}", u.key);
            }
        }
        Ok(())
    }

    pub fn rows(&self) -> &BTreeMap<Key, Row> {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Projects one integer column, by key.
    pub fn ints(&self, column: usize) -> BTreeMap<Key, i64> {
        self.rows
            .iter()
            .filter_map(|(k, r)| r[column].as_int().map(|v| (*k, v)))
            .collect()
    }

    /// `(string column, int column)` pairs, e.g. word counts.
    pub fn pairs(&self, name: usize, value: usize) -> BTreeMap<String, i64> {
        self.rows
            .values()
            .filter_map(|r| Some((r[name].as_str()?.to_string(), r[value].as_int()?)))
            .collect()
    }
}
