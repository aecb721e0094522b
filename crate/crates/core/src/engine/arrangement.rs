//! Keyed, consolidated table state with a compactable per-epoch delta log.

use std::collections::BTreeMap;

use crate::update::{consolidate_in_place, Epoch, Row, Update};
use crate::value::{Key, KeyMap};

/// A key that would end the epoch with something other than zero or one live row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyConflict {
    pub key: Key,
}

/// Per-key effect of applying one epoch's deltas.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Change {
    pub key: Key,
    pub old: Option<Row>,
    pub new: Option<Row>,
}

/// Current state (`key -> row`) plus the log of consolidated deltas that
/// produced it, one layer per applied epoch.
///
/// Layers at or below the watermark can be merged into a single layer; the
/// state they accumulate to is unchanged by merging.
#[derive(Debug, Clone, Default)]
pub struct Arrangement {
    state: KeyMap<Row>,
    layers: Vec<Vec<Update>>,
    log_len: usize,
    watermark: Option<Epoch>,
}

impl Arrangement {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &Key) -> Option<&Row> {
        self.state.get(key)
    }

    pub fn contains(&self, key: &Key) -> bool {
        self.state.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.state.len()
    }

    pub fn is_empty(&self) -> bool {
        self.state.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Key, &Row)> {
        self.state.iter()
    }

    /// Number of updates held across all log layers.
    pub fn log_len(&self) -> usize {
        self.log_len
    }

    pub fn layers(&self) -> &[Vec<Update>] {
        &self.layers
    }

    pub fn watermark(&self) -> Option<Epoch> {
        self.watermark
    }

    /// Applies one epoch of deltas and returns the per-key changes, sorted by key.
    ///
    /// Deltas need not be consolidated. The state stays untouched if any key
    /// would end up with a negative multiplicity or more than one live row.
    pub fn apply(&mut self, epoch: Epoch, mut deltas: Vec<Update>) -> Result<Vec<Change>, KeyConflict> {
        for d in deltas.iter_mut() {
            d.epoch = epoch;
        }
        consolidate_in_place(&mut deltas);
        let changes = self.plan(&deltas)?;
        for c in &changes {
            match &c.new {
                Some(row) => {
                    self.state.insert(c.key, row.clone());
                }
                None => {
                    self.state.remove(&c.key);
                }
            }
        }
        if !deltas.is_empty() {
            self.log_len += deltas.len();
            self.layers.push(deltas);
            if self.log_len > 2 * self.state.len().max(1) {
                self.compact(epoch);
            }
        }
        Ok(changes)
    }

    fn plan(&self, deltas: &[Update]) -> Result<Vec<Change>, KeyConflict> {
        let mut changes = Vec::new();
        let mut i = 0;
        while i < deltas.len() {
            let key = deltas[i].key;
            let mut j = i;
            while j < deltas.len() && deltas[j].key == key {
                j += 1;
            }
            let old = self.state.get(&key).cloned();
            let mut old_mult = i64::from(old.is_some());
            let mut live: Option<Row> = None;
            for d in &deltas[i..j] {
                if old.as_ref() == Some(&d.row) {
                    old_mult += d.diff;
                } else if d.diff == 1 && live.is_none() {
                    live = Some(d.row.clone());
                } else {
                    return Err(KeyConflict { key });
                }
            }
            let new = match (old_mult, live) {
                (0, live) => live,
                (1, None) => old.clone(),
                _ => return Err(KeyConflict { key }),
            };
            if new != old {
                changes.push(Change { key, old, new });
            }
            i = j;
        }
        Ok(changes)
    }

    /// Merges every log layer at or below `watermark` into one layer.
    pub fn compact(&mut self, watermark: Epoch) {
        let split = self
            .layers
            .iter()
            .position(|l| l.first().is_some_and(|u| u.epoch > watermark))
            .unwrap_or(self.layers.len());
        if split <= 1 {
            self.watermark = Some(self.watermark.map_or(watermark, |w| w.max(watermark)));
            return;
        }
        let mut merged: Vec<Update> = self.layers.drain(..split).flatten().collect();
        for u in merged.iter_mut() {
            u.epoch = watermark;
        }
        consolidate_in_place(&mut merged);
        self.layers.insert(0, merged);
        self.log_len = self.layers.iter().map(Vec::len).sum();
        self.watermark = Some(self.watermark.map_or(watermark, |w| w.max(watermark)));
    }

    /// State accumulated from the log up to and including `epoch`.
    ///
    /// Epochs below the watermark are no longer distinguishable and read as
    /// the watermark state.
    pub fn state_at(&self, epoch: Epoch) -> BTreeMap<Key, Row> {
        let mut acc: BTreeMap<(Key, Row), i64> = BTreeMap::new();
        for layer in &self.layers {
            for u in layer.iter().filter(|u| u.epoch <= epoch) {
                *acc.entry((u.key, u.row.clone())).or_default() += u.diff;
            }
        }
        acc.into_iter()
            .filter(|(_, d)| *d > 0)
            .map(|((k, r), _)| (k, r))
            .collect()
    }

    pub fn snapshot(&self) -> BTreeMap<Key, Row> {
        self.state.iter().map(|(k, r)| (*k, r.clone())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::update::row;
    use crate::value::{hash_key, Value};
    use proptest::prelude::*;

    fn k(i: i64) -> Key {
        hash_key(&[Value::Int(i)])
    }

    fn r(i: i64) -> Row {
        row([Value::Int(i)])
    }

    #[test]
    fn insert_replace_delete() {
        let mut a = Arrangement::new();
        let c = a.apply(0, vec![Update::insert(k(1), r(10), 0)]).unwrap();
        assert_eq!(c, vec![Change { key: k(1), old: None, new: Some(r(10)) }]);
        let c = a
            .apply(1, vec![Update::insert(k(1), r(11), 1), Update::retract(k(1), r(10), 1)])
            .unwrap();
        assert_eq!(c, vec![Change { key: k(1), old: Some(r(10)), new: Some(r(11)) }]);
        let c = a.apply(2, vec![Update::retract(k(1), r(11), 2)]).unwrap();
        assert_eq!(c[0].new, None);
        assert!(a.is_empty());
    }

    #[test]
    fn rejects_second_live_row() {
        let mut a = Arrangement::new();
        a.apply(0, vec![Update::insert(k(1), r(10), 0)]).unwrap();
        let err = a.apply(1, vec![Update::insert(k(1), r(11), 1)]).unwrap_err();
        assert_eq!(err, KeyConflict { key: k(1) });
        assert_eq!(a.get(&k(1)), Some(&r(10)));
        assert!(a.apply(1, vec![Update::retract(k(2), r(1), 1)]).is_err());
    }

    #[test]
    fn compaction_preserves_state() {
        let mut a = Arrangement::new();
        a.apply(0, vec![Update::insert(k(1), r(1), 0), Update::insert(k(2), r(2), 0)])
            .unwrap();
        a.apply(1, vec![Update::retract(k(1), r(1), 1), Update::insert(k(1), r(3), 1)])
            .unwrap();
        let before = a.snapshot();
        a.compact(1);
        assert_eq!(a.snapshot(), before);
        assert!(a.layers().len() <= 1);
        let layers = a.layers().to_vec();
        a.compact(1);
        assert_eq!(a.layers(), layers.as_slice());
        assert_eq!(a.state_at(1), before);
    }

    #[test]
    fn empty_arrangement_compacts_to_nothing() {
        let mut a = Arrangement::new();
        a.compact(3);
        assert_eq!(a.log_len(), 0);
        assert_eq!(a.watermark(), Some(3));
    }

    proptest! {
        /// Random keyed-map histories: state, log accumulation and compaction agree.
        #[test]
        fn log_accumulates_to_state(
            ops in prop::collection::vec(prop::collection::vec((0i64..6, prop::option::of(0i64..4)), 0..8), 1..12),
            watermark_pick in 0usize..12,
        ) {
            let mut a = Arrangement::new();
            let mut model: BTreeMap<Key, Row> = BTreeMap::new();
            let mut history = Vec::new();
            for (epoch, batch) in ops.into_iter().enumerate() {
                let epoch = epoch as u64;
                let mut target = model.clone();
                for (key, val) in batch {
                    match val {
                        Some(v) => { target.insert(k(key), r(v)); }
                        None => { target.remove(&k(key)); }
                    }
                }
                let mut deltas = Vec::new();
                for (key, old) in &model {
                    if target.get(key) != Some(old) {
                        deltas.push(Update::retract(*key, old.clone(), epoch));
                    }
                }
                for (key, new) in &target {
                    if model.get(key) != Some(new) {
                        deltas.push(Update::insert(*key, new.clone(), epoch));
                    }
                }
                a.apply(epoch, deltas).unwrap();
                model = target;
                prop_assert_eq!(a.snapshot(), model.clone());
                history.push(model.clone());
            }
            let last = history.len() as u64 - 1;
            prop_assert_eq!(a.state_at(last), model.clone());
            let w = (watermark_pick as u64).min(last);
            a.compact(w);
            let from = a.watermark().unwrap_or(0).max(w);
            for e in from..=last {
                prop_assert_eq!(a.state_at(e), history[e as usize].clone());
            }
            prop_assert_eq!(a.snapshot(), model);
        }
    }
}
