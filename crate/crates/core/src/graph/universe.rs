//! Build-time knowledge about how the key sets of tables relate.

use std::collections::BTreeSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UniverseId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UniverseRelation {
    Equal,
    /// Left is contained in right.
    Subset,
    /// Left contains right.
    Superset,
    Disjoint,
    Unknown,
}

/// Registry of universes and the facts operators establish about them.
///
/// Facts are only ever added by operator semantics: a filter is a subset of
/// its input, a difference is a subset of its left side and disjoint from its
/// right side, and so on. Queries close over subset chains.
#[derive(Clone, Debug, Default)]
pub struct Universes {
    count: usize,
    /// `(child, parent)`: child ⊆ parent.
    subsets: BTreeSet<(UniverseId, UniverseId)>,
    disjoint: BTreeSet<(UniverseId, UniverseId)>,
}

impl Universes {
    pub fn fresh(&mut self) -> UniverseId {
        self.count += 1;
        UniverseId(self.count - 1)
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn declare_subset(&mut self, child: UniverseId, parent: UniverseId) {
        if child != parent {
            self.subsets.insert((child, parent));
        }
    }

    pub fn declare_disjoint(&mut self, a: UniverseId, b: UniverseId) {
        let pair = if a <= b { (a, b) } else { (b, a) };
        self.disjoint.insert(pair);
    }

    /// Every universe known to contain `u`, including `u` itself.
    fn supersets(&self, u: UniverseId) -> BTreeSet<UniverseId> {
        let mut seen = BTreeSet::from([u]);
        let mut stack = vec![u];
        while let Some(cur) = stack.pop() {
            for &(child, parent) in self.subsets.range((cur, UniverseId(0))..) {
                if child != cur {
                    break;
                }
                if seen.insert(parent) {
                    stack.push(parent);
                }
            }
        }
        seen
    }

    pub fn is_subset(&self, a: UniverseId, b: UniverseId) -> bool {
        self.supersets(a).contains(&b)
    }

    pub fn relation(&self, a: UniverseId, b: UniverseId) -> UniverseRelation {
        if a == b {
            return UniverseRelation::Equal;
        }
        let up_a = self.supersets(a);
        let up_b = self.supersets(b);
        match (up_a.contains(&b), up_b.contains(&a)) {
            (true, true) => return UniverseRelation::Equal,
            (true, false) => return UniverseRelation::Subset,
            (false, true) => return UniverseRelation::Superset,
            (false, false) => {}
        }
        for x in &up_a {
            for y in &up_b {
                let pair = if x <= y { (*x, *y) } else { (*y, *x) };
                if self.disjoint.contains(&pair) {
                    return UniverseRelation::Disjoint;
                }
            }
        }
        UniverseRelation::Unknown
    }

    /// Directly declared facts, for runtime verification.
    pub fn declared(&self) -> Vec<(UniverseId, UniverseId, UniverseRelation)> {
        self.subsets
            .iter()
            .map(|&(a, b)| (a, b, UniverseRelation::Subset))
            .chain(
                self.disjoint
                    .iter()
                    .map(|&(a, b)| (a, b, UniverseRelation::Disjoint)),
            )
            .collect()
    }
}
