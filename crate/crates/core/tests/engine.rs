//! Runtime behaviour on a small two-source pipeline: stream/batch parity,
//! per-commit consistency, worker-count determinism and fail-stop errors.

use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;

use deltaflow::engine::{EngineConfig, EngineError, EpochResult, OpError, Runtime};
use deltaflow::{
    col, hash_key, lit, pointer, row, GraphBuilder, Key, MissingKeyPolicy, OperatorGraph, ReduceColumn, ReducerSpec,
    Row, Schema, SinkId, SinkSpec, SourceId, Update, Value, ValueType,
};

const ITEMS: SourceId = SourceId(0);
const PRICES: SourceId = SourceId(1);

struct Inventory {
    graph: Arc<OperatorGraph>,
    priced: SinkId,
    unpriced: SinkId,
}

/// items(sku, cat, qty) keyed by sku, prices(cat, price) keyed by cat.
/// Per category with stocked items: item count and total quantity; the
/// value `qty * price` where a price exists, the bare totals where not.
fn inventory() -> Inventory {
    let mut g = GraphBuilder::new();
    let items = g
        .source(
            "items",
            Schema::new([("sku", ValueType::Str), ("cat", ValueType::Str), ("qty", ValueType::Int)]).unwrap(),
            &["sku"],
        )
        .unwrap();
    let prices = g
        .source(
            "prices",
            Schema::new([("cat", ValueType::Str), ("price", ValueType::Int)]).unwrap(),
            &["cat"],
        )
        .unwrap();
    let stocked = g.filter(&items, col("qty").gt(lit(0i64))).unwrap();
    let totals = g
        .groupby_reduce(
            &stocked,
            [col("cat")],
            [
                ("cat", ReduceColumn::Group(0)),
                ("n", ReduceColumn::Reduce(ReducerSpec::Count)),
                ("qty", ReduceColumn::Reduce(ReducerSpec::IntSum(col("qty")))),
            ],
        )
        .unwrap();
    let joined = g
        .ix_join_with(&totals, pointer([col("cat")]), &prices, &["price"], MissingKeyPolicy::Skip)
        .unwrap();
    let valued = g
        .select(&joined, [("cat", col("cat")), ("value", col("qty") * col("price"))])
        .unwrap();
    let unpriced = g.difference(&totals, &prices).unwrap();
    let priced = g.sink(&valued, SinkSpec::Null).unwrap();
    let unpriced = g.sink(&unpriced, SinkSpec::Null).unwrap();
    Inventory {
        graph: Arc::new(g.build().unwrap()),
        priced,
        unpriced,
    }
}

fn cat_key(cat: &str) -> Key {
    hash_key(&[Value::from(cat)])
}

/// Direct computation of both sinks from the current inputs.
#[derive(Debug, Clone, Default)]
struct Model {
    items: BTreeMap<String, (String, i64)>,
    prices: BTreeMap<String, i64>,
}

type Table = BTreeMap<Key, Row>;

impl Model {
    fn sinks(&self) -> (Table, Table) {
        let mut totals: BTreeMap<&str, (i64, i64)> = BTreeMap::new();
        for (cat, qty) in self.items.values() {
            if *qty > 0 {
                let t = totals.entry(cat).or_default();
                t.0 += 1;
                t.1 += qty;
            }
        }
        let mut priced = Table::new();
        let mut unpriced = Table::new();
        for (cat, (n, qty)) in totals {
            match self.prices.get(cat) {
                Some(p) => {
                    priced.insert(cat_key(cat), row([Value::from(cat), Value::Int(qty * p)]));
                }
                None => {
                    unpriced.insert(cat_key(cat), row([Value::from(cat), Value::Int(n), Value::Int(qty)]));
                }
            }
        }
        (priced, unpriced)
    }
}

#[derive(Debug, Clone)]
enum Op {
    /// Upsert or (with `None`) remove an item.
    Item(u8, Option<(u8, i64)>),
    Price(u8, Option<i64>),
    Commit,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        5 => (0u8..8, prop::option::weighted(0.8, (0u8..4, -2i64..6))).prop_map(|(s, v)| Op::Item(s, v)),
        2 => (0u8..4, prop::option::weighted(0.7, 1i64..5)).prop_map(|(c, p)| Op::Price(c, p)),
        2 => Just(Op::Commit),
    ]
}

/// Source records for `ops`, with the model state after every commit point.
struct Script {
    steps: Vec<Step>,
    snapshots: Vec<Model>,
    last: Model,
}

enum Step {
    Insert(SourceId, Row),
    Delete(SourceId, Row),
    Commit,
}

fn script(ops: &[Op]) -> Script {
    let mut m = Model::default();
    let mut steps = Vec::new();
    let mut snapshots = Vec::new();
    for op in ops {
        match op {
            Op::Item(s, v) => {
                let sku = format!("s{s}");
                if let Some((cat, qty)) = m.items.remove(&sku) {
                    steps.push(Step::Delete(ITEMS, row([Value::from(sku.as_str()), Value::from(cat.as_str()), Value::Int(qty)])));
                }
                if let Some((c, q)) = v {
                    let cat = format!("c{c}");
                    steps.push(Step::Insert(ITEMS, row([Value::from(sku.as_str()), Value::from(cat.as_str()), Value::Int(*q)])));
                    m.items.insert(sku, (cat, *q));
                }
            }
            Op::Price(c, p) => {
                let cat = format!("c{c}");
                if let Some(old) = m.prices.remove(&cat) {
                    steps.push(Step::Delete(PRICES, row([Value::from(cat.as_str()), Value::Int(old)])));
                }
                if let Some(p) = p {
                    steps.push(Step::Insert(PRICES, row([Value::from(cat.as_str()), Value::Int(*p)])));
                    m.prices.insert(cat, *p);
                }
            }
            Op::Commit => {
                steps.push(Step::Commit);
                snapshots.push(m.clone());
            }
        }
    }
    Script {
        steps,
        snapshots,
        last: m,
    }
}

/// Folds sink updates; panics on a retraction of something not present.
#[derive(Debug, Default, Clone, PartialEq)]
struct Acc(BTreeMap<(Key, Row), i64>);

impl Acc {
    fn apply(&mut self, updates: &[Update]) {
        for u in updates {
            let e = self.0.entry((u.key, u.row.clone())).or_default();
            *e += u.diff;
            assert!(*e >= 0, "retraction below zero for {:?}", u);
            if *e == 0 {
                self.0.remove(&(u.key, u.row.clone()));
            }
        }
    }

    fn table(&self) -> Table {
        self.0.keys().map(|(k, r)| (*k, r.clone())).collect()
    }
}

struct Outcome {
    epochs: Vec<(u64, Vec<Update>, Vec<Update>)>,
    priced: Acc,
    unpriced: Acc,
}

fn absorb(inv: &Inventory, out: &mut Outcome, results: Vec<EpochResult>) {
    for r in results {
        let p = r.sink(inv.priced).to_vec();
        let u = r.sink(inv.unpriced).to_vec();
        out.priced.apply(&p);
        out.unpriced.apply(&u);
        out.epochs.push((r.epoch, p, u));
    }
}

/// Streams the script (`streaming`) or loads it as one batch.
fn execute(inv: &Inventory, s: &Script, workers: usize, streaming: bool) -> Outcome {
    let config = EngineConfig {
        workers,
        check_universes: true,
    };
    let mut rt = Runtime::new(inv.graph.clone(), config);
    let mut out = Outcome {
        epochs: Vec::new(),
        priced: Acc::default(),
        unpriced: Acc::default(),
    };
    for step in &s.steps {
        match step {
            Step::Insert(src, r) => rt.insert(*src, r.clone()).unwrap(),
            Step::Delete(src, r) => rt.delete(*src, r.clone()).unwrap(),
            Step::Commit if streaming => {
                let mut results = rt.commit(ITEMS).unwrap();
                results.extend(rt.commit(PRICES).unwrap());
                absorb(inv, &mut out, results);
            }
            Step::Commit => {}
        }
    }
    let mut results = rt.finish(ITEMS).unwrap();
    results.extend(rt.finish(PRICES).unwrap());
    absorb(inv, &mut out, results);
    out
}

fn churn_free(updates: &[Update]) -> bool {
    let mut signs: BTreeMap<(Key, &Row), (bool, bool)> = BTreeMap::new();
    for u in updates {
        let e = signs.entry((u.key, &u.row)).or_default();
        if u.diff > 0 {
            e.0 = true;
        } else {
            e.1 = true;
        }
    }
    signs.values().all(|(p, n)| !(*p && *n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn streaming_matches_batch_and_model(ops in prop::collection::vec(op(), 0..80)) {
        let inv = inventory();
        let s = script(&ops);
        let (priced, unpriced) = s.last.sinks();

        let batch = execute(&inv, &s, 1, false);
        prop_assert_eq!(batch.priced.table(), priced.clone());
        prop_assert_eq!(batch.unpriced.table(), unpriced.clone());

        let stream = execute(&inv, &s, 1, true);
        prop_assert_eq!(stream.priced.table(), priced);
        prop_assert_eq!(stream.unpriced.table(), unpriced);
    }

    #[test]
    fn every_commit_is_consistent_and_churn_free(ops in prop::collection::vec(op(), 0..80)) {
        let inv = inventory();
        let s = script(&ops);
        let out = execute(&inv, &s, 1, true);
        let mut priced = Acc::default();
        let mut unpriced = Acc::default();
        let mut by_epoch = BTreeMap::new();
        for (epoch, p, u) in &out.epochs {
            prop_assert!(churn_free(p) && churn_free(u), "epoch {} churns", epoch);
            priced.apply(p);
            unpriced.apply(u);
            by_epoch.insert(*epoch, (priced.table(), unpriced.table()));
        }
        // Epoch e closes after the e-th commit point; epochs with no output are
        // not reported, so read the latest state at or before e.
        for (e, m) in s.snapshots.iter().enumerate() {
            let got = by_epoch
                .range(..=e as u64)
                .next_back()
                .map(|(_, t)| t.clone())
                .unwrap_or_default();
            prop_assert_eq!(got, m.sinks(), "after commit {}", e);
        }
    }

    #[test]
    fn outputs_do_not_depend_on_worker_count(ops in prop::collection::vec(op(), 0..60)) {
        let inv = inventory();
        let s = script(&ops);
        let one = execute(&inv, &s, 1, true).epochs;
        for w in [2, 4] {
            let other = execute(&inv, &s, w, true).epochs;
            prop_assert_eq!(&other, &one, "W={}", w);
        }
    }
}

fn items_row(sku: &str, cat: &str, qty: i64) -> Row {
    row([Value::from(sku), Value::from(cat), Value::Int(qty)])
}

#[test]
fn duplicate_key_poisons_the_runtime() {
    let inv = inventory();
    let mut rt = Runtime::new(inv.graph.clone(), EngineConfig::default());
    rt.insert(ITEMS, items_row("a", "x", 1)).unwrap();
    let err = rt.insert(ITEMS, items_row("a", "y", 2)).unwrap_err();
    assert!(matches!(err, EngineError::DuplicateKey { ref table, .. } if table == "items"), "{err}");
    assert_eq!(rt.commit(ITEMS).unwrap_err(), EngineError::Poisoned);
}

#[test]
fn unknown_delete_is_rejected() {
    let inv = inventory();
    let mut rt = Runtime::new(inv.graph.clone(), EngineConfig::default());
    rt.insert(ITEMS, items_row("a", "x", 1)).unwrap();
    let err = rt.delete(ITEMS, items_row("a", "x", 2)).unwrap_err();
    assert_eq!(err, EngineError::UnknownDelete { table: "items".into() });
}

#[test]
fn malformed_rows_are_rejected() {
    let inv = inventory();
    let mut rt = Runtime::new(inv.graph.clone(), EngineConfig::default());
    assert!(matches!(
        rt.insert(ITEMS, row([Value::from("a")])).unwrap_err(),
        EngineError::Arity { expected: 3, found: 1, .. }
    ));
    let mut rt = Runtime::new(inv.graph.clone(), EngineConfig::default());
    let err = rt.insert(ITEMS, row([Value::from("a"), Value::from("x"), Value::from("1")])).unwrap_err();
    assert!(
        matches!(err, EngineError::ColumnType { ref column, expected: ValueType::Int, found: ValueType::Str, .. } if column == "qty"),
        "{err}"
    );
}

#[test]
fn commit_after_finish_is_a_frontier_error() {
    let inv = inventory();
    let mut rt = Runtime::new(inv.graph.clone(), EngineConfig::default());
    rt.finish(ITEMS).unwrap();
    assert!(matches!(rt.commit(ITEMS).unwrap_err(), EngineError::Frontier(_)));
}

/// ratio = a // b over one source.
fn divider() -> (Arc<OperatorGraph>, SinkId) {
    let mut g = GraphBuilder::new();
    let t = g
        .source("t", Schema::new([("a", ValueType::Int), ("b", ValueType::Int)]).unwrap(), &[])
        .unwrap();
    let r = g.select(&t, [("ratio", col("a").floor_div(col("b")))]).unwrap();
    let s = g.sink(&r, SinkSpec::Null).unwrap();
    (Arc::new(g.build().unwrap()), s)
}

#[test]
fn operator_errors_name_the_operator_and_epoch() {
    let (graph, sink) = divider();
    for workers in [1, 3] {
        let mut rt = Runtime::new(graph.clone(), EngineConfig::with_workers(workers));
        for i in 0..20 {
            rt.insert(SourceId(0), row([Value::Int(i), Value::Int(2)])).unwrap();
        }
        let ok = rt.commit(SourceId(0)).unwrap();
        assert_eq!(ok[0].sink(sink).len(), 20);
        rt.insert(SourceId(0), row([Value::Int(-7), Value::Int(2)])).unwrap();
        rt.insert(SourceId(0), row([Value::Int(1), Value::Int(0)])).unwrap();
        match rt.commit(SourceId(0)).unwrap_err() {
            EngineError::Operator { epoch, error: OpError::Eval(e), operator } => {
                assert_eq!(epoch, 1);
                assert!(operator.contains("select"), "{operator}");
                assert!(e.to_string().contains("division by zero"), "{e}");
            }
            other => panic!("W={workers}: unexpected {other}"),
        }
        assert_eq!(rt.finish(SourceId(0)).unwrap_err(), EngineError::Poisoned);
    }
}

#[test]
fn dangling_pointer_fails_under_strict_policy() {
    let mut g = GraphBuilder::new();
    let edges = g
        .source("edges", Schema::new([("u", ValueType::Str), ("v", ValueType::Str)]).unwrap(), &[])
        .unwrap();
    let names = g
        .source("names", Schema::new([("id", ValueType::Str), ("name", ValueType::Str)]).unwrap(), &["id"])
        .unwrap();
    let j = g.ix_join(&edges, pointer([col("u")]), &names, &["name"]).unwrap();
    g.sink(&j, SinkSpec::Null).unwrap();
    let mut rt = Runtime::new(Arc::new(g.build().unwrap()), EngineConfig::default());
    rt.insert(SourceId(0), row([Value::from("p"), Value::from("q")])).unwrap();
    rt.finish(SourceId(1)).unwrap();
    let err = rt.commit(SourceId(0)).unwrap_err();
    assert!(
        matches!(err, EngineError::Operator { error: OpError::MissingKey { .. }, .. }),
        "{err}"
    );
}

#[test]
fn floor_division_rounds_towards_negative_infinity() {
    let (graph, sink) = divider();
    let mut rt = Runtime::new(graph, EngineConfig::default());
    rt.insert(SourceId(0), row([Value::Int(-7), Value::Int(2)])).unwrap();
    let r = rt.finish(SourceId(0)).unwrap();
    assert_eq!(r[0].sink(sink)[0].row[0], Value::Int(-4));
}
