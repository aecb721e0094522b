//! Table API and operator-graph construction.
//!
//! User code manipulates [`TableHandle`]s through a [`GraphBuilder`]. Every
//! call typechecks its expressions, records universe facts and appends one
//! operator node; no data is touched. [`GraphBuilder::build`] validates the
//! result and freezes it into an [`OperatorGraph`] the engine can run.

mod universe;

use std::fmt;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use thiserror::Error;

pub use universe::{UniverseId, UniverseRelation, Universes};

use crate::expr::{compile, CompiledExpr, Expr, TypeError};
use crate::schema::{DuplicateColumn, Schema};
use crate::value::{Value, ValueType};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SourceId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SinkId(pub usize);

/// Builder-time reference to a table: its schema, universe and producing node.
#[derive(Clone, Debug)]
pub struct TableHandle {
    builder: u64,
    node: NodeId,
    schema: Arc<Schema>,
    universe: UniverseId,
}

impl TableHandle {
    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn universe(&self) -> UniverseId {
        self.universe
    }
}

/// Abelian aggregations; both support retraction by negation.
#[derive(Clone, Debug, PartialEq)]
pub enum ReducerSpec {
    Count,
    IntSum(Expr),
}

/// One output column of a groupby-reduce.
#[derive(Clone, Debug, PartialEq)]
pub enum ReduceColumn {
    /// Value of the i-th grouping expression.
    Group(usize),
    Const(Value),
    Reduce(ReducerSpec),
}

impl From<ReducerSpec> for ReduceColumn {
    fn from(r: ReducerSpec) -> Self {
        ReduceColumn::Reduce(r)
    }
}

#[derive(Clone, Debug)]
pub enum CompiledReduce {
    Group(usize),
    Const(Value),
    Count,
    IntSum(CompiledExpr),
}

/// What `ix` does when the key expression names a row the target lacks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MissingKeyPolicy {
    #[default]
    Strict,
    Skip,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SinkSpec {
    /// Keep updates in memory; the caller reads them off each epoch result.
    Collect,
    /// Count and drop.
    Null,
    /// Append update lines to a JSONL file.
    Jsonl(PathBuf),
}

#[derive(Clone, Debug)]
pub enum Operator {
    Source {
        source: SourceId,
        name: String,
        key_columns: Vec<usize>,
    },
    Select {
        exprs: Vec<CompiledExpr>,
    },
    Filter {
        predicate: CompiledExpr,
    },
    GroupbyReduce {
        group: Vec<CompiledExpr>,
        outputs: Vec<CompiledReduce>,
    },
    IxJoin {
        key: CompiledExpr,
        columns: Vec<usize>,
        policy: MissingKeyPolicy,
    },
    Difference,
    UpdateRows,
    Concat,
    Sink {
        sink: SinkId,
        spec: SinkSpec,
    },
}

impl Operator {
    pub fn kind(&self) -> &'static str {
        match self {
            Operator::Source { .. } => "source",
            Operator::Select { .. } => "select",
            Operator::Filter { .. } => "filter",
            Operator::GroupbyReduce { .. } => "groupby_reduce",
            Operator::IxJoin { .. } => "ix_join",
            Operator::Difference => "difference",
            Operator::UpdateRows => "update_rows",
            Operator::Concat => "concat",
            Operator::Sink { .. } => "sink",
        }
    }

    pub fn is_stateful(&self) -> bool {
        matches!(
            self,
            Operator::GroupbyReduce { .. }
                | Operator::IxJoin { .. }
                | Operator::Difference
                | Operator::UpdateRows
                | Operator::Concat
        )
    }
}

#[derive(Clone, Debug)]
pub struct OperatorNode {
    pub id: NodeId,
    pub op: Operator,
    pub inputs: Vec<NodeId>,
    pub schema: Arc<Schema>,
    pub universe: UniverseId,
}

impl OperatorNode {
    /// `kind#id`, used to name the operator in runtime errors.
    pub fn label(&self) -> String {
        format!("{}#{}", self.op.kind(), self.id.0)
    }
}

#[derive(Clone, Debug)]
pub struct SourceInfo {
    pub id: SourceId,
    pub name: String,
    pub node: NodeId,
    pub schema: Arc<Schema>,
    pub key_columns: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct SinkInfo {
    pub id: SinkId,
    pub node: NodeId,
    pub schema: Arc<Schema>,
    pub spec: SinkSpec,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error(transparent)]
    Type(#[from] TypeError),
    #[error(transparent)]
    DuplicateColumn(#[from] DuplicateColumn),
    #[error("unknown key column `{0}`")]
    UnknownKeyColumn(String),
    #[error("key column `{0}` listed twice")]
    DuplicateKeyColumn(String),
    #[error("duplicate source name `{0}`")]
    DuplicateSource(String),
    #[error("{op}: expected {expected}, found {found}")]
    ExpectedType {
        op: &'static str,
        expected: ValueType,
        found: ValueType,
    },
    #[error("{op}: schemas differ: {left} vs {right}")]
    SchemaMismatch {
        op: &'static str,
        left: Schema,
        right: Schema,
    },
    #[error("concat: operands share a universe and cannot be disjoint")]
    OverlappingUniverses,
    #[error("ix_join: unknown target column `{0}`")]
    UnknownTargetColumn(String),
    #[error("groupby_reduce: group index {0} out of range")]
    GroupIndex(usize),
    #[error("invalid sink spec: {0}")]
    InvalidSink(String),
    #[error("table handle belongs to a different builder")]
    ForeignHandle,
    #[error("graph has no source")]
    NoSource,
    #[error("graph has no sink")]
    NoSink,
}

static BUILDER_IDS: AtomicU64 = AtomicU64::new(1);

pub struct GraphBuilder {
    id: u64,
    nodes: Vec<OperatorNode>,
    universes: Universes,
    sources: Vec<SourceInfo>,
    sinks: Vec<SinkInfo>,
}

impl Default for GraphBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl GraphBuilder {
    pub fn new() -> Self {
        GraphBuilder {
            id: BUILDER_IDS.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            universes: Universes::default(),
            sources: Vec::new(),
            sinks: Vec::new(),
        }
    }

    pub fn universes(&self) -> &Universes {
        &self.universes
    }

    pub fn relation(&self, a: &TableHandle, b: &TableHandle) -> UniverseRelation {
        self.universes.relation(a.universe, b.universe)
    }

    fn own(&self, t: &TableHandle) -> Result<(), GraphError> {
        if t.builder == self.id {
            Ok(())
        } else {
            Err(GraphError::ForeignHandle)
        }
    }

    fn push(
        &mut self,
        op: Operator,
        inputs: Vec<NodeId>,
        schema: Arc<Schema>,
        universe: UniverseId,
    ) -> TableHandle {
        let id = NodeId(self.nodes.len());
        self.nodes.push(OperatorNode {
            id,
            op,
            inputs,
            schema: schema.clone(),
            universe,
        });
        TableHandle {
            builder: self.id,
            node: id,
            schema,
            universe,
        }
    }

    /// Declares an input table. Rows are keyed by the hash of `key_columns`;
    /// with no key columns every inserted row gets a fresh key.
    pub fn source(
        &mut self,
        name: &str,
        schema: Schema,
        key_columns: &[&str],
    ) -> Result<TableHandle, GraphError> {
        if self.sources.iter().any(|s| s.name == name) {
            return Err(GraphError::DuplicateSource(name.to_owned()));
        }
        let mut keys = Vec::with_capacity(key_columns.len());
        for &k in key_columns {
            let idx = schema
                .index_of(k)
                .ok_or_else(|| GraphError::UnknownKeyColumn(k.to_owned()))?;
            if keys.contains(&idx) {
                return Err(GraphError::DuplicateKeyColumn(k.to_owned()));
            }
            keys.push(idx);
        }
        let source = SourceId(self.sources.len());
        let universe = self.universes.fresh();
        let schema = Arc::new(schema);
        let handle = self.push(
            Operator::Source {
                source,
                name: name.to_owned(),
                key_columns: keys.clone(),
            },
            Vec::new(),
            schema.clone(),
            universe,
        );
        self.sources.push(SourceInfo {
            id: source,
            name: name.to_owned(),
            node: handle.node,
            schema,
            key_columns: keys,
        });
        Ok(handle)
    }

    /// Row-wise projection; keeps the universe.
    pub fn select<S: Into<String>>(
        &mut self,
        t: &TableHandle,
        outputs: impl IntoIterator<Item = (S, Expr)>,
    ) -> Result<TableHandle, GraphError> {
        self.own(t)?;
        let mut schema = Schema::default();
        let mut exprs = Vec::new();
        for (name, e) in outputs {
            let c = compile(&e, &t.schema)?;
            schema.push(name.into(), c.ty())?;
            exprs.push(c);
        }
        Ok(self.push(
            Operator::Select { exprs },
            vec![t.node],
            Arc::new(schema),
            t.universe,
        ))
    }

    pub fn filter(&mut self, t: &TableHandle, predicate: Expr) -> Result<TableHandle, GraphError> {
        self.own(t)?;
        let predicate = compile(&predicate, &t.schema)?;
        if predicate.ty() != ValueType::Bool {
            return Err(GraphError::ExpectedType {
                op: "filter",
                expected: ValueType::Bool,
                found: predicate.ty(),
            });
        }
        let universe = self.universes.fresh();
        self.universes.declare_subset(universe, t.universe);
        Ok(self.push(
            Operator::Filter { predicate },
            vec![t.node],
            t.schema.clone(),
            universe,
        ))
    }

    /// Groups rows by the values of `group`; the output row of a group is keyed
    /// by the hash of those values.
    pub fn groupby_reduce<S: Into<String>>(
        &mut self,
        t: &TableHandle,
        group: impl IntoIterator<Item = Expr>,
        outputs: impl IntoIterator<Item = (S, ReduceColumn)>,
    ) -> Result<TableHandle, GraphError> {
        self.own(t)?;
        let group = group
            .into_iter()
            .map(|e| compile(&e, &t.schema))
            .collect::<Result<Vec<_>, _>>()?;
        let mut schema = Schema::default();
        let mut compiled = Vec::new();
        for (name, out) in outputs {
            let (c, ty) = match out {
                ReduceColumn::Group(i) => {
                    let g = group.get(i).ok_or(GraphError::GroupIndex(i))?;
                    (CompiledReduce::Group(i), g.ty())
                }
                ReduceColumn::Const(v) => {
                    let ty = v.value_type();
                    (CompiledReduce::Const(v), ty)
                }
                ReduceColumn::Reduce(ReducerSpec::Count) => (CompiledReduce::Count, ValueType::Int),
                ReduceColumn::Reduce(ReducerSpec::IntSum(e)) => {
                    let c = compile(&e, &t.schema)?;
                    if c.ty() != ValueType::Int {
                        return Err(GraphError::ExpectedType {
                            op: "int_sum",
                            expected: ValueType::Int,
                            found: c.ty(),
                        });
                    }
                    (CompiledReduce::IntSum(c), ValueType::Int)
                }
            };
            schema.push(name.into(), ty)?;
            compiled.push(c);
        }
        let universe = self.universes.fresh();
        Ok(self.push(
            Operator::GroupbyReduce {
                group,
                outputs: compiled,
            },
            vec![t.node],
            Arc::new(schema),
            universe,
        ))
    }

    /// Extends every row of `t` with `columns` of the `target` row whose key
    /// `key` evaluates to.
    pub fn ix_join(
        &mut self,
        t: &TableHandle,
        key: Expr,
        target: &TableHandle,
        columns: &[&str],
    ) -> Result<TableHandle, GraphError> {
        self.ix_join_with(t, key, target, columns, MissingKeyPolicy::Strict)
    }

    pub fn ix_join_with(
        &mut self,
        t: &TableHandle,
        key: Expr,
        target: &TableHandle,
        columns: &[&str],
        policy: MissingKeyPolicy,
    ) -> Result<TableHandle, GraphError> {
        self.own(t)?;
        self.own(target)?;
        let key = compile(&key, &t.schema)?;
        if key.ty() != ValueType::Key {
            return Err(GraphError::ExpectedType {
                op: "ix_join",
                expected: ValueType::Key,
                found: key.ty(),
            });
        }
        let mut schema = (*t.schema).clone();
        let mut picked = Vec::with_capacity(columns.len());
        for &c in columns {
            let (idx, ty) = target
                .schema
                .column(c)
                .ok_or_else(|| GraphError::UnknownTargetColumn(c.to_owned()))?;
            schema.push(c.to_owned(), ty)?;
            picked.push(idx);
        }
        let universe = match policy {
            MissingKeyPolicy::Strict => t.universe,
            MissingKeyPolicy::Skip => {
                let u = self.universes.fresh();
                self.universes.declare_subset(u, t.universe);
                u
            }
        };
        Ok(self.push(
            Operator::IxJoin {
                key,
                columns: picked,
                policy,
            },
            vec![t.node, target.node],
            Arc::new(schema),
            universe,
        ))
    }

    /// Rows of `a` whose keys are absent from `b`. Only keys are compared.
    pub fn difference(&mut self, a: &TableHandle, b: &TableHandle) -> Result<TableHandle, GraphError> {
        self.own(a)?;
        self.own(b)?;
        let universe = self.universes.fresh();
        self.universes.declare_subset(universe, a.universe);
        self.universes.declare_disjoint(universe, b.universe);
        Ok(self.push(
            Operator::Difference,
            vec![a.node, b.node],
            a.schema.clone(),
            universe,
        ))
    }

    /// Key union of `a` and `b`; on shared keys `b`'s row wins.
    pub fn update_rows(&mut self, a: &TableHandle, b: &TableHandle) -> Result<TableHandle, GraphError> {
        self.own(a)?;
        self.own(b)?;
        same_schema("update_rows", a, b)?;
        let universe = self.universes.fresh();
        self.universes.declare_subset(a.universe, universe);
        self.universes.declare_subset(b.universe, universe);
        Ok(self.push(
            Operator::UpdateRows,
            vec![a.node, b.node],
            a.schema.clone(),
            universe,
        ))
    }

    /// Union of two tables with disjoint keys. Disjointness not provable at
    /// build time is checked at runtime.
    pub fn concat(&mut self, a: &TableHandle, b: &TableHandle) -> Result<TableHandle, GraphError> {
        self.own(a)?;
        self.own(b)?;
        same_schema("concat", a, b)?;
        if self.universes.relation(a.universe, b.universe) == UniverseRelation::Equal {
            return Err(GraphError::OverlappingUniverses);
        }
        let universe = self.universes.fresh();
        self.universes.declare_subset(a.universe, universe);
        self.universes.declare_subset(b.universe, universe);
        Ok(self.push(
            Operator::Concat,
            vec![a.node, b.node],
            a.schema.clone(),
            universe,
        ))
    }

    pub fn sink(&mut self, t: &TableHandle, spec: SinkSpec) -> Result<SinkId, GraphError> {
        self.own(t)?;
        if let SinkSpec::Jsonl(path) = &spec {
            if path.as_os_str().is_empty() {
                return Err(GraphError::InvalidSink("empty path".into()));
            }
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() && !parent.is_dir() {
                    return Err(GraphError::InvalidSink(format!(
                        "directory {} does not exist",
                        parent.display()
                    )));
                }
            }
        }
        let id = SinkId(self.sinks.len());
        let handle = self.push(
            Operator::Sink {
                sink: id,
                spec: spec.clone(),
            },
            vec![t.node],
            t.schema.clone(),
            t.universe,
        );
        self.sinks.push(SinkInfo {
            id,
            node: handle.node,
            schema: t.schema.clone(),
            spec,
        });
        Ok(id)
    }

    /// Validates the graph and drops operators that feed no sink.
    pub fn build(self) -> Result<OperatorGraph, GraphError> {
        if self.sources.is_empty() {
            return Err(GraphError::NoSource);
        }
        if self.sinks.is_empty() {
            return Err(GraphError::NoSink);
        }
        let n = self.nodes.len();
        // Sources are kept even when unused so that pushes to them stay valid,
        // but nothing else survives unless a sink depends on it.
        let mut feeds_sink = vec![false; n];
        for s in &self.sinks {
            feeds_sink[s.node.0] = true;
        }
        for i in (0..n).rev() {
            if feeds_sink[i] {
                for input in &self.nodes[i].inputs {
                    feeds_sink[input.0] = true;
                }
            }
        }
        let mut remap = vec![None; n];
        let mut nodes = Vec::new();
        for (i, node) in self.nodes.into_iter().enumerate() {
            let keep = feeds_sink[i] || matches!(node.op, Operator::Source { .. });
            if !keep {
                continue;
            }
            let id = NodeId(nodes.len());
            remap[i] = Some(id);
            let inputs = node
                .inputs
                .iter()
                .map(|x| remap[x.0].expect("inputs precede consumers"))
                .collect();
            nodes.push(OperatorNode {
                id,
                inputs,
                ..node
            });
        }
        let sources = self
            .sources
            .into_iter()
            .map(|s| SourceInfo {
                node: remap[s.node.0].expect("sources are kept"),
                ..s
            })
            .collect();
        let sinks = self
            .sinks
            .into_iter()
            .map(|s| SinkInfo {
                node: remap[s.node.0].expect("sinks are kept"),
                ..s
            })
            .collect();
        Ok(OperatorGraph {
            nodes,
            sources,
            sinks,
            universes: self.universes,
        })
    }
}

fn same_schema(op: &'static str, a: &TableHandle, b: &TableHandle) -> Result<(), GraphError> {
    if a.schema == b.schema {
        Ok(())
    } else {
        Err(GraphError::SchemaMismatch {
            op,
            left: (*a.schema).clone(),
            right: (*b.schema).clone(),
        })
    }
}

/// Validated, immutable operator graph in topological order.
#[derive(Clone, Debug)]
pub struct OperatorGraph {
    nodes: Vec<OperatorNode>,
    sources: Vec<SourceInfo>,
    sinks: Vec<SinkInfo>,
    universes: Universes,
}

impl OperatorGraph {
    pub fn nodes(&self) -> &[OperatorNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &OperatorNode {
        &self.nodes[id.0]
    }

    pub fn sources(&self) -> &[SourceInfo] {
        &self.sources
    }

    pub fn sinks(&self) -> &[SinkInfo] {
        &self.sinks
    }

    pub fn universes(&self) -> &Universes {
        &self.universes
    }

    pub fn source_id(&self, name: &str) -> Option<SourceId> {
        self.sources.iter().find(|s| s.name == name).map(|s| s.id)
    }

    pub fn source(&self, id: SourceId) -> &SourceInfo {
        &self.sources[id.0]
    }

    pub fn sink(&self, id: SinkId) -> &SinkInfo {
        &self.sinks[id.0]
    }

    /// Number of nodes of the given kind, e.g. `"ix_join"`.
    pub fn count_kind(&self, kind: &str) -> usize {
        self.nodes.iter().filter(|n| n.op.kind() == kind).count()
    }

    /// Structural fingerprint: node kinds, inputs and schemas, one per line.
    pub fn shape(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for OperatorGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for n in &self.nodes {
            write!(f, "{} <-", n.label())?;
            for i in &n.inputs {
                write!(f, " {}", i.0)?;
            }
            writeln!(f, " : {}", n.schema)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{col, lit, pointer};

    fn words(g: &mut GraphBuilder) -> TableHandle {
        g.source("words", Schema::new([("word", ValueType::Str)]).unwrap(), &[])
            .unwrap()
    }

    #[test]
    fn source_key_columns() {
        let mut g = GraphBuilder::new();
        let s = Schema::new([("u", ValueType::Str), ("v", ValueType::Str)]).unwrap();
        let edges = g.source("edges", s.clone(), &["u", "v"]).unwrap();
        assert_eq!(edges.schema(), &s);
        assert_eq!(
            g.source("dup", s.clone(), &["u", "u"]).unwrap_err(),
            GraphError::DuplicateKeyColumn("u".into())
        );
        assert_eq!(
            g.source("bad", s, &["w"]).unwrap_err(),
            GraphError::UnknownKeyColumn("w".into())
        );
    }

    #[test]
    fn select_keeps_universe() {
        let mut g = GraphBuilder::new();
        let t = words(&mut g);
        let s = g.select(&t, [("rank", lit(6000i64))]).unwrap();
        assert_eq!(s.universe(), t.universe());
        assert_eq!(s.schema().column("rank"), Some((0, ValueType::Int)));
        assert!(matches!(
            g.select(&t, [("x", col("word") + lit(1i64))]),
            Err(GraphError::Type(_))
        ));
    }

    #[test]
    fn filter_requires_bool() {
        let mut g = GraphBuilder::new();
        let t = words(&mut g);
        assert!(matches!(
            g.filter(&t, lit(1i64)),
            Err(GraphError::ExpectedType { .. })
        ));
        let f = g.filter(&t, lit(true)).unwrap();
        assert_eq!(g.relation(&f, &t), UniverseRelation::Subset);
    }

    #[test]
    fn set_operations_record_universe_facts() {
        let mut g = GraphBuilder::new();
        let a = words(&mut g);
        let b = g
            .source("other", Schema::new([("word", ValueType::Str)]).unwrap(), &[])
            .unwrap();
        let d = g.difference(&a, &b).unwrap();
        assert_eq!(g.relation(&d, &a), UniverseRelation::Subset);
        assert_eq!(g.relation(&d, &b), UniverseRelation::Disjoint);
        let u = g.update_rows(&a, &b).unwrap();
        assert_eq!(g.relation(&a, &u), UniverseRelation::Subset);
        assert_eq!(g.concat(&a, &a).unwrap_err(), GraphError::OverlappingUniverses);
        let sel = g.select(&a, [("n", lit(1i64))]).unwrap();
        assert!(matches!(
            g.update_rows(&a, &sel),
            Err(GraphError::SchemaMismatch { .. })
        ));
    }

    #[test]
    fn ix_join_schema_and_key_type() {
        let mut g = GraphBuilder::new();
        let edges = g
            .source(
                "edges",
                Schema::new([("u", ValueType::Str), ("v", ValueType::Str)]).unwrap(),
                &["u", "v"],
            )
            .unwrap();
        let out = g
            .groupby_reduce(
                &edges,
                [col("u")],
                [("degree", ReducerSpec::Count.into())],
            )
            .unwrap();
        let j = g.ix_join(&edges, pointer([col("u")]), &out, &["degree"]).unwrap();
        assert_eq!(j.schema().names().collect::<Vec<_>>(), ["u", "v", "degree"]);
        assert_eq!(j.universe(), edges.universe());
        assert!(matches!(
            g.ix_join(&edges, col("u"), &out, &["degree"]),
            Err(GraphError::ExpectedType { .. })
        ));
        assert!(matches!(
            g.ix_join(&edges, pointer([col("u")]), &out, &["nope"]),
            Err(GraphError::UnknownTargetColumn(_))
        ));
    }

    #[test]
    fn groupby_int_sum_must_be_int() {
        let mut g = GraphBuilder::new();
        let t = words(&mut g);
        assert!(matches!(
            g.groupby_reduce(&t, [col("word")], [("s", ReducerSpec::IntSum(col("word")).into())]),
            Err(GraphError::ExpectedType { .. })
        ));
    }

    #[test]
    fn wordcount_graph() {
        let mut g = GraphBuilder::new();
        let t = words(&mut g);
        let counts = g
            .groupby_reduce(
                &t,
                [col("word")],
                [
                    ("word", ReduceColumn::Group(0)),
                    ("count", ReducerSpec::Count.into()),
                ],
            )
            .unwrap();
        g.sink(&counts, SinkSpec::Null).unwrap();
        let graph = g.build().unwrap();
        let kinds: Vec<_> = graph.nodes().iter().map(|n| n.op.kind()).collect();
        assert_eq!(kinds, ["source", "groupby_reduce", "sink"]);
    }

    #[test]
    fn build_requires_sink_and_prunes_dead_nodes() {
        let mut g = GraphBuilder::new();
        let t = words(&mut g);
        g.select(&t, [("x", lit(1i64))]).unwrap();
        assert_eq!(g.build().unwrap_err(), GraphError::NoSink);

        let mut g = GraphBuilder::new();
        let t = words(&mut g);
        g.select(&t, [("x", lit(1i64))]).unwrap();
        g.sink(&t, SinkSpec::Collect).unwrap();
        let graph = g.build().unwrap();
        assert_eq!(graph.nodes().len(), 2);
    }

    #[test]
    fn invalid_sink_path() {
        let mut g = GraphBuilder::new();
        let t = words(&mut g);
        assert!(matches!(
            g.sink(&t, SinkSpec::Jsonl("/definitely/not/here/out.jsonl".into())),
            Err(GraphError::InvalidSink(_))
        ));
    }

    #[test]
    fn foreign_handles_are_rejected() {
        let mut g1 = GraphBuilder::new();
        let mut g2 = GraphBuilder::new();
        let t = words(&mut g1);
        assert_eq!(
            g2.select(&t, [("x", lit(1i64))]).unwrap_err(),
            GraphError::ForeignHandle
        );
    }
}
