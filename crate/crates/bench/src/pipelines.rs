//! The two benchmark pipelines, built on the Table API.

use std::sync::Arc;

use anyhow::Result;

use deltaflow::graph::GraphBuilder;
use deltaflow::{
    col, if_else, lit, pointer, this_id, OperatorGraph, ReduceColumn, ReducerSpec, Schema, SinkId, SinkSpec, Value,
    ValueType,
};

pub const PAGERANK_STEPS: usize = 5;

/// `words.groupby(word).reduce(word, count=count())`.
pub fn wordcount(sink: SinkSpec) -> Result<(Arc<OperatorGraph>, SinkId)> {
    let mut g = GraphBuilder::new();
    let words = g.source("words", Schema::new([("word", ValueType::Str)])?, &[])?;
    let counts = g.groupby_reduce(
        &words,
        [col("word")],
        [
            ("word", ReduceColumn::Group(0)),
            ("count", ReducerSpec::Count.into()),
        ],
    )?;
    let sink = g.sink(&counts, sink)?;
    Ok((Arc::new(g.build()?), sink))
}

/// Integer PageRank over an edge table `{u, v}` of vertex labels, unrolled
/// `steps` times. Output rows are `{rank}` keyed by `pointer(label)`.
pub fn pagerank(steps: usize, sink: SinkSpec) -> Result<(Arc<OperatorGraph>, SinkId)> {
    let mut g = GraphBuilder::new();
    let edges = g.source(
        "edges",
        Schema::new([("u", ValueType::Str), ("v", ValueType::Str)])?,
        &[],
    )?;
    let in_vertices = g.groupby_reduce(&edges, [col("v")], [("degree", ReduceColumn::Const(Value::Int(0)))])?;
    let out_vertices = g.groupby_reduce(&edges, [col("u")], [("degree", ReducerSpec::Count.into())])?;
    let degrees = g.update_rows(&in_vertices, &out_vertices)?;
    let base_vertices = g.difference(&out_vertices, &in_vertices)?;
    let base = g.select(&base_vertices, [("flow", lit(0))])?;

    let mut ranks = g.select(&degrees, [("rank", lit(6_000))])?;
    for _ in 0..steps {
        let with_rank = g.ix_join(&degrees, this_id(), &ranks, &["rank"])?;
        let outflow = g.select(
            &with_rank,
            [(
                "flow",
                if_else(
                    col("degree").eq(lit(0)),
                    lit(0),
                    (col("rank") * lit(5)).floor_div(col("degree") * lit(6)),
                ),
            )],
        )?;
        let edge_flows = g.ix_join(&edges, pointer([col("u")]), &outflow, &["flow"])?;
        let inflows = g.groupby_reduce(
            &edge_flows,
            [col("v")],
            [("flow", ReducerSpec::IntSum(col("flow")).into())],
        )?;
        let inflows = g.concat(&base, &inflows)?;
        ranks = g.select(&inflows, [("rank", col("flow") + lit(1_000))])?;
    }
    let sink = g.sink(&ranks, sink)?;
    Ok((Arc::new(g.build()?), sink))
}
