//! A small incremental dataflow engine over keyed tables.
//!
//! Build an [`OperatorGraph`] with a [`GraphBuilder`], then drive it with a
//! [`Runtime`] (or [`run`]) in batch, streaming or backfill mode. Every mode
//! runs the same graph; outputs are streams of `(key, row, diff, epoch)`.

pub mod connectors;
pub mod engine;
pub mod expr;
pub mod graph;
pub mod schema;
pub mod update;
pub mod value;

pub use engine::{run, run_with, EngineConfig, EngineError, EpochResult, EpochStats, RunMode, Runtime};
pub use expr::{col, if_else, lit, pointer, this_id, BinOp, Expr};
pub use graph::{
    GraphBuilder, GraphError, MissingKeyPolicy, OperatorGraph, ReduceColumn, ReducerSpec, SinkId, SinkSpec,
    SourceId, TableHandle,
};
pub use schema::{Column, Schema};
pub use update::{row, DataKind, Epoch, Row, StreamRecord, Update};
pub use value::{hash_key, Key, Value, ValueType};
