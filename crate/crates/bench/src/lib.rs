//! Wordcount and PageRank benchmarks: datasets, pipelines, oracles, the
//! latency matcher and report generation.

pub mod consistency;
pub mod datasets;
pub mod latency;
pub mod oracle;
pub mod pipelines;
pub mod report;
pub mod scenarios;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use deltaflow::connectors::{CommitPolicy, ReplaySpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Wordcount,
    PagerankBatch,
    PagerankStream,
    PagerankBackfill,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Wordcount => "wordcount",
            Scenario::PagerankBatch => "pagerank-batch",
            Scenario::PagerankStream => "pagerank-stream",
            Scenario::PagerankBackfill => "pagerank-backfill",
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub scenario: Scenario,
    pub workers: usize,
    pub commit_every_records: Option<usize>,
    pub commit_every_ms: Option<u64>,
    pub seed: u64,
    /// Words (`{"word"}`) or edges (`{"u","v"}`) as JSONL; generated when absent.
    pub dataset: Option<PathBuf>,
    pub words: usize,
    pub dict_size: usize,
    pub word_len: usize,
    pub edges: usize,
    pub batch_size: usize,
    pub backfill_fraction: f64,
    pub repeat: usize,
    /// Replay rate in records/s; unpaced when absent.
    pub rate: Option<f64>,
    pub burn_in_ms: u64,
    pub burn_in_start: f64,
    pub out: PathBuf,
    pub verify: bool,
}

impl BenchConfig {
    /// Desk-scale defaults.
    pub fn new(scenario: Scenario) -> Self {
        BenchConfig {
            scenario,
            workers: 1,
            commit_every_records: None,
            commit_every_ms: None,
            seed: 0,
            dataset: None,
            words: 1_000_000,
            dict_size: 5000,
            word_len: 7,
            edges: 20_000,
            batch_size: 1000,
            backfill_fraction: match scenario {
                Scenario::PagerankBackfill => 0.9,
                Scenario::PagerankStream => 0.0,
                _ => 1.0,
            },
            repeat: 5,
            rate: None,
            burn_in_ms: 0,
            burn_in_start: 0.1,
            out: PathBuf::from("bench-out"),
            verify: false,
        }
    }

    pub fn commit_policy(&self) -> CommitPolicy {
        match (self.commit_every_records, self.commit_every_ms) {
            (Some(n), _) => CommitPolicy::EveryNRecords(n),
            (None, Some(ms)) => CommitPolicy::EveryMillis(ms),
            (None, None) => CommitPolicy::EveryNRecords(1000),
        }
    }

    pub fn replay_spec(&self, run: usize) -> Option<ReplaySpec> {
        self.rate.map(|r| {
            let spec = ReplaySpec::new(r, self.seed.wrapping_add(run as u64));
            if self.burn_in_ms > 0 {
                spec.with_burn_in(self.burn_in_ms, self.burn_in_start)
            } else {
                spec
            }
        })
    }
}
