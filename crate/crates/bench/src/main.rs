use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{ensure, Context, Result};
use clap::{Parser, ValueEnum};

use deltaflow_bench::datasets::{edge_stream, gen_graph, gen_words, read_edges, read_words, write_edge_stream};
use deltaflow_bench::pipelines::PAGERANK_STEPS;
use deltaflow_bench::report::{RunReport, Summary};
use deltaflow_bench::scenarios::{run_pagerank_stream, run_wordcount, PagerankOptions};
use deltaflow_bench::{BenchConfig, Scenario};

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Wordcount,
    PagerankBatch,
    PagerankStream,
    PagerankBackfill,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::Wordcount => Scenario::Wordcount,
            ScenarioArg::PagerankBatch => Scenario::PagerankBatch,
            ScenarioArg::PagerankStream => Scenario::PagerankStream,
            ScenarioArg::PagerankBackfill => Scenario::PagerankBackfill,
        }
    }
}

/// Runs a benchmark scenario and writes logs and a report to `--out`.
#[derive(Parser)]
#[command(name = "bench")]
struct Args {
    scenario: ScenarioArg,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Commit after this many input records (default 1000).
    #[arg(long, conflicts_with = "commit_every_ms")]
    commit_every_records: Option<usize>,
    /// Commit this often, in milliseconds of wall time.
    #[arg(long)]
    commit_every_ms: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSONL words (`{"word"}`) or edges (`{"u","v"}`); generated when absent.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    batch_size: usize,
    /// Share of edges loaded in the first epoch (scenario default when absent).
    #[arg(long)]
    backfill_fraction: Option<f64>,
    #[arg(long, default_value_t = 5)]
    repeat: usize,
    #[arg(long, default_value = "bench-out")]
    out: PathBuf,
    /// Check results against the reference implementation; exit 1 on mismatch.
    #[arg(long)]
    verify: bool,
    /// Generated word count.
    #[arg(long, default_value_t = 1_000_000)]
    words: usize,
    #[arg(long, default_value_t = 5000)]
    dict_size: usize,
    #[arg(long, default_value_t = 7)]
    word_len: usize,
    /// Generated edge count.
    #[arg(long, default_value_t = 20_000)]
    edges: usize,
    /// Replay rate in records per second; unpaced when absent.
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long, default_value_t = 0)]
    burn_in_ms: u64,
    #[arg(long, default_value_t = 0.1)]
    burn_in_start: f64,
}

impl Args {
    fn config(&self) -> BenchConfig {
        let mut cfg = BenchConfig::new(self.scenario.into());
        cfg.workers = self.workers;
        cfg.commit_every_records = self.commit_every_records;
        cfg.commit_every_ms = self.commit_every_ms;
        cfg.seed = self.seed;
        cfg.dataset = self.dataset.clone();
        cfg.words = self.words;
        cfg.dict_size = self.dict_size;
        cfg.word_len = self.word_len;
        cfg.edges = self.edges;
        cfg.batch_size = self.batch_size;
        if let Some(f) = self.backfill_fraction {
            cfg.backfill_fraction = f;
        }
        cfg.repeat = self.repeat;
        cfg.rate = self.rate;
        cfg.burn_in_ms = self.burn_in_ms;
        cfg.burn_in_start = self.burn_in_start;
        cfg.out = self.out.clone();
        cfg.verify = self.verify;
        cfg
    }
}

fn wordcount(cfg: &BenchConfig) -> Result<Vec<RunReport>> {
    let words = match &cfg.dataset {
        Some(p) => read_words(p)?,
        None => gen_words(cfg.words, cfg.dict_size, cfg.word_len, cfg.seed)?,
    };
    let mut runs = Vec::with_capacity(cfg.repeat);
    for run in 0..cfg.repeat {
        // Every run logs, so runs cost the same; the last run's logs remain.
        let out = run_wordcount(cfg, &words, run, Some(&cfg.out))?;
        eprintln!(
            "run {}: {:.0} ms, {:.0} words/s, {} epochs",
            run + 1,
            out.report.runtime_ms,
            out.report.throughput,
            out.report.epochs
        );
        runs.push(out.report);
    }
    Ok(runs)
}

fn pagerank(cfg: &BenchConfig) -> Result<Vec<RunReport>> {
    let edges = match &cfg.dataset {
        Some(p) => read_edges(p)?,
        None => gen_graph(cfg.edges, cfg.seed),
    };
    let stream = edge_stream(&edges, cfg.batch_size, cfg.backfill_fraction)?;
    write_edge_stream(&cfg.out.join("input.log.jsonl"), &stream)?;
    let log = cfg.out.join("output.log.jsonl");
    let mut runs = Vec::with_capacity(cfg.repeat);
    for run in 0..cfg.repeat {
        let out = run_pagerank_stream(
            &stream,
            PagerankOptions {
                workers: cfg.workers,
                snapshots: cfg.verify,
                log: Some(&log),
            },
        )?;
        let verified = cfg.verify.then(|| {
            let bad = out.oracle_mismatches(&edges, PAGERANK_STEPS);
            for e in &bad {
                eprintln!("run {}: epoch {e} differs from the reference ranks", run + 1);
            }
            bad.is_empty()
        });
        let secs = (out.runtime_ms / 1e3).max(1e-9);
        eprintln!(
            "run {}: {:.0} ms, {} epochs, first epoch {:.0} ms",
            run + 1,
            out.runtime_ms,
            out.epochs.len(),
            out.first_epoch_ms().unwrap_or_default()
        );
        runs.push(RunReport {
            runtime_ms: out.runtime_ms,
            records: edges.len() as u64,
            throughput: edges.len() as f64 / secs,
            epochs: out.epochs.len() as u64,
            first_epoch_ms: out.first_epoch_ms(),
            latency: None,
            verified,
        });
    }
    Ok(runs)
}

fn main() -> Result<ExitCode> {
    let args = Args::parse();
    let cfg = args.config();
    ensure!(cfg.workers >= 1, "--workers must be at least 1");
    ensure!(cfg.repeat >= 1, "--repeat must be at least 1");
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;

    let runs = match cfg.scenario {
        Scenario::Wordcount => wordcount(&cfg)?,
        _ => pagerank(&cfg)?,
    };
    let summary = Summary::new(cfg.clone(), runs);
    summary.write(&cfg.out)?;
    print!("{}", summary.to_text());
    if summary.verified() == Some(false) {
        eprintln!("verification failed");
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}
