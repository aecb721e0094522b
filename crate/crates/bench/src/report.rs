//! Per-run numbers, medians across repeats, and the two report files.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::latency::LatencyReport;
use crate::BenchConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub p80_ms: Option<u64>,
    pub p90_ms: Option<u64>,
    pub p95_ms: Option<u64>,
    pub p99_ms: Option<u64>,
    pub measured: usize,
    pub unmatched: usize,
    pub burn_in_excluded: usize,
}

impl From<&LatencyReport> for LatencySummary {
    fn from(r: &LatencyReport) -> Self {
        LatencySummary {
            p80_ms: r.p80,
            p90_ms: r.p90,
            p95_ms: r.p95,
            p99_ms: r.p99,
            measured: r.measured,
            unmatched: r.unmatched,
            burn_in_excluded: r.burn_in_excluded,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub runtime_ms: f64,
    pub records: u64,
    /// Input records per second over the whole run.
    pub throughput: f64,
    pub epochs: u64,
    /// Wall time until the first epoch closed.
    pub first_epoch_ms: Option<f64>,
    pub latency: Option<LatencySummary>,
    /// Outcome of the oracle check, when one ran.
    pub verified: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Medians {
    pub runtime_ms: f64,
    pub throughput: f64,
    pub p80_ms: Option<f64>,
    pub p90_ms: Option<f64>,
    pub p95_ms: Option<f64>,
    pub p99_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: BenchConfig,
    pub runs: Vec<RunReport>,
    pub median: Medians,
    pub no_measurable_events: bool,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

fn median_of(runs: &[RunReport], f: impl Fn(&LatencySummary) -> Option<u64>) -> Option<f64> {
    let v: Vec<f64> = runs
        .iter()
        .filter_map(|r| r.latency.as_ref().and_then(&f))
        .map(|x| x as f64)
        .collect();
    median(&v)
}

impl Summary {
    pub fn new(config: BenchConfig, runs: Vec<RunReport>) -> Self {
        assert!(!runs.is_empty(), "at least one run");
        let runtimes: Vec<f64> = runs.iter().map(|r| r.runtime_ms).collect();
        let throughputs: Vec<f64> = runs.iter().map(|r| r.throughput).collect();
        let median = Medians {
            runtime_ms: self::median(&runtimes).unwrap_or_default(),
            throughput: self::median(&throughputs).unwrap_or_default(),
            p80_ms: median_of(&runs, |l| l.p80_ms),
            p90_ms: median_of(&runs, |l| l.p90_ms),
            p95_ms: median_of(&runs, |l| l.p95_ms),
            p99_ms: median_of(&runs, |l| l.p99_ms),
        };
        let no_measurable_events = runs
            .iter()
            .any(|r| r.latency.as_ref().is_some_and(|l| l.measured == 0));
        Summary {
            config,
            runs,
            median,
            no_measurable_events,
        }
    }

    pub fn verified(&self) -> Option<bool> {
        let checks: Vec<bool> = self.runs.iter().filter_map(|r| r.verified).collect();
        (!checks.is_empty()).then(|| checks.iter().all(|&b| b))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.1}"));
        let opt_u = |v: Option<u64>| v.map_or("-".to_string(), |x| x.to_string());
        let mut s = String::new();
        let c = &self.config;
        let _ = writeln!(s, "scenario   {}", c.scenario.name());
        let _ = writeln!(s, "workers    {}", c.workers);
        let _ = writeln!(s, "seed       {}", c.seed);
        let _ = writeln!(s, "runs       {}", self.runs.len());
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:>4} {:>12} {:>10} {:>14} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "run", "runtime_ms", "epochs", "records/s", "p80", "p90", "p95", "p99", "verified"
        );
        for (i, r) in self.runs.iter().enumerate() {
            let l = r.latency.as_ref();
            let _ = writeln!(
                s,
                "{:>4} {:>12.1} {:>10} {:>14.0} {:>8} {:>8} {:>8} {:>8} {:>8}",
                i + 1,
                r.runtime_ms,
                r.epochs,
                r.throughput,
                opt_u(l.and_then(|l| l.p80_ms)),
                opt_u(l.and_then(|l| l.p90_ms)),
                opt_u(l.and_then(|l| l.p95_ms)),
                opt_u(l.and_then(|l| l.p99_ms)),
                r.verified.map_or("-", |v| if v { "ok" } else { "MISMATCH" }),
            );
        }
        let m = &self.median;
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "median     runtime {:.1} ms, {:.0} records/s, latency p80 {} p90 {} p95 {} p99 {} ms",
            m.runtime_ms,
            m.throughput,
            opt(m.p80_ms),
            opt(m.p90_ms),
            opt(m.p95_ms),
            opt(m.p99_ms)
        );
        if self.no_measurable_events {
            let _ = writeln!(s, "note       no measurable events: every input fell in burn-in or went unmatched");
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let json = dir.join("report.json");
        std::fs::write(&json, self.to_json()? + "\n").with_context(|| format!("writing {}", json.display()))?;
        let txt = dir.join("report.txt");
        std::fs::write(&txt, self.to_text()).with_context(|| format!("writing {}", txt.display()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Scenario;

    fn run(runtime_ms: f64, latency: Option<LatencySummary>) -> RunReport {
        RunReport {
            runtime_ms,
            records: 100,
            throughput: 100_000.0 / runtime_ms,
            epochs: 1,
            first_epoch_ms: None,
            latency,
            verified: Some(true),
        }
    }

    #[test]
    fn median_of_five() {
        assert_eq!(median(&[14.0, 10.0, 12.0, 11.0, 13.0]), Some(12.0));
        assert_eq!(median(&[1.0, 2.0]), Some(1.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn summary_takes_medians_and_round_trips() {
        let runs = [10.0, 11.0, 12.0, 13.0, 14.0].iter().map(|&t| run(t, None)).collect();
        let s = Summary::new(BenchConfig::new(Scenario::PagerankBatch), runs);
        assert_eq!(s.median.runtime_ms, 12.0);
        assert!(!s.no_measurable_events);
        assert_eq!(Summary::from_json(&s.to_json().unwrap()).unwrap(), s);
        assert_eq!(s.verified(), Some(true));
    }

    #[test]
    fn empty_latency_set_is_flagged() {
        let l = LatencySummary {
            p80_ms: None,
            p90_ms: None,
            p95_ms: None,
            p99_ms: None,
            measured: 0,
            unmatched: 0,
            burn_in_excluded: 10,
        };
        let s = Summary::new(BenchConfig::new(Scenario::Wordcount), vec![run(5.0, Some(l))]);
        assert!(s.no_measurable_events);
        assert!(s.to_text().contains("no measurable events"));
    }
}
