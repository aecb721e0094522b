//! Optimistic latency matching between a word stream and its count stream.
//!
//! The k-th input occurrence of a word matches the earliest output for that
//! word with count exactly k, or failing that the earliest with a larger
//! count. Matches never move backwards: the search for occurrence k starts
//! at the output matched by occurrence k-1.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputEvent {
    pub word: String,
    pub time_ms: u64,
    pub burn_in: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputEvent {
    pub word: String,
    pub count: i64,
    pub time_ms: u64,
}

/// Per input event: index of the matched output event, if any.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    pub matched: Vec<Option<usize>>,
}

impl MatchResult {
    /// `output time - input time` per input, for matched inputs.
    pub fn latencies(&self, inputs: &[InputEvent], outputs: &[OutputEvent]) -> Vec<Option<u64>> {
        self.matched
            .iter()
            .zip(inputs)
            .map(|(m, i)| m.map(|o| outputs[o].time_ms.saturating_sub(i.time_ms)))
            .collect()
    }
}

pub fn match_events(inputs: &[InputEvent], outputs: &[OutputEvent]) -> MatchResult {
    // word -> output indices in log order
    let mut per_word: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, o) in outputs.iter().enumerate() {
        per_word.entry(&o.word).or_default().push(i);
    }
    // word -> (occurrences so far, position in per_word list of the last match)
    let mut cursor: HashMap<&str, (i64, usize)> = HashMap::new();
    let matched = inputs
        .iter()
        .map(|inp| {
            let list = per_word.get(inp.word.as_str())?;
            let (k, from) = cursor.entry(&inp.word).or_insert((0, 0));
            *k += 1;
            let rest = &list[*from..];
            let pos = rest
                .iter()
                .position(|&o| outputs[o].count == *k)
                .or_else(|| rest.iter().position(|&o| outputs[o].count > *k))?;
            *from += pos;
            Some(list[*from])
        })
        .collect();
    MatchResult { matched }
}

/// Nearest-rank percentile of sorted data.
pub fn percentile(sorted: &[u64], p: f64) -> Option<u64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    /// Latency of every measured (post-burn-in, matched) input, in input order.
    pub latencies_ms: Vec<u64>,
    pub p80: Option<u64>,
    pub p90: Option<u64>,
    pub p95: Option<u64>,
    pub p99: Option<u64>,
    pub measured: usize,
    pub unmatched: usize,
    pub burn_in_excluded: usize,
}

impl LatencyReport {
    pub fn no_measurable_events(&self) -> bool {
        self.measured == 0
    }
}

/// Matches and summarizes. Burn-in inputs take part in matching (they
/// advance occurrence counts) but not in the statistics.
pub fn match_latencies(inputs: &[InputEvent], outputs: &[OutputEvent]) -> LatencyReport {
    let m = match_events(inputs, outputs);
    let lat = m.latencies(inputs, outputs);
    let mut latencies_ms = Vec::new();
    let mut unmatched = 0;
    let mut burn_in_excluded = 0;
    for (i, l) in inputs.iter().zip(&lat) {
        match (i.burn_in, l) {
            (true, _) => burn_in_excluded += 1,
            (false, Some(l)) => latencies_ms.push(*l),
            (false, None) => unmatched += 1,
        }
    }
    let mut sorted = latencies_ms.clone();
    sorted.sort_unstable();
    LatencyReport {
        p80: percentile(&sorted, 80.0),
        p90: percentile(&sorted, 90.0),
        p95: percentile(&sorted, 95.0),
        p99: percentile(&sorted, 99.0),
        measured: latencies_ms.len(),
        latencies_ms,
        unmatched,
        burn_in_excluded,
    }
}

#[derive(Serialize, Deserialize)]
struct InputLine {
    time_ms: u64,
    burn_in: bool,
    data: WordData,
}

#[derive(Serialize, Deserialize)]
struct WordData {
    word: String,
}

/// Input log: `{"time_ms", "burn_in", "data": {"word"}}` per admitted word.
pub struct InputLog<W: Write> {
    out: BufWriter<W>,
}

impl InputLog<File> {
    pub fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        Ok(InputLog { out: BufWriter::new(f) })
    }
}

impl<W: Write> InputLog<W> {
    pub fn write(&mut self, e: &InputEvent) -> std::io::Result<()> {
        let line = InputLine {
            time_ms: e.time_ms,
            burn_in: e.burn_in,
            data: WordData { word: e.word.clone() },
        };
        serde_json::to_writer(&mut self.out, &line)?;
        self.out.write_all(b"\n")
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

pub fn read_input_log(path: &Path) -> Result<Vec<InputEvent>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let l: InputLine = serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        out.push(InputEvent {
            word: l.data.word,
            time_ms: l.time_ms,
            burn_in: l.burn_in,
        });
    }
    Ok(out)
}

#[derive(Deserialize)]
struct OutputLine {
    diff: i64,
    data: OutputData,
    time_ms: u64,
}

#[derive(Deserialize)]
struct OutputData {
    word: String,
    count: i64,
}

/// Output events from a count log: insertions only, in log order.
pub fn read_output_log(path: &Path) -> Result<Vec<OutputEvent>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let l: OutputLine = serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        if l.diff > 0 {
            out.push(OutputEvent {
                word: l.data.word,
                count: l.data.count,
                time_ms: l.time_ms,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn i(w: &str, t: u64) -> InputEvent {
        InputEvent {
            word: w.into(),
            time_ms: t,
            burn_in: false,
        }
    }

    fn o(w: &str, c: i64, t: u64) -> OutputEvent {
        OutputEvent {
            word: w.into(),
            count: c,
            time_ms: t,
        }
    }

    #[test]
    fn larger_count_fallback() {
        let r = match_latencies(&[i("a", 1), i("a", 2)], &[o("a", 2, 5)]);
        assert_eq!(r.latencies_ms, vec![4, 3]);
    }

    #[test]
    fn exact_matches() {
        let r = match_latencies(&[i("a", 1), i("a", 2)], &[o("a", 1, 3), o("a", 2, 5)]);
        assert_eq!(r.latencies_ms, vec![2, 3]);
    }

    #[test]
    fn matches_never_move_backwards() {
        let inputs = [i("a", 0), i("a", 1), i("a", 2)];
        let outputs = [o("a", 3, 4), o("a", 2, 6)];
        let m = match_events(&inputs, &outputs);
        // 1 -> (a,3) by fallback, 2 -> (a,2) exact, 3 -> nothing at or after (a,2)
        assert_eq!(m.matched, vec![Some(0), Some(1), None]);
        let r = match_latencies(&inputs, &outputs);
        assert_eq!(r.unmatched, 1);
    }

    #[test]
    fn percentiles_nearest_rank() {
        let v: Vec<u64> = (1..=100).collect();
        assert_eq!(percentile(&v, 80.0), Some(80));
        assert_eq!(percentile(&v, 99.0), Some(99));
        assert_eq!(percentile(&[7], 95.0), Some(7));
        assert_eq!(percentile(&[], 95.0), None);
    }

    #[test]
    fn all_burn_in_has_no_measurable_events() {
        let mut a = i("a", 0);
        a.burn_in = true;
        let r = match_latencies(&[a], &[o("a", 1, 1)]);
        assert!(r.no_measurable_events());
        assert_eq!(r.burn_in_excluded, 1);
        assert_eq!(r.p95, None);
    }

    #[test]
    fn logs_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("in.jsonl");
        let events = vec![i("a", 1), i("b", 2)];
        let mut log = InputLog::create(&p).unwrap();
        for e in &events {
            log.write(e).unwrap();
        }
        log.flush().unwrap();
        assert_eq!(read_input_log(&p).unwrap(), events);

        let q = dir.path().join("out.jsonl");
        std::fs::write(
            &q,
            concat!(
                r#"{"epoch":0,"diff":1,"key":"00","data":{"word":"a","count":1},"time_ms":3}"#,
                "\n",
                r#"{"epoch":1,"diff":-1,"key":"00","data":{"word":"a","count":1},"time_ms":5}"#,
                "\n"
            ),
        )
        .unwrap();
        assert_eq!(read_output_log(&q).unwrap(), vec![o("a", 1, 3)]);
    }
}
