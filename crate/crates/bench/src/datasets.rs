//! Seeded word and edge datasets, and the edge-stream layout used by the
//! PageRank scenarios.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use rand::distributions::{Distribution, Uniform, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use deltaflow::{row, StreamRecord, Value};

/// `dict_size` distinct random lowercase words of `word_len` letters.
pub fn dictionary(dict_size: usize, word_len: usize, rng: &mut impl Rng) -> Result<Vec<String>> {
    ensure!(dict_size >= 1, "dictionary needs at least one word");
    let capacity = 26f64.powi(word_len as i32);
    if dict_size as f64 > capacity {
        bail!("{dict_size} distinct words do not fit in {word_len} letters");
    }
    let letters = Uniform::new_inclusive(b'a', b'z');
    let mut seen = HashSet::with_capacity(dict_size);
    let mut words = Vec::with_capacity(dict_size);
    while words.len() < dict_size {
        let w: String = (0..word_len).map(|_| letters.sample(rng) as char).collect();
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    Ok(words)
}

/// `n` words drawn uniformly from a seeded dictionary.
pub fn gen_words(n: usize, dict_size: usize, word_len: usize, seed: u64) -> Result<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dict = dictionary(dict_size, word_len, &mut rng)?;
    let pick = Uniform::new(0, dict.len());
    Ok((0..n).map(|_| dict[pick.sample(&mut rng)].clone()).collect())
}

#[derive(Serialize, Deserialize)]
struct WordLine<'a> {
    word: &'a str,
}

pub fn write_words(path: &Path, words: &[String]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for w in words {
        serde_json::to_writer(&mut out, &WordLine { word: w })?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_words(path: &Path) -> Result<Vec<String>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut words = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let w: WordLine = serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        words.push(w.word.to_string());
    }
    Ok(words)
}

pub fn word_records(words: &[String]) -> Vec<StreamRecord> {
    words
        .iter()
        .map(|w| StreamRecord::insert(row([Value::from(w.as_str())])))
        .collect()
}

pub type Edge = (String, String);

/// Seeded power-law directed graph with `edges` distinct edges and no
/// self-loops, in random order. Endpoint weights follow `i^(-1/(gamma-1))`
/// with gamma = 2.5, on `edges / 8` vertices.
pub fn gen_graph(edges: usize, seed: u64) -> Vec<Edge> {
    let vertices = (edges / 8).max(4);
    let weights: Vec<f64> = (1..=vertices).map(|i| (i as f64).powf(-1.0 / 1.5)).collect();
    let pick = WeightedIndex::new(&weights).expect("positive weights");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Random labels so vertex rank does not correlate with label order.
    let mut labels: Vec<usize> = (0..vertices).collect();
    labels.shuffle(&mut rng);
    let max_edges = vertices * (vertices - 1);
    let target = edges.min(max_edges);
    let mut seen = HashSet::with_capacity(target);
    let mut out = Vec::with_capacity(target);
    while out.len() < target {
        let u = pick.sample(&mut rng);
        let v = pick.sample(&mut rng);
        if u != v && seen.insert((u, v)) {
            out.push((format!("n{}", labels[u]), format!("n{}", labels[v])));
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
struct EdgeLine {
    u: String,
    v: String,
}

pub fn write_edges(path: &Path, edges: &[Edge]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for (u, v) in edges {
        serde_json::to_writer(&mut out, &EdgeLine { u: u.clone(), v: v.clone() })?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads `{"u": .., "v": ..}` lines. Commit lines are skipped.
pub fn read_edges(path: &Path) -> Result<Vec<Edge>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut edges = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.contains("\"_action\"") {
            continue;
        }
        let e: EdgeLine =
            serde_json::from_str(&line).with_context(|| format!("malformed edge at {}:{}", path.display(), i + 1))?;
        edges.push((e.u, e.v));
    }
    Ok(edges)
}

pub fn edge_record(e: &Edge) -> StreamRecord {
    StreamRecord::insert(row([Value::from(e.0.as_str()), Value::from(e.1.as_str())]))
}

/// First `floor(fraction * E)` edges form epoch 0; the rest follow with a
/// commit every `batch_size` edges.
pub fn edge_stream(edges: &[Edge], batch_size: usize, backfill_fraction: f64) -> Result<Vec<StreamRecord>> {
    ensure!((0.0..=1.0).contains(&backfill_fraction), "backfill fraction must be in [0, 1]");
    ensure!(batch_size > 0, "batch size must be positive");
    let prefix = (backfill_fraction * edges.len() as f64).floor() as usize;
    let mut out = Vec::with_capacity(edges.len() + edges.len() / batch_size + 2);
    out.extend(edges[..prefix].iter().map(edge_record));
    if prefix > 0 {
        out.push(StreamRecord::Commit);
    }
    for chunk in edges[prefix..].chunks(batch_size) {
        out.extend(chunk.iter().map(edge_record));
        out.push(StreamRecord::Commit);
    }
    Ok(out)
}

/// Writes [`edge_stream`] of `edge_file` to `out` as JSONL with commit lines.
/// Returns the number of commits.
pub fn gen_edge_stream(edge_file: &Path, out: &Path, batch_size: usize, backfill_fraction: f64) -> Result<usize> {
    let edges = read_edges(edge_file)?;
    let stream = edge_stream(&edges, batch_size, backfill_fraction)?;
    write_edge_stream(out, &stream)
}

pub fn write_edge_stream(path: &Path, stream: &[StreamRecord]) -> Result<usize> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    let mut commits = 0;
    for rec in stream {
        match rec {
            StreamRecord::Commit => {
                commits += 1;
                w.write_all(b"{\"_action\":\"commit\"}\n")?
            }
            StreamRecord::Data { row, .. } => {
                let line = EdgeLine {
                    u: row[0].as_str().unwrap_or_default().to_string(),
                    v: row[1].as_str().unwrap_or_default().to_string(),
                };
                serde_json::to_writer(&mut w, &line)?;
                w.write_all(b"\n")?;
            }
        }
    }
    w.flush()?;
    Ok(commits)
}

/// Edges in each epoch of a stream.
pub fn epoch_sizes(stream: &[StreamRecord]) -> Vec<usize> {
    let mut sizes = Vec::new();
    let mut n = 0;
    for r in stream {
        if r.is_commit() {
            sizes.push(n);
            n = 0;
        } else {
            n += 1;
        }
    }
    if n > 0 {
        sizes.push(n);
    }
    sizes
}
