//! Scans output logs for transient churn: an epoch that both inserts and
//! retracts the same `(key, row)`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::Value as Json;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Scan {
    pub lines: u64,
    pub epochs: u64,
    pub violations: Vec<String>,
}

impl Scan {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn merge(&mut self, other: Scan) {
        self.lines += other.lines;
        self.epochs += other.epochs;
        self.violations.extend(other.violations);
    }
}

/// Checks one output log. Lines of an epoch must be contiguous.
pub fn scan_log(path: &Path) -> Result<Scan> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut scan = Scan::default();
    let mut current: Option<u64> = None;
    let mut seen_epochs = std::collections::HashSet::new();
    // (key, data) -> signs seen in the current epoch
    let mut signs: HashMap<(String, String), (bool, bool)> = HashMap::new();
    let flush = |epoch: Option<u64>, signs: &mut HashMap<(String, String), (bool, bool)>, scan: &mut Scan| {
        for ((key, data), (pos, neg)) in signs.drain() {
            if pos && neg {
                scan.violations.push(format!(
                    "{}: epoch {} inserts and retracts key {key} row {data}",
                    path.display(),
                    epoch.unwrap_or_default()
                ));
            }
        }
    };
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Json = serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        let (Some(epoch), Some(diff), Some(key), Some(data)) = (
            v.get("epoch").and_then(Json::as_u64),
            v.get("diff").and_then(Json::as_i64),
            v.get("key").and_then(Json::as_str),
            v.get("data"),
        ) else {
            bail!("{}:{}: not an update line", path.display(), i + 1);
        };
        if current != Some(epoch) {
            flush(current, &mut signs, &mut scan);
            if !seen_epochs.insert(epoch) {
                scan.violations
                    .push(format!("{}: epoch {epoch} is split across the log", path.display()));
            }
            current = Some(epoch);
            scan.epochs += 1;
        }
        scan.lines += 1;
        let e = signs.entry((key.to_string(), data.to_string())).or_default();
        if diff > 0 {
            e.0 = true;
        } else if diff < 0 {
            e.1 = true;
        }
    }
    flush(current, &mut signs, &mut scan);
    Ok(scan)
}

/// Scans every `*.jsonl` output log under `dir`, recursively.
pub fn scan_dir(dir: &Path) -> Result<Scan> {
    let mut total = Scan::default();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let mut entries: Vec<_> = std::fs::read_dir(&d)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.path());
        for e in entries {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("output"))
                && p.extension().is_some_and(|x| x == "jsonl")
            {
                total.merge(scan_log(&p)?);
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(epoch: u64, diff: i64, key: &str, n: i64) -> String {
        format!(r#"{{"epoch":{epoch},"diff":{diff},"key":"{key}","data":{{"n":{n}}},"time_ms":0}}"#)
    }

    #[test]
    fn detects_same_epoch_churn() {
        let dir = tempfile::tempdir().unwrap();
        let ok = dir.path().join("output.ok.jsonl");
        std::fs::write(&ok, [line(0, 1, "a", 1), line(1, -1, "a", 1), line(1, 1, "a", 2)].join("\n")).unwrap();
        let scan = scan_log(&ok).unwrap();
        assert!(scan.is_clean(), "{scan:?}");
        assert_eq!((scan.lines, scan.epochs), (3, 2));

        let bad = dir.path().join("output.bad.jsonl");
        std::fs::write(&bad, [line(0, 1, "a", 1), line(0, -1, "a", 1)].join("\n")).unwrap();
        assert_eq!(scan_log(&bad).unwrap().violations.len(), 1);

        let split = dir.path().join("output.split.jsonl");
        std::fs::write(&split, [line(0, 1, "a", 1), line(1, 1, "b", 1), line(0, 1, "c", 1)].join("\n")).unwrap();
        assert_eq!(scan_log(&split).unwrap().violations.len(), 1);

        let all = scan_dir(dir.path()).unwrap();
        assert_eq!(all.violations.len(), 2);
    }
}
