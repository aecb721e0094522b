//! JSON-lines input records and output update logs.
//!
//! Input: one object per line; `"_action": "delete"` retracts the payload,
//! `"_action": "commit"` closes an epoch, anything else inserts.
//!
//! Output: `{"epoch", "diff", "key", "data", "time_ms"}` per update.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde_json::{Map, Value as Json};

use super::{value_from_json, value_to_json, with_commits, CommitPolicy, ConnectorError, SystemClock};
use crate::schema::Schema;
use crate::update::{Epoch, StreamRecord, Update};
use crate::value::Key;

const ACTION: &str = "_action";

/// Parses one input line. `line` is 1-based, for messages.
pub fn parse_jsonl_line(text: &str, line: usize, schema: &Schema) -> Result<StreamRecord, ConnectorError> {
    let obj: Map<String, Json> = serde_json::from_str(text).map_err(|e| ConnectorError::Parse {
        line,
        message: e.to_string(),
    })?;
    let delete = match obj.get(ACTION) {
        None => false,
        Some(Json::String(a)) if a == "delete" => true,
        Some(Json::String(a)) if a == "commit" => return Ok(StreamRecord::Commit),
        Some(Json::String(a)) if a == "insert" => false,
        Some(other) => {
            return Err(ConnectorError::BadAction {
                line,
                action: other.to_string(),
            })
        }
    };
    if let Some(extra) = obj.keys().find(|k| *k != ACTION && schema.index_of(k).is_none()) {
        return Err(ConnectorError::UnknownColumn {
            line,
            column: extra.clone(),
        });
    }
    let mut values = Vec::with_capacity(schema.len());
    for c in schema.columns() {
        let v = obj.get(&c.name).ok_or_else(|| ConnectorError::MissingColumn {
            line,
            column: c.name.clone(),
        })?;
        values.push(value_from_json(v, c.ty).map_err(|found| ConnectorError::TypeMismatch {
            line,
            column: c.name.clone(),
            expected: c.ty,
            found,
        })?);
    }
    let row = values.into();
    Ok(if delete {
        StreamRecord::delete(row)
    } else {
        StreamRecord::insert(row)
    })
}

/// Reads `path` lazily in file order, applying `policy`. Blank lines are skipped.
pub fn read_jsonl(
    path: &Path,
    schema: &Schema,
    policy: CommitPolicy,
) -> Result<impl Iterator<Item = Result<StreamRecord, ConnectorError>>, ConnectorError> {
    let file = File::open(path).map_err(|e| ConnectorError::io(path, e))?;
    let schema = schema.clone();
    let path = path.to_path_buf();
    let records = BufReader::new(file)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(move |(i, l)| {
            let l = l.map_err(|e| ConnectorError::io(&path, e))?;
            parse_jsonl_line(&l, i + 1, &schema)
        });
    Ok(with_commits(records, policy, SystemClock::new()))
}

/// One line of an output log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoggedUpdate {
    pub update: Update,
    pub time_ms: u64,
}

/// Streams epochs of sink updates to a writer.
pub struct JsonlUpdateWriter<W: Write> {
    out: BufWriter<W>,
    names: Vec<String>,
    lines: u64,
}

impl JsonlUpdateWriter<File> {
    pub fn create(path: &Path, schema: &Schema) -> Result<Self, ConnectorError> {
        let f = File::create(path).map_err(|e| ConnectorError::io(path, e))?;
        Ok(JsonlUpdateWriter::new(f, schema))
    }
}

impl<W: Write> JsonlUpdateWriter<W> {
    pub fn new(out: W, schema: &Schema) -> Self {
        JsonlUpdateWriter {
            out: BufWriter::new(out),
            names: schema.names().map(str::to_string).collect(),
            lines: 0,
        }
    }

    pub fn lines(&self) -> u64 {
        self.lines
    }

    /// Writes one epoch's updates in canonical `(key, row)` order.
    pub fn write_epoch(&mut self, epoch: Epoch, updates: &[Update], time_ms: u64) -> std::io::Result<()> {
        let mut sorted: Vec<&Update> = updates.iter().collect();
        sorted.sort_by(|a, b| (a.key, &a.row, a.diff).cmp(&(b.key, &b.row, b.diff)));
        for u in sorted {
            let mut data = Map::new();
            for (name, v) in self.names.iter().zip(u.row.iter()) {
                data.insert(name.clone(), value_to_json(v));
            }
            let mut line = Map::new();
            line.insert("epoch".into(), Json::from(epoch));
            line.insert("diff".into(), Json::from(u.diff));
            line.insert("key".into(), Json::String(u.key.to_hex()));
            line.insert("data".into(), Json::Object(data));
            line.insert("time_ms".into(), Json::from(time_ms));
            serde_json::to_writer(&mut self.out, &Json::Object(line))?;
            self.out.write_all(b"\n")?;
            self.lines += 1;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }

    pub fn into_inner(self) -> Result<W, std::io::Error> {
        self.out.into_inner().map_err(|e| e.into_error())
    }
}

/// Writes a whole run: one `(epoch, updates, time_ms)` triple per closed epoch.
pub fn write_jsonl_updates<'a, I>(path: &Path, schema: &Schema, epochs: I) -> Result<(), ConnectorError>
where
    I: IntoIterator<Item = (Epoch, &'a [Update], u64)>,
{
    let mut w = JsonlUpdateWriter::create(path, schema)?;
    for (epoch, updates, t) in epochs {
        w.write_epoch(epoch, updates, t).map_err(|e| ConnectorError::io(path, e))?;
    }
    w.flush().map_err(|e| ConnectorError::io(path, e))
}

/// Reads an output log back. Values are typed by `schema`.
pub fn read_jsonl_updates(path: &Path, schema: &Schema) -> Result<Vec<LoggedUpdate>, ConnectorError> {
    let file = File::open(path).map_err(|e| ConnectorError::io(path, e))?;
    let mut out = Vec::new();
    for (i, l) in BufReader::new(file).lines().enumerate() {
        let l = l.map_err(|e| ConnectorError::io(path, e))?;
        if l.trim().is_empty() {
            continue;
        }
        out.push(parse_update_line(&l, i + 1, schema)?);
    }
    Ok(out)
}

fn parse_update_line(text: &str, line: usize, schema: &Schema) -> Result<LoggedUpdate, ConnectorError> {
    let parse = |message: &str| ConnectorError::Parse {
        line,
        message: message.to_string(),
    };
    let obj: Map<String, Json> = serde_json::from_str(text).map_err(|e| parse(&e.to_string()))?;
    let int = |f: &str| obj.get(f).and_then(Json::as_i64).ok_or_else(|| parse(&format!("bad `{f}`")));
    let epoch = int("epoch")? as Epoch;
    let diff = int("diff")?;
    let time_ms = int("time_ms")? as u64;
    let key = obj
        .get("key")
        .and_then(Json::as_str)
        .and_then(Key::from_hex)
        .ok_or_else(|| parse("bad `key`"))?;
    let data = obj.get("data").and_then(Json::as_object).ok_or_else(|| parse("bad `data`"))?;
    let mut values = Vec::with_capacity(schema.len());
    for c in schema.columns() {
        let v = data.get(&c.name).ok_or_else(|| ConnectorError::MissingColumn {
            line,
            column: c.name.clone(),
        })?;
        values.push(value_from_json(v, c.ty).map_err(|found| ConnectorError::TypeMismatch {
            line,
            column: c.name.clone(),
            expected: c.ty,
            found,
        })?);
    }
    Ok(LoggedUpdate {
        update: Update::new(key, values.into(), diff, epoch),
        time_ms,
    })
}
