//! CSV source: header row required, RFC-style quoting. Every row is an insert.

use std::path::Path;

use super::{with_commits, CommitPolicy, ConnectorError, SystemClock};
use crate::schema::Schema;
use crate::update::StreamRecord;
use crate::value::{Key, Value, ValueType};

fn parse_field(s: &str, ty: ValueType) -> Option<Value> {
    Some(match ty {
        ValueType::Int => Value::Int(s.trim().parse().ok()?),
        ValueType::Float => Value::Float(s.trim().parse().ok()?),
        ValueType::Str => Value::from(s),
        ValueType::Bool => Value::Bool(s.trim().parse().ok()?),
        ValueType::Key => Value::Key(Key::from_hex(s.trim())?),
        ValueType::None => Value::None,
    })
}

pub fn read_csv(
    path: &Path,
    schema: &Schema,
    policy: CommitPolicy,
) -> Result<impl Iterator<Item = Result<StreamRecord, ConnectorError>>, ConnectorError> {
    let mut reader = ::csv::Reader::from_path(path).map_err(|e| ConnectorError::Parse {
        line: 0,
        message: e.to_string(),
    })?;
    let headers = reader.headers().map_err(|e| ConnectorError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    let mut positions = Vec::with_capacity(schema.len());
    for c in schema.columns() {
        let pos = headers
            .iter()
            .position(|h| h == c.name)
            .ok_or_else(|| ConnectorError::MissingColumn {
                line: 1,
                column: c.name.clone(),
            })?;
        positions.push(pos);
    }
    if let Some(extra) = headers.iter().find(|h| schema.index_of(h).is_none()) {
        return Err(ConnectorError::UnknownColumn {
            line: 1,
            column: extra.to_string(),
        });
    }
    let schema = schema.clone();
    let records = reader.into_records().map(move |r| {
        let r = r.map_err(|e| ConnectorError::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = r.position().map_or(0, |p| p.line() as usize);
        let mut values = Vec::with_capacity(schema.len());
        for (c, &pos) in schema.columns().iter().zip(&positions) {
            let raw = r.get(pos).unwrap_or("");
            values.push(parse_field(raw, c.ty).ok_or_else(|| ConnectorError::TypeMismatch {
                line,
                column: c.name.clone(),
                expected: c.ty,
                found: format!("{raw:?}"),
            })?);
        }
        Ok(StreamRecord::insert(values.into()))
    });
    Ok(with_commits(records, policy, SystemClock::new()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::update::row;

    #[test]
    fn reads_quoted_fields_in_header_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        std::fs::write(&p, "v,u\n\"b, c\",a\nd,\"e\"\"\"\n").unwrap();
        let schema = Schema::new([("u", ValueType::Str), ("v", ValueType::Str)]).unwrap();
        let recs: Vec<_> = read_csv(&p, &schema, CommitPolicy::EndOfInputOnly)
            .unwrap()
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(
            recs,
            vec![
                StreamRecord::insert(row([Value::from("a"), Value::from("b, c")])),
                StreamRecord::insert(row([Value::from("e\""), Value::from("d")])),
                StreamRecord::Commit,
            ]
        );
    }

    #[test]
    fn type_errors_carry_line_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("n.csv");
        std::fs::write(&p, "n\n1\nx\n").unwrap();
        let schema = Schema::new([("n", ValueType::Int)]).unwrap();
        let err = read_csv(&p, &schema, CommitPolicy::Explicit)
            .unwrap()
            .find_map(Result::err)
            .unwrap();
        assert_eq!(err.to_string(), "line 3: column `n` expects int, got \"x\"");
        let missing = Schema::new([("m", ValueType::Int)]).unwrap();
        assert!(read_csv(&p, &missing, CommitPolicy::Explicit).is_err());
    }
}
