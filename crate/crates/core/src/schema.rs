use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::value::ValueType;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub ty: ValueType,
}

/// Ordered, uniquely named, typed columns.
#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Schema {
    columns: Vec<Column>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("duplicate column name `{0}`")]
pub struct DuplicateColumn(pub String);

impl Schema {
    pub fn new<I, S>(columns: I) -> Result<Self, DuplicateColumn>
    where
        I: IntoIterator<Item = (S, ValueType)>,
        S: Into<String>,
    {
        let mut schema = Schema::default();
        for (name, ty) in columns {
            schema.push(name.into(), ty)?;
        }
        Ok(schema)
    }

    pub fn push(&mut self, name: String, ty: ValueType) -> Result<(), DuplicateColumn> {
        if self.index_of(&name).is_some() {
            return Err(DuplicateColumn(name));
        }
        self.columns.push(Column { name, ty });
        Ok(())
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Option<(usize, ValueType)> {
        self.index_of(name).map(|i| (i, self.columns[i].ty))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, c) in self.columns.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{}: {}", c.name, c.ty)?;
        }
        f.write_str("}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicate_names() {
        let err = Schema::new([("a", ValueType::Int), ("a", ValueType::Str)]).unwrap_err();
        assert_eq!(err, DuplicateColumn("a".into()));
    }

    #[test]
    fn lookup() {
        let s = Schema::new([("u", ValueType::Str), ("v", ValueType::Str)]).unwrap();
        assert_eq!(s.column("v"), Some((1, ValueType::Str)));
        assert_eq!(s.column("w"), None);
        assert_eq!(s.to_string(), "{u: string, v: string}");
    }
}
