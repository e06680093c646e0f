//! JSON Lines reading and writing, with optional schema tags.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: expected schema {expected:?}, found {found:?}")]
    Schema {
        line: usize,
        expected: String,
        found: String,
    },
}

/// Read one `T` per non-blank line. Unknown fields are ignored.
pub fn read<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>, JsonlError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|source| JsonlError::Parse {
            line: i + 1,
            source,
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write<T: Serialize, W: Write>(mut writer: W, items: &[T]) -> Result<(), JsonlError> {
    for item in items {
        serde_json::to_writer(&mut writer, item).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// A record tagged with a `"schema"` field ahead of its own fields.
#[derive(Debug, Serialize, Deserialize)]
pub struct Versioned<T> {
    pub schema: String,
    #[serde(flatten)]
    pub inner: T,
}

pub fn write_versioned<T: Serialize, W: Write>(
    mut writer: W,
    schema: &str,
    items: &[T],
) -> Result<(), JsonlError> {
    #[derive(Serialize)]
    struct Tagged<'a, T> {
        schema: &'a str,
        #[serde(flatten)]
        inner: &'a T,
    }
    for inner in items {
        serde_json::to_writer(&mut writer, &Tagged { schema, inner })
            .map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_versioned<T: DeserializeOwned, R: BufRead>(
    reader: R,
    schema: &str,
) -> Result<Vec<T>, JsonlError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Versioned<T> = serde_json::from_str(&line).map_err(|source| JsonlError::Parse {
            line: i + 1,
            source,
        })?;
        if rec.schema != schema {
            return Err(JsonlError::Schema {
                line: i + 1,
                expected: schema.to_string(),
                found: rec.schema,
            });
        }
        out.push(rec.inner);
    }
    Ok(out)
}
