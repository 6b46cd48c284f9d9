//! Helpers for the model file format: a short `key value` text header
//! followed by a raw little-endian block of f64 values. The binary block is
//! what makes round trips bit-exact.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};

pub(crate) const MODEL_MAGIC: &str = "kedmd-model v1";

pub(crate) fn write_header<W: Write>(
    w: &mut W,
    kind: &str,
    fields: &[(&str, String)],
    float_count: usize,
) -> Result<()> {
    writeln!(w, "{MODEL_MAGIC}")?;
    writeln!(w, "kind {kind}")?;
    for (key, value) in fields {
        writeln!(w, "{key} {value}")?;
    }
    writeln!(w, "floats {float_count}")?;
    Ok(())
}

pub(crate) fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) struct Header {
    pub kind: String,
    pub fields: BTreeMap<String, String>,
    pub float_count: usize,
}

impl Header {
    pub fn usize_field(&self, key: &str, path: &str) -> Result<usize> {
        self.fields
            .get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::MalformedFile {
                path: path.into(),
                why: format!("missing or invalid header field `{key}`"),
            })
    }
}

pub(crate) fn read_header<R: BufRead>(r: &mut R, path: &str) -> Result<Header> {
    let bad = |why: &str| Error::MalformedFile {
        path: path.into(),
        why: why.into(),
    };
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != MODEL_MAGIC {
        return Err(bad("missing magic line"));
    }
    let mut fields = BTreeMap::new();
    let mut kind = None;
    let float_count = loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(bad("truncated header"));
        }
        let trimmed = line.trim_end();
        let (key, value) = trimmed
            .split_once(' ')
            .ok_or_else(|| bad(&format!("malformed header line `{trimmed}`")))?;
        match key {
            "kind" => kind = Some(value.to_string()),
            "floats" => {
                break value
                    .parse::<usize>()
                    .map_err(|_| bad("invalid float count"))?
            }
            _ => {
                fields.insert(key.to_string(), value.to_string());
            }
        }
    };
    Ok(Header {
        kind: kind.ok_or_else(|| bad("missing kind"))?,
        fields,
        float_count,
    })
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, count: usize, path: &str) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 8];
    r.read_exact(&mut bytes).map_err(|_| Error::MalformedFile {
        path: path.into(),
        why: format!("binary block shorter than the declared {count} values"),
    })?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// A consuming cursor over the deserialized float block.
pub(crate) struct FloatCursor<'a> {
    values: &'a [f64],
    pos: usize,
    path: &'a str,
}

impl<'a> FloatCursor<'a> {
    pub fn new(values: &'a [f64], path: &'a str) -> Self {
        Self {
            values,
            pos: 0,
            path,
        }
    }

    pub fn take(&mut self, count: usize) -> Result<&'a [f64]> {
        if self.pos + count > self.values.len() {
            return Err(Error::MalformedFile {
                path: self.path.into(),
                why: "float block exhausted".into(),
            });
        }
        let slice = &self.values[self.pos..self.pos + count];
        self.pos += count;
        Ok(slice)
    }

    pub fn take_one(&mut self) -> Result<f64> {
        Ok(self.take(1)?[0])
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.values.len() {
            return Err(Error::MalformedFile {
                path: self.path.into(),
                why: format!(
                    "trailing data: consumed {} of {} values",
                    self.pos,
                    self.values.len()
                ),
            });
        }
        Ok(())
    }
}
