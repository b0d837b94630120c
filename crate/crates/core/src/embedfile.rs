//! Text embedding tables.
//!
//! ```text
//! d=<dim> n=<count>
//! <id> <v_0> ... <v_{d-1}>
//! ```
//!
//! Values are written with Rust's shortest round-trip float formatting, so a
//! write/read cycle reproduces every bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub rows: BTreeMap<u32, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            rows: BTreeMap::new(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.rows.len() * (self.dim * 22 + 8) + 32);
        writeln!(out, "d={} n={}", self.dim, self.rows.len()).unwrap();
        for (id, values) in &self.rows {
            write!(out, "{id}").unwrap();
            for v in values {
                write!(out, " {v:?}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(origin, 1, "missing header"))?;
        let (dim, count) = parse_header(header).ok_or_else(|| {
            Error::parse(origin, 1, format!("bad header {header:?}, want d=<dim> n=<count>"))
        })?;
        let mut table = Self::new(dim);
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split_whitespace();
            let id: u32 = cols
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::parse(origin, n + 1, "bad id"))?;
            let values = cols
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(origin, n + 1, e.to_string()))?;
            if values.len() != dim {
                return Err(Error::parse(
                    origin,
                    n + 1,
                    format!("expected {dim} values, got {}", values.len()),
                ));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::parse(origin, n + 1, "non-finite value"));
            }
            if table.rows.insert(id, values).is_some() {
                return Err(Error::parse(origin, n + 1, format!("duplicate id {id}")));
            }
        }
        if table.rows.len() != count {
            return Err(Error::parse(
                origin,
                1,
                format!("header says n={count}, found {} rows", table.rows.len()),
            ));
        }
        Ok(table)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let mut parts = line.split_whitespace();
    let d = parts.next()?.strip_prefix("d=")?.parse().ok()?;
    let n = parts.next()?.strip_prefix("n=")?.parse().ok()?;
    parts.next().is_none().then_some((d, n))
}
