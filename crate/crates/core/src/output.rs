//! CSV tables with a commented header block.
//!
//! ```text
//! # fkneq-core 0.1.0
//! # config_sha256: <hex>
//! # provenance: <tag>; <tag>
//! # <free note>
//! col_a,col_b,...
//! ```
//!
//! Numbers are written with Rust's shortest round-trip formatting, so equal
//! inputs give byte-identical files.

use std::path::Path;

use crate::error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Header block of every output file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Provenance {
    pub config_hash: String,
    pub tags: Vec<String>,
    pub notes: Vec<String>,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Self { config_hash: config_hash.into(), ..Default::default() }
    }

    pub fn tag(mut self, t: impl Into<String>) -> Self {
        self.tags.push(t.into());
        self
    }

    pub fn note(mut self, n: impl Into<String>) -> Self {
        self.notes.push(n.into());
        self
    }

    fn block(&self) -> String {
        let mut s = format!("# fkneq-core {VERSION}\n# config_sha256: {}\n# provenance: {}\n", self.config_hash, self.tags.join("; "));
        for n in &self.notes {
            s.push_str(&format!("# {n}\n"));
        }
        s
    }
}

/// Writes a numeric table.
pub fn write_table(path: &Path, prov: &Provenance, columns: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    if let Some(r) = rows.iter().find(|r| r.len() != columns.len()) {
        return Err(Error::InvalidParameter(format!("row has {} entries for {} columns", r.len(), columns.len())));
    }
    let mut buf = prov.block().into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(columns)?;
        for r in rows {
            w.write_record(r.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
    }
    std::fs::write(path, buf)?;
    Ok(())
}

/// A table read back: header comments, column names, rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub comments: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    /// Value of a `# key: value` header line.
    pub fn header(&self, key: &str) -> Option<&str> {
        self.comments.iter().find_map(|c| c.strip_prefix(key).and_then(|r| r.strip_prefix(':')).map(str::trim))
    }
}

pub fn read_table(path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path)?;
    let comments = text.lines().take_while(|l| l.starts_with('#')).map(|l| l.trim_start_matches('#').trim().to_string()).collect();
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let columns = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| Error::Format(format!("{}: bad number '{s}': {e}", path.display()))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(Table { comments, columns, rows })
}
