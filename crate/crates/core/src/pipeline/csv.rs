//! Versioned metrics tables.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{contract, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// A metrics table. The file starts with `# schema = <name> v<version>` and
/// `# config_hash = <hash>` comment lines, then the header row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvTable {
    pub schema: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Fixed six-decimal formatting keeps files byte-stable.
pub fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// Scientific notation for values spanning many orders of magnitude.
pub fn fmt_sci(v: f64) -> String {
    format!("{v:.6e}")
}

impl CsvTable {
    pub fn new(schema: &str, columns: &[&str]) -> Self {
        CsvTable {
            schema: schema.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.columns.len() {
            return contract(format!(
                "{} values for {} columns of {}",
                row.len(),
                self.columns.len(),
                self.schema
            ));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn render(&self, config_hash: &str) -> String {
        let mut s = String::new();
        writeln!(s, "# schema = {} v{SCHEMA_VERSION}", self.schema).unwrap();
        writeln!(s, "# config_hash = {config_hash}").unwrap();
        writeln!(s, "{}", self.columns.join(",")).unwrap();
        for r in &self.rows {
            writeln!(s, "{}", r.join(",")).unwrap();
        }
        s
    }

    pub fn write(&self, path: &Path, config_hash: &str) -> Result<()> {
        fs::write(path, self.render(config_hash))?;
        Ok(())
    }

    /// Reads a table written by [`CsvTable::write`]; returns it with its hash.
    pub fn read(path: &Path) -> Result<(Self, String)> {
        let text = fs::read_to_string(path)?;
        let bad = |reason: &str| crate::Error::Format {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let mut lines = text.lines();
        let schema_line = lines.next().ok_or_else(|| bad("empty file"))?;
        let schema = schema_line
            .strip_prefix("# schema = ")
            .and_then(|r| r.rsplit_once(" v"))
            .map(|(name, _)| name.to_string())
            .ok_or_else(|| bad("missing schema line"))?;
        let hash = lines
            .next()
            .and_then(|l| l.strip_prefix("# config_hash = "))
            .ok_or_else(|| bad("missing config hash line"))?
            .to_string();
        let columns: Vec<String> = lines
            .next()
            .ok_or_else(|| bad("missing header"))?
            .split(',')
            .map(str::to_string)
            .collect();
        let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
        Ok((CsvTable { schema, columns, rows }, hash))
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j].as_str()).collect())
    }
}
