//! Tabular results, their CSV / text renderings and the run manifest.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Formats a heterogeneous row for [`Table::push`].
macro_rules! cells {
    ($($v:expr),* $(,)?) => { [$($v.to_string()),*] };
}
pub(crate) use cells;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    Csv,
    Text,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Text => "txt",
        }
    }
}

/// A named table with a fixed header. Cells are stored already formatted;
/// floats use the shortest representation that parses back to the same value.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self { name: name.to_string(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push<I, T>(&mut self, row: I)
    where
        I: IntoIterator<Item = T>,
        T: Display,
    {
        let row: Vec<String> = row.into_iter().map(|v| v.to_string()).collect();
        assert_eq!(row.len(), self.header.len(), "row width does not match header of `{}`", self.name);
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Space-aligned rendering with the same header and cell text as the CSV.
    pub fn to_text(&self) -> String {
        let mut widths: Vec<usize> = self.header.iter().map(String::len).collect();
        for row in &self.rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let line = |cells: &[String]| {
            let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, &w)| format!("{c:>w$}")).collect();
            padded.join("  ").trim_end().to_string() + "\n"
        };
        let mut out = line(&self.header);
        out.push_str(&line(&widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>()));
        for row in &self.rows {
            out.push_str(&line(row));
        }
        out
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Text => self.to_text(),
        }
    }

    /// Parse a CSV produced by [`Table::to_csv`].
    pub fn from_csv(name: &str, text: &str) -> CliResult<Self> {
        let mut lines = text.lines();
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| CliError::Config(format!("{name}: empty CSV")))?
            .split(',')
            .map(str::to_string)
            .collect();
        let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
        Ok(Self { name: name.to_string(), header, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.header.iter().position(|h| h == name)?;
        self.rows.iter().map(|r| r[k].parse().ok()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: u64,
    /// Digest of the file contents alone.
    pub sha256: String,
    /// Digest of the code version, the resolved config and the file contents.
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub experiment: String,
    pub seed: u64,
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub files: Vec<FileEntry>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

/// Writes tables into `dir` in every requested format, then the manifest.
pub fn emit_report(
    dir: &Path,
    tables: &[Table],
    formats: &[ReportFormat],
    experiment: &str,
    seed: u64,
    config: &serde_json::Value,
) -> CliResult<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let version = env!("CARGO_PKG_VERSION");
    let config_text = serde_json::to_string(config).map_err(|e| CliError::Config(e.to_string()))?;
    let config_sha256 = sha256_hex(&[version.as_bytes(), config_text.as_bytes()]);
    let mut files = Vec::new();
    let mut written = Vec::new();
    for table in tables {
        for &format in formats {
            let name = format!("{}.{}", table.name, format.extension());
            let body = table.render(format);
            let path = dir.join(&name);
            fs::write(&path, &body)?;
            files.push(FileEntry {
                bytes: body.len() as u64,
                sha256: sha256_hex(&[body.as_bytes()]),
                provenance: sha256_hex(&[version.as_bytes(), config_text.as_bytes(), body.as_bytes()]),
                name,
            });
            written.push(path);
        }
    }
    let manifest = Manifest {
        tool: "memsim".into(),
        version: version.into(),
        experiment: experiment.into(),
        seed,
        config_sha256,
        config: config.clone(),
        files,
    };
    let path = dir.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Config(e.to_string()))?;
    fs::write(&path, text + "\n")?;
    written.push(path);
    Ok(written)
}
