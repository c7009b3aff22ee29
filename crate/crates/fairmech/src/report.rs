//! Reproducibility manifests and CSV persistence. Every output file starts
//! with `#`-prefixed manifest lines (command, config hash, seed, version,
//! wall clock, oracle calls) followed by an ordinary CSV table.

use std::io;
use std::path::Path;

use sha2::{Digest, Sha256};

/// Provenance header embedded in every output file.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub version: String,
    pub wall_ms: u128,
    pub oracle_calls: Option<u64>,
}

impl RunManifest {
    pub fn new(command: &str, config_text: &str, seed: u64) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            config_sha256: sha256_hex(config_text),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_ms: 0,
            oracle_calls: None,
        }
    }

    fn header_lines(&self) -> Vec<String> {
        let mut lines = vec![
            format!("# command: {}", self.command),
            format!("# config_sha256: {}", self.config_sha256),
            format!("# seed: {}", self.seed),
            format!("# version: {}", self.version),
            format!("# wall_ms: {}", self.wall_ms),
        ];
        if let Some(calls) = self.oracle_calls {
            lines.push(format!("# oracle_calls: {calls}"));
        }
        lines
    }
}

pub fn sha256_hex(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes manifest comment lines followed by a CSV table.
pub fn write_csv(
    path: &Path,
    manifest: &RunManifest,
    columns: &[&str],
    rows: &[Vec<String>],
) -> io::Result<()> {
    let mut text = String::new();
    for line in manifest.header_lines() {
        text.push_str(&line);
        text.push('\n');
    }
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(columns)?;
    for row in rows {
        debug_assert_eq!(row.len(), columns.len());
        writer.write_record(row)?;
    }
    let body = writer
        .into_inner()
        .map_err(|e| io::Error::other(e.to_string()))?;
    text.push_str(&String::from_utf8(body).expect("csv output is UTF-8"));
    std::fs::write(path, text)
}

/// Manifest lines, column names, and string-valued rows of a written file.
pub type CsvContents = (Vec<String>, Vec<String>, Vec<Vec<String>>);

/// Reads a file written by [`write_csv`].
pub fn read_csv(path: &Path) -> io::Result<CsvContents> {
    let text = std::fs::read_to_string(path)?;
    let mut manifest = Vec::new();
    let mut body = String::new();
    for line in text.lines() {
        if line.starts_with('#') {
            manifest.push(line.to_string());
        } else {
            body.push_str(line);
            body.push('\n');
        }
    }
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let columns: Vec<String> = reader
        .headers()
        .map_err(|e| io::Error::other(e.to_string()))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| io::Error::other(e.to_string()))?;
        rows.push(record.iter().map(|s| s.to_string()).collect());
    }
    Ok((manifest, columns, rows))
}
