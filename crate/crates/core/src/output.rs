//! File output helpers shared by the CLI: atomic writes, CSV rendering and
//! the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io_err = |source| Error::Io { path: path.to_path_buf(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err)?;
    }
    let file_name = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.tmp{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Minimal CSV builder; fields containing separators or quotes are quoted.
#[derive(Debug, Default)]
pub struct CsvTable {
    buf: String,
}

impl CsvTable {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let mut t = Self::default();
        t.row(header);
        t
    }

    pub fn row<S: AsRef<str>>(&mut self, fields: &[S]) {
        let line: Vec<String> = fields.iter().map(|f| quote(f.as_ref())).collect();
        self.buf.push_str(&line.join(","));
        self.buf.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.buf
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.buf.as_bytes())
    }
}

fn quote(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_owned()
    }
}

/// Locale-independent number formatting: shortest round-trip, `NA` for
/// missing or non-finite values.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "NA".to_owned()
    }
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_owned(), num)
}

/// Record of one CLI invocation, written beside its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<PathBuf>,
    pub specs: Vec<serde_json::Value>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub version: String,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_owned(),
            inputs: Vec::new(),
            specs: Vec::new(),
            config: serde_json::Value::Null,
            seed: None,
            version: env!("CARGO_PKG_VERSION").to_owned(),
            outputs: Vec::new(),
        }
    }
}
