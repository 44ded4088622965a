//! Machine-readable output records for the CLI: one schema shared by the
//! CSV and JSON writers, with enough metadata to reproduce the invocation.

use crate::error::{MfError, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;

pub const SCHEMA_VERSION: &str = "1";

/// A subcommand result: named columns over flat numeric rows, plus the
/// parameter map that reproduces the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputRecord {
    pub schema_version: String,
    pub command: String,
    /// Flag name (without leading dashes) -> value as passed.
    pub params: BTreeMap<String, String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl OutputRecord {
    pub fn new(command: &str, params: BTreeMap<String, String>, columns: &[&str]) -> Self {
        OutputRecord {
            schema_version: SCHEMA_VERSION.to_string(),
            command: command.to_string(),
            params,
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// CSV with `# key=value` metadata comments, a header row, and
    /// full-precision scientific notation. LF line endings.
    pub fn write_csv(&self, out: &mut dyn Write) -> std::io::Result<()> {
        writeln!(out, "# schema_version={}", self.schema_version)?;
        writeln!(out, "# command={}", self.command)?;
        for (k, v) in &self.params {
            writeln!(out, "# param {k}={v}")?;
        }
        writeln!(out, "{}", self.columns.join(","))?;
        for row in &self.rows {
            let mut line = String::with_capacity(row.len() * 26);
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    line.push(',');
                }
                if v.is_nan() {
                    line.push_str("NaN");
                } else {
                    line.push_str(&format!("{v:.16e}"));
                }
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn write_json(&self, out: &mut dyn Write) -> std::io::Result<()> {
        // serde_json renders non-finite floats as null
        serde_json::to_writer_pretty(&mut *out, self)?;
        writeln!(out)
    }

    /// Parse text produced by [`write_csv`] back into a record.
    pub fn parse_csv(text: &str) -> Result<OutputRecord> {
        let mut schema_version = None;
        let mut command = None;
        let mut params = BTreeMap::new();
        let mut columns: Option<Vec<String>> = None;
        let mut rows = Vec::new();
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("# ") {
                if let Some(v) = rest.strip_prefix("schema_version=") {
                    schema_version = Some(v.to_string());
                } else if let Some(v) = rest.strip_prefix("command=") {
                    command = Some(v.to_string());
                } else if let Some(kv) = rest.strip_prefix("param ") {
                    let (k, v) = kv.split_once('=').ok_or_else(|| {
                        MfError::InvalidParameter(format!("malformed param line: {line}"))
                    })?;
                    params.insert(k.to_string(), v.to_string());
                } else {
                    return Err(MfError::InvalidParameter(format!(
                        "unknown metadata line: {line}"
                    )));
                }
            } else if columns.is_none() {
                columns = Some(line.split(',').map(|s| s.to_string()).collect());
            } else {
                let row = line
                    .split(',')
                    .map(|s| {
                        if s == "NaN" {
                            Ok(f64::NAN)
                        } else {
                            s.parse::<f64>().map_err(|e| {
                                MfError::InvalidParameter(format!("bad number '{s}': {e}"))
                            })
                        }
                    })
                    .collect::<Result<Vec<f64>>>()?;
                rows.push(row);
            }
        }
        Ok(OutputRecord {
            schema_version: schema_version
                .ok_or_else(|| MfError::InvalidParameter("missing schema_version".into()))?,
            command: command
                .ok_or_else(|| MfError::InvalidParameter("missing command".into()))?,
            params,
            columns: columns
                .ok_or_else(|| MfError::InvalidParameter("missing header row".into()))?,
            rows,
        })
    }

    /// Reconstruct an argv fragment (subcommand + flags) from the params
    /// map; the inverse of the CLI's parameter echo.
    pub fn reconstruct_argv(&self) -> Vec<String> {
        let mut argv = vec![self.command.clone()];
        for (k, v) in &self.params {
            argv.push(format!("--{k}"));
            argv.push(v.clone());
        }
        argv
    }
}
