//! Config loading and report writing.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// A named pass/fail line shared by every command's report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Check {
    /// Passes when `value ≤ tolerance`.
    pub fn at_most(name: &str, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            pass: value <= tolerance,
            detail: None,
        }
    }

    pub fn with_detail(mut self, detail: String) -> Self {
        self.detail = Some(detail);
        self
    }

    pub fn failure(&self) -> Option<String> {
        (!self.pass).then(|| match &self.detail {
            Some(d) => format!(
                "{}: {} exceeds {} ({d})",
                self.name, self.value, self.tolerance
            ),
            None => format!("{}: {} exceeds {}", self.name, self.value, self.tolerance),
        })
    }
}

pub fn failures(checks: &[Check]) -> Vec<String> {
    checks.iter().filter_map(Check::failure).collect()
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn load_optional<T: DeserializeOwned>(path: Option<&Path>) -> CliResult<Option<T>> {
    path.map(load_json).transpose()
}

pub struct OutDir(PathBuf);

impl OutDir {
    pub fn create(path: &Path) -> CliResult<Self> {
        fs::create_dir_all(path).map_err(|source| CliError::Write {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self(path.to_path_buf()))
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<PathBuf> {
        let path = self.0.join(name);
        let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
        text.push('\n');
        fs::write(&path, text).map_err(|source| CliError::Write {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }

    /// Writes one row per record; the header comes from the field names, and
    /// is written even when there are no rows.
    pub fn csv<T: Serialize>(&self, name: &str, header: &[&str], rows: &[T]) -> CliResult<PathBuf> {
        let path = self.0.join(name);
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(&path)?;
        w.write_record(header)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|source| CliError::Write {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }
}
