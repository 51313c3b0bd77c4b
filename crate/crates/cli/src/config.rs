//! Optional configuration file shared by all subcommands.
//!
//! Keys are flat and use the flag names with underscores, e.g.
//!
//! ```toml
//! mode = "ms-tta"
//! alpha = 0.6
//! neighbor_source = "bank_raw"
//! ```
//!
//! Command-line flags take precedence over file values.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{CliError, Result};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub format: Option<String>,

    pub mode: Option<String>,
    pub alpha: Option<f64>,
    pub k: Option<usize>,
    pub q: Option<usize>,
    pub lambda: Option<f64>,
    pub scale: Option<f64>,
    pub neighbor_source: Option<String>,
    pub entropy_threshold: Option<f64>,
    pub bank_capacity: Option<usize>,
    pub seed: Option<u64>,

    pub classes: Option<usize>,
    pub dim: Option<usize>,
    pub per_class: Option<usize>,
    pub kappa_test: Option<f64>,
    pub kappa_text: Option<f64>,
    pub shift_angle: Option<f64>,
    pub label_noise: Option<f64>,

    pub axis: Option<String>,
    pub values: Option<Vec<f64>>,
}

impl FileConfig {
    /// Reads TOML or JSON, chosen by extension; other extensions are sniffed.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_owned(),
            source,
        })?;
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        let json = match ext.as_deref() {
            Some("json") => true,
            Some("toml") => false,
            _ => text.trim_start().starts_with('{'),
        };
        let parsed = if json {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}
