//! On-disk embedding datasets.
//!
//! A dataset is a directory holding four files:
//!
//! | file            | contents                                             |
//! |-----------------|------------------------------------------------------|
//! | `manifest.json` | [`Manifest`], UTF-8 JSON                             |
//! | `features.f32`  | N x d little-endian IEEE-754 `f32`, row-major        |
//! | `labels.i64`    | N little-endian `i64` class indices                  |
//! | `text.f32`      | C x d little-endian `f32` class embeddings, row-major|
//!
//! Rows are re-normalized on load. Payloads are kept at their stored
//! precision so a read/write cycle reproduces the files byte for byte.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::math::{norm, Embedding, TextClassMatrix};

pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE: &str = "f32le";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Rows whose stored norm is further than this from 1 are counted as
/// re-normalized.
pub const UNIT_NORM_WARN_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayloadFiles {
    pub features: String,
    pub labels: String,
    pub text: String,
}

impl Default for PayloadFiles {
    fn default() -> Self {
        Self {
            features: "features.f32".into(),
            labels: "labels.i64".into(),
            text: "text.f32".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub n: usize,
    pub d: usize,
    pub c: usize,
    pub dtype: String,
    pub files: PayloadFiles,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
    #[serde(default)]
    pub provenance: String,
}

#[derive(Debug, Clone)]
pub struct EmbDataset {
    manifest: Manifest,
    features_raw: Vec<f32>,
    labels: Vec<usize>,
    text_raw: Vec<f32>,
    features: Vec<Embedding>,
    text: TextClassMatrix,
    renormalized_rows: usize,
}

impl EmbDataset {
    /// Builds a dataset from raw row-major payloads.
    pub fn from_raw(
        features_raw: Vec<f32>,
        labels: Vec<usize>,
        text_raw: Vec<f32>,
        d: usize,
        class_names: Option<Vec<String>>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if d == 0 || text_raw.len() % d != 0 {
            return Err(Error::DimMismatch {
                expected: d,
                found: text_raw.len(),
            });
        }
        if features_raw.len() != n * d {
            return Err(Error::DimMismatch {
                expected: n * d,
                found: features_raw.len(),
            });
        }
        let c = text_raw.len() / d;
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= c) {
            return Err(Error::LabelOutOfRange {
                row,
                label: label as i64,
                classes: c,
            });
        }

        let mut renormalized_rows = 0;
        let mut normalize_rows = |raw: &[f32]| -> Result<Vec<Embedding>> {
            raw.chunks_exact(d)
                .map(|row| {
                    let row: Vec<f64> = row.iter().map(|&x| f64::from(x)).collect();
                    if (norm(&row) - 1.0).abs() > UNIT_NORM_WARN_TOL {
                        renormalized_rows += 1;
                    }
                    Embedding::normalize(&row)
                })
                .collect()
        };
        let features = normalize_rows(&features_raw)?;
        let text_rows = normalize_rows(&text_raw)?;
        let text = TextClassMatrix::new(text_rows, class_names.clone())?;

        Ok(Self {
            manifest: Manifest {
                format_version: FORMAT_VERSION,
                n,
                d,
                c,
                dtype: DTYPE.into(),
                files: PayloadFiles::default(),
                class_names,
                provenance: provenance.into(),
            },
            features_raw,
            labels,
            text_raw,
            features,
            text,
            renormalized_rows,
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.manifest.d
    }

    pub fn classes(&self) -> usize {
        self.manifest.c
    }

    pub fn features(&self) -> &[Embedding] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn text(&self) -> &TextClassMatrix {
        &self.text
    }

    pub fn features_raw(&self) -> &[f32] {
        &self.features_raw
    }

    pub fn text_raw(&self) -> &[f32] {
        &self.text_raw
    }

    /// Number of stored rows (features and text) that were not unit-norm
    /// within [`UNIT_NORM_WARN_TOL`].
    pub fn renormalized_rows(&self) -> usize {
        self.renormalized_rows
    }

    pub fn name(&self) -> &str {
        &self.manifest.provenance
    }

    /// Hex SHA-256 over the three payloads in the order features, labels, text.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(f32_bytes(&self.features_raw));
        h.update(label_bytes(&self.labels));
        h.update(f32_bytes(&self.text_raw));
        hex::encode(h.finalize())
    }
}

fn f32_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn label_bytes(labels: &[usize]) -> Vec<u8> {
    labels
        .iter()
        .flat_map(|&l| (l as i64).to_le_bytes())
        .collect()
}

/// Writes `bytes` to `path` through a temporary file in the same directory,
/// so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_dataset(ds: &EmbDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = &ds.manifest.files;
    write_atomic(&dir.join(&files.features), &f32_bytes(&ds.features_raw))?;
    write_atomic(&dir.join(&files.labels), &label_bytes(&ds.labels))?;
    write_atomic(&dir.join(&files.text), &f32_bytes(&ds.text_raw))?;
    let mut manifest = serde_json::to_vec_pretty(&ds.manifest).expect("manifest serializes");
    manifest.push(b'\n');
    // Manifest last: a directory with a manifest has complete payloads.
    write_atomic(&dir.join(MANIFEST_FILE), &manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_slice(&text).map_err(|source| Error::Json { path, source })
}

pub fn read_dataset(dir: &Path) -> Result<EmbDataset> {
    let manifest = read_manifest(dir)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(manifest.format_version));
    }
    if manifest.dtype != DTYPE {
        return Err(Error::ManifestMismatch {
            file: MANIFEST_FILE.into(),
            detail: format!("dtype {:?}, expected {DTYPE:?}", manifest.dtype),
        });
    }
    let (n, d, c) = (manifest.n, manifest.d, manifest.c);
    let read = |name: &str, expected: usize| -> Result<Vec<u8>> {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() != expected {
            return Err(Error::ManifestMismatch {
                file: name.into(),
                detail: format!("{} bytes on disk, manifest implies {expected}", bytes.len()),
            });
        }
        Ok(bytes)
    };
    let features = read(&manifest.files.features, n * d * 4)?;
    let labels = read(&manifest.files.labels, n * 8)?;
    let text = read(&manifest.files.text, c * d * 4)?;

    let to_f32 = |b: &[u8]| -> Vec<f32> {
        b.chunks_exact(4)
            .map(|w| f32::from_le_bytes(w.try_into().expect("4-byte chunk")))
            .collect()
    };
    let labels = labels
        .chunks_exact(8)
        .enumerate()
        .map(|(row, w)| {
            let label = i64::from_le_bytes(w.try_into().expect("8-byte chunk"));
            usize::try_from(label)
                .ok()
                .filter(|&l| l < c)
                .ok_or(Error::LabelOutOfRange {
                    row,
                    label,
                    classes: c,
                })
        })
        .collect::<Result<Vec<usize>>>()?;

    let mut ds = EmbDataset::from_raw(
        to_f32(&features),
        labels,
        to_f32(&text),
        d,
        manifest.class_names.clone(),
        manifest.provenance.clone(),
    )?;
    ds.manifest = manifest;
    Ok(ds)
}
