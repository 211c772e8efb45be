//! Feature packs: the on-disk container that carries penultimate features,
//! head logits, labels and classification-head parameters into the engine.
//!
//! Directory layout (version 1, all arrays little-endian, row-major, no header):
//!
//! ```text
//! manifest.json   {"version":1,"n":..,"d":..,"K":..,"class_names":[..],"has_logits":..,"endianness":"little"}
//! features.f32    n*d float32
//! logits.f32      n*K float32 (optional)
//! labels.i32      n int32, -1 marks an unknown-class sample
//! weights.f32     K*d float32
//! bias.f32        K float32
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{OsrError, Result};

pub const FORMAT_VERSION: u64 = 1;
pub const UNKNOWN_LABEL: i32 = -1;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FEATURES_FILE: &str = "features.f32";
pub const LOGITS_FILE: &str = "logits.f32";
pub const LABELS_FILE: &str = "labels.i32";
pub const WEIGHTS_FILE: &str = "weights.f32";
pub const BIAS_FILE: &str = "bias.f32";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u64,
    pub n: usize,
    pub d: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub class_names: Vec<String>,
    pub has_logits: bool,
    pub endianness: String,
}

/// A dataset of classifier outputs. Stored values are `f32`; every
/// accessor that feeds arithmetic widens to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePack {
    /// Feature dimension of the penultimate embedding.
    pub dim: usize,
    /// Number of known classes (rows of the classification head).
    pub classes: usize,
    /// `n x dim`, row-major.
    pub features: Vec<f32>,
    /// `n x classes`, row-major. When absent, logits are derived from the head.
    pub logits: Option<Vec<f32>>,
    pub labels: Vec<i32>,
    /// `classes x dim`, row-major; row `j` is the head weight vector of class `j`.
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
    pub class_names: Vec<String>,
}

impl FeaturePack {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Checks every structural invariant: shapes, label range, finiteness.
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(OsrError::InvalidShape("feature dimension d must be positive".into()));
        }
        if self.classes == 0 {
            return Err(OsrError::InvalidShape("class count K must be positive".into()));
        }
        let n = self.len();
        check_len("features", n * self.dim, self.features.len())?;
        if let Some(logits) = &self.logits {
            check_len("logits", n * self.classes, logits.len())?;
        }
        check_len("weights", self.classes * self.dim, self.weights.len())?;
        check_len("bias", self.classes, self.bias.len())?;
        check_len("class_names", self.classes, self.class_names.len())?;

        for (sample, &label) in self.labels.iter().enumerate() {
            if label != UNKNOWN_LABEL && (label < 0 || label as usize >= self.classes) {
                return Err(OsrError::LabelOutOfRange {
                    sample,
                    label,
                    classes: self.classes,
                });
            }
        }

        check_finite("features", &self.features)?;
        if let Some(logits) = &self.logits {
            check_finite("logits", logits)?;
        }
        check_finite("weights", &self.weights)?;
        check_finite("bias", &self.bias)?;
        Ok(())
    }

    pub fn feature_row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight_row(&self, j: usize) -> &[f32] {
        &self.weights[j * self.dim..(j + 1) * self.dim]
    }

    pub fn features_f64(&self, i: usize) -> Vec<f64> {
        self.feature_row(i).iter().map(|&v| v as f64).collect()
    }

    pub fn weights_f64(&self, j: usize) -> Vec<f64> {
        self.weight_row(j).iter().map(|&v| v as f64).collect()
    }

    /// Logit vector of sample `i`: the stored row when present, otherwise
    /// `W F(x) + b` evaluated in `f64`.
    pub fn logits_row(&self, i: usize) -> Vec<f64> {
        match &self.logits {
            Some(logits) => logits[i * self.classes..(i + 1) * self.classes]
                .iter()
                .map(|&v| v as f64)
                .collect(),
            None => self.derived_logits_row(i),
        }
    }

    /// `W F(x) + b` for sample `i`, ignoring any stored logits.
    pub fn derived_logits_row(&self, i: usize) -> Vec<f64> {
        let f = self.feature_row(i);
        (0..self.classes)
            .map(|j| {
                let dot: f64 = f
                    .iter()
                    .zip(self.weight_row(j))
                    .map(|(&a, &w)| a as f64 * w as f64)
                    .sum();
                dot + self.bias[j] as f64
            })
            .collect()
    }

    /// Largest absolute difference between stored and head-derived logits,
    /// or `None` when the pack carries no stored logits.
    pub fn logit_discrepancy(&self) -> Option<f64> {
        self.logits.as_ref()?;
        let mut worst = 0.0f64;
        for i in 0..self.len() {
            let stored = self.logits_row(i);
            let derived = self.derived_logits_row(i);
            for (a, b) in stored.iter().zip(&derived) {
                worst = worst.max((a - b).abs());
            }
        }
        Some(worst)
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            version: FORMAT_VERSION,
            n: self.len(),
            d: self.dim,
            k: self.classes,
            class_names: self.class_names.clone(),
            has_logits: self.logits.is_some(),
            endianness: "little".into(),
        }
    }
}

fn check_len(what: &str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(OsrError::SizeMismatch {
            what: what.into(),
            expected,
            found,
        });
    }
    Ok(())
}

fn check_finite(what: &str, values: &[f32]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(OsrError::NonFinite {
            what: what.into(),
            index,
        }),
        None => Ok(()),
    }
}

/// Writes `pack` into `dir`, creating the directory if needed. The pack is
/// validated before anything touches the filesystem.
pub fn write_pack(pack: &FeaturePack, dir: impl AsRef<Path>) -> Result<()> {
    pack.validate()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| OsrError::io(dir, e))?;

    let manifest = serde_json::to_string(&pack.manifest()).expect("manifest serializes");
    write_file(&dir.join(MANIFEST_FILE), manifest.as_bytes())?;
    write_file(&dir.join(FEATURES_FILE), &encode_f32(&pack.features))?;
    let logits_path = dir.join(LOGITS_FILE);
    match &pack.logits {
        Some(logits) => write_file(&logits_path, &encode_f32(logits))?,
        None if logits_path.exists() => {
            fs::remove_file(&logits_path).map_err(|e| OsrError::io(&logits_path, e))?
        }
        None => {}
    }
    write_file(&dir.join(LABELS_FILE), &encode_i32(&pack.labels))?;
    write_file(&dir.join(WEIGHTS_FILE), &encode_f32(&pack.weights))?;
    write_file(&dir.join(BIAS_FILE), &encode_f32(&pack.bias))?;
    Ok(())
}

/// Reads and validates a pack directory.
pub fn read_pack(dir: impl AsRef<Path>) -> Result<FeaturePack> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    if manifest.class_names.len() != manifest.k {
        return Err(OsrError::SizeMismatch {
            what: "class_names".into(),
            expected: manifest.k,
            found: manifest.class_names.len(),
        });
    }

    let features = decode_f32(&read_file(&dir.join(FEATURES_FILE))?, "features", manifest.n * manifest.d)?;
    let logits = if manifest.has_logits {
        Some(decode_f32(&read_file(&dir.join(LOGITS_FILE))?, "logits", manifest.n * manifest.k)?)
    } else {
        None
    };
    let labels = decode_i32(&read_file(&dir.join(LABELS_FILE))?, "labels", manifest.n)?;
    let weights = decode_f32(&read_file(&dir.join(WEIGHTS_FILE))?, "weights", manifest.k * manifest.d)?;
    let bias = decode_f32(&read_file(&dir.join(BIAS_FILE))?, "bias", manifest.k)?;

    let pack = FeaturePack {
        dim: manifest.d,
        classes: manifest.k,
        features,
        logits,
        labels,
        weights,
        bias,
        class_names: manifest.class_names,
    };
    pack.validate()?;
    Ok(pack)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = read_file(&path)?;
    let value: serde_json::Value =
        serde_json::from_slice(&bytes).map_err(|source| OsrError::Manifest {
            path: path.clone(),
            source,
        })?;
    // Version is checked before the rest of the schema so that future
    // layouts fail with the version error rather than a field error.
    match value.get("version").and_then(|v| v.as_u64()) {
        Some(FORMAT_VERSION) => {}
        Some(other) => return Err(OsrError::UnsupportedVersion(other)),
        None => {
            return Err(OsrError::InvalidShape(
                "manifest version missing or not an unsigned integer".into(),
            ))
        }
    }
    let manifest: Manifest =
        serde_json::from_value(value).map_err(|source| OsrError::Manifest { path, source })?;
    if manifest.endianness != "little" {
        return Err(OsrError::InvalidShape(format!(
            "unsupported endianness {:?}",
            manifest.endianness
        )));
    }
    Ok(manifest)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            OsrError::MissingFile(path.to_path_buf())
        } else {
            OsrError::io(path, e)
        }
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| OsrError::io(path, e))
}

fn encode_f32(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn encode_i32(values: &[i32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn element_count(bytes: &[u8], what: &str, expected: usize) -> Result<()> {
    if !bytes.len().is_multiple_of(4) || bytes.len() / 4 != expected {
        return Err(OsrError::SizeMismatch {
            what: what.into(),
            expected,
            found: bytes.len() / 4,
        });
    }
    Ok(())
}

fn decode_f32(bytes: &[u8], what: &str, expected: usize) -> Result<Vec<f32>> {
    element_count(bytes, what, expected)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn decode_i32(bytes: &[u8], what: &str, expected: usize) -> Result<Vec<i32>> {
    element_count(bytes, what, expected)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}
