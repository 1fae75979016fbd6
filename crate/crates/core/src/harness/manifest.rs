//! Dataset manifests.
//!
//! A manifest is TOML with one `[[identity]]` table per person:
//!
//! ```toml
//! [[identity]]
//! name = "Ada000"
//! gender = "female"            # free-form tag
//! coefficients = "coeffs/Ada000.txt"
//! features = ["feat/Ada000_0.txt", "feat/Ada000_1.txt"]
//! ```
//!
//! Relative paths resolve against the manifest's directory. Coefficient files
//! hold one value per line; feature files hold one embedding as
//! whitespace-separated numbers. `#` starts a comment in both.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::split::split_names;
use crate::error::{read_to_string, Error, Result};
use crate::morphable::{load_coefficients, parse_numbers, CoeffRole};
use crate::nnkit::{Sample, SyntheticDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    #[serde(default)]
    pub gender: String,
    pub coefficients: PathBuf,
    #[serde(default)]
    pub features: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    #[serde(default)]
    identity: Vec<ManifestEntry>,
}

/// Entries with every path already resolved to an existing file.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestSplit {
    pub train: DatasetManifest,
    pub eval: DatasetManifest,
    pub warnings: Vec<String>,
}

impl DatasetManifest {
    /// Parses manifest text. `base` is the directory relative paths resolve
    /// against.
    pub fn parse(text: &str, base: &Path, origin: &str) -> Result<Self> {
        let file: ManifestFile = toml::from_str(text).map_err(|e| Error::parse(origin, 0, e.to_string()))?;
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let mut seen = BTreeSet::new();
        let mut entries = Vec::with_capacity(file.identity.len());
        for (i, mut e) in file.identity.into_iter().enumerate() {
            if e.name.trim().is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "{origin}: identity {i} has an empty name"
                )));
            }
            if !seen.insert(e.name.clone()) {
                return Err(Error::InvalidArgument(format!(
                    "{origin}: identity {:?} listed twice",
                    e.name
                )));
            }
            e.coefficients = resolve(&e.coefficients);
            for f in &mut e.features {
                *f = resolve(f);
            }
            for p in std::iter::once(&e.coefficients).chain(&e.features) {
                if !p.is_file() {
                    return Err(Error::Missing(format!(
                        "identity {}: file {} not found",
                        e.name,
                        p.display()
                    )));
                }
            }
            entries.push(e);
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&read_to_string(path)?, base, &path.display().to_string())
    }

    /// Manifest text with paths written as given.
    pub fn to_toml(&self) -> String {
        toml::to_string(&ManifestFile {
            identity: self.entries.clone(),
        })
        .expect("manifest serializes")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.name.as_str()).collect()
    }

    pub fn load_coefficients(&self, i: usize) -> Result<DVector<f64>> {
        Ok(load_coefficients(&self.entries[i].coefficients, CoeffRole::GroundTruth)?.values)
    }

    /// One sample per feature file, paired with the identity's coefficients.
    pub fn to_dataset(&self) -> Result<SyntheticDataset> {
        let mut names = Vec::with_capacity(self.len());
        let mut genders = Vec::with_capacity(self.len());
        let mut samples = Vec::new();
        for (id, e) in self.entries.iter().enumerate() {
            let coefficients = self.load_coefficients(id)?;
            for f in &e.features {
                let embedding = parse_numbers(&read_to_string(f)?, &f.display().to_string())?;
                samples.push(Sample {
                    identity: id,
                    embedding: DVector::from_vec(embedding),
                    coefficients: coefficients.clone(),
                });
            }
            names.push(e.name.clone());
            genders.push(e.gender.clone());
        }
        SyntheticDataset::new(names, genders, samples)
    }
}

/// Applies the A-E name rule. Each side keeps manifest order.
pub fn split_manifest(m: &DatasetManifest) -> Result<ManifestSplit> {
    let s = split_names(&m.names())?;
    let pick = |idx: &[usize]| DatasetManifest {
        entries: idx.iter().map(|&i| m.entries[i].clone()).collect(),
    };
    Ok(ManifestSplit {
        train: pick(&s.train),
        eval: pick(&s.eval),
        warnings: s.warnings,
    })
}
