//! Line, point and region based comparison of a predicted mesh against a
//! reference mesh.

mod icp;
pub mod kdtree;
mod nme;
mod ratio;
mod report;

pub use icp::{icp_point_to_plane, IcpConfig, IcpResult};
pub use nme::{face_size, nme, nme_with_size};
pub use ratio::{absolute_ratio_error, are_from_landmarks, facial_ratios, relative_gain, AreResult, RatioSpec};
pub use report::{EvalReport, ReportTable, PART_NAMES};

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, Error, Result};
use crate::morphable::{vertex_normals, Mesh};

/// Vertex index sets of the six facial parts used for part registration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionMap {
    pub left_eye: Vec<usize>,
    pub right_eye: Vec<usize>,
    pub nose: Vec<usize>,
    pub mouth: Vec<usize>,
    pub left_cheek: Vec<usize>,
    pub right_cheek: Vec<usize>,
}

impl RegionMap {
    pub fn new(
        left_eye: Vec<usize>,
        right_eye: Vec<usize>,
        nose: Vec<usize>,
        mouth: Vec<usize>,
        left_cheek: Vec<usize>,
        right_cheek: Vec<usize>,
        vertex_count: usize,
    ) -> Result<Self> {
        let map = Self {
            left_eye,
            right_eye,
            nose,
            mouth,
            left_cheek,
            right_cheek,
        };
        map.validate(vertex_count)?;
        Ok(map)
    }

    pub fn validate(&self, vertex_count: usize) -> Result<()> {
        for (name, set) in self.iter() {
            if set.is_empty() {
                return Err(Error::InvalidArgument(format!("region {name} is empty")));
            }
            if let Some(&bad) = set.iter().find(|&&i| i >= vertex_count) {
                return Err(Error::InvalidArgument(format!(
                    "region {name} index {bad} out of range for {vertex_count} vertices"
                )));
            }
        }
        Ok(())
    }

    /// Regions in report order: left eye, right eye, nose, mouth, left cheek, right cheek.
    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &[usize])> {
        [
            (PART_NAMES[0], self.left_eye.as_slice()),
            (PART_NAMES[1], self.right_eye.as_slice()),
            (PART_NAMES[2], self.nose.as_slice()),
            (PART_NAMES[3], self.mouth.as_slice()),
            (PART_NAMES[4], self.left_cheek.as_slice()),
            (PART_NAMES[5], self.right_cheek.as_slice()),
        ]
        .into_iter()
    }

    /// TOML with one array per region, e.g. `nose = [12, 13, 40]`.
    pub fn parse(text: &str, origin: &str, vertex_count: usize) -> Result<Self> {
        let map: RegionMap = toml::from_str(text).map_err(|e| Error::parse(origin, 0, e.to_string()))?;
        map.validate(vertex_count)?;
        Ok(map)
    }

    pub fn load(path: &Path, vertex_count: usize) -> Result<Self> {
        Self::parse(&read_to_string(path)?, &path.display().to_string(), vertex_count)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("region map serializes")
    }
}

/// Registers one region of `pred` onto the same region of `reference`.
/// `reference` must already carry normals (they are inherited by the submesh).
pub fn region_rmse(pred: &Mesh, reference: &Mesh, name: &str, indices: &[usize], cfg: &IcpConfig) -> Result<f64> {
    if indices.len() < 6 {
        return Err(Error::Degenerate(format!(
            "region {name} has {} vertices; registration needs at least 6",
            indices.len()
        )));
    }
    let src = pred.submesh(indices)?;
    let tgt = reference.submesh(indices)?;
    icp_point_to_plane(&src, &tgt, cfg)
        .map(|r| r.rmse)
        .map_err(|e| Error::Degenerate(format!("region {name}: {e}")))
}

/// Point-to-plane RMSE after registering each of the six regions separately.
/// Regions run in parallel; the output order is fixed.
pub fn part_rmse(pred: &Mesh, reference: &Mesh, regions: &RegionMap, cfg: &IcpConfig) -> Result<[f64; 6]> {
    regions.validate(pred.vertex_count().min(reference.vertex_count()))?;
    let reference = if reference.normals.is_some() {
        reference.clone()
    } else {
        vertex_normals(reference)?
    };
    let parts: Vec<(&str, &[usize])> = regions.iter().collect();
    let out: Vec<Result<f64>> = parts
        .par_iter()
        .map(|(name, idx)| region_rmse(pred, &reference, name, idx, cfg))
        .collect();
    let mut rmse = [0.0; 6];
    for (slot, r) in rmse.iter_mut().zip(out) {
        *slot = r?;
    }
    Ok(rmse)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::morphable::synthetic::SyntheticFace;

    #[test]
    fn identical_parts_are_zero() {
        let m = SyntheticFace::default().build().unwrap();
        let mesh = m.basis.mean_mesh();
        let r = part_rmse(&mesh, &mesh, &m.regions, &IcpConfig::default()).unwrap();
        assert!(r.iter().all(|&v| v < 1e-9), "{r:?}");
    }

    #[test]
    fn nose_perturbation_is_local() {
        let m = SyntheticFace::default().build().unwrap();
        let reference = m.basis.mean_mesh();
        let mut pred = reference.clone();
        let d = 0.05;
        for &i in &m.regions.nose {
            let v = pred.vertices[i];
            // non-rigid bump so registration cannot absorb it
            pred.vertices[i].z += d * (-(v.x * v.x + (v.y - 0.1).powi(2)) / 0.02).exp();
        }
        let cfg = IcpConfig::default();
        let r = part_rmse(&pred, &reference, &m.regions, &cfg).unwrap();
        assert!(r[0] < 1e-9 && r[1] < 1e-9, "{r:?}");
        assert!(r[2] > 1e-4, "{r:?}");

        // definitional equality with registering the extracted submesh
        let with_normals = vertex_normals(&reference).unwrap();
        let direct = icp_point_to_plane(
            &pred.submesh(&m.regions.nose).unwrap(),
            &with_normals.submesh(&m.regions.nose).unwrap(),
            &cfg,
        )
        .unwrap();
        assert_eq!(direct.rmse, r[2]);
    }

    #[test]
    fn small_region_is_named_in_error() {
        let m = SyntheticFace::default().build().unwrap();
        let mesh = m.basis.mean_mesh();
        let mut regions = m.regions.clone();
        regions.mouth.truncate(4);
        let err = part_rmse(&mesh, &mesh, &regions, &IcpConfig::default()).unwrap_err();
        assert!(err.to_string().contains("Mouth"), "{err}");
    }

    #[test]
    fn region_toml_roundtrip() {
        let m = SyntheticFace::default().build().unwrap();
        let n = m.basis.vertex_count();
        assert_eq!(RegionMap::parse(&m.regions.to_toml(), "r", n).unwrap(), m.regions);
        assert!(RegionMap::parse(&m.regions.to_toml(), "r", 10).is_err());
    }
}
