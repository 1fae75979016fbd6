use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, Error, Result};
use crate::fitting::{extract_landmarks, LandmarkSet};
use crate::morphable::{Mesh, MorphableBasis, LANDMARK_COUNT};

/// Landmark-index pairs whose lengths, divided by the outer-interocular
/// distance (OICD), define the four facial ratios.
///
/// The default is a convention over the 68-point layout: jaw extremes for the
/// ear pair, brow extremes for the forehead, outer eye corners for the OICD,
/// nose bridge to chin for the midline and the mid-jaw pair for the cheeks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatioSpec {
    pub ear: [usize; 2],
    pub forehead: [usize; 2],
    pub outer_interocular: [usize; 2],
    pub midline: [usize; 2],
    pub cheek: [usize; 2],
}

impl Default for RatioSpec {
    fn default() -> Self {
        Self {
            ear: [0, 16],
            forehead: [17, 26],
            outer_interocular: [36, 45],
            midline: [27, 8],
            cheek: [4, 12],
        }
    }
}

impl RatioSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, pair) in self.pairs() {
            if let Some(&bad) = pair.iter().find(|&&i| i >= LANDMARK_COUNT) {
                return Err(Error::InvalidArgument(format!("{name} landmark {bad} is not in 0..68")));
            }
        }
        if self.outer_interocular[0] == self.outer_interocular[1] {
            return Err(Error::InvalidArgument("outer_interocular points must differ".into()));
        }
        Ok(())
    }

    fn pairs(&self) -> [(&'static str, [usize; 2]); 5] {
        [
            ("ear", self.ear),
            ("forehead", self.forehead),
            ("outer_interocular", self.outer_interocular),
            ("midline", self.midline),
            ("cheek", self.cheek),
        ]
    }

    /// Reads the TOML form, e.g. `ear = [0, 16]` for each of the five pairs.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let spec: RatioSpec = toml::from_str(text).map_err(|e| Error::parse(origin, 0, e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("ratio spec serializes")
    }
}

/// Per-ratio absolute errors; `mean` is the average of the four.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AreResult {
    pub er: f64,
    pub fr: f64,
    pub mr: f64,
    pub cr: f64,
    pub mean: f64,
}

impl AreResult {
    pub fn from_parts(er: f64, fr: f64, mr: f64, cr: f64) -> Self {
        Self {
            er,
            fr,
            mr,
            cr,
            mean: (er + fr + mr + cr) / 4.0,
        }
    }

    pub fn zero() -> Self {
        Self::from_parts(0.0, 0.0, 0.0, 0.0)
    }
}

/// The four ratios ER, FR, MR, CR of one landmark set.
pub fn facial_ratios(lms: &LandmarkSet, spec: &RatioSpec) -> Result<[f64; 4]> {
    spec.validate()?;
    let p = lms.points();
    let dist = |pair: [usize; 2]| (p[pair[0]] - p[pair[1]]).norm();
    let oicd = dist(spec.outer_interocular);
    if oicd == 0.0 || !oicd.is_finite() {
        return Err(Error::Degenerate("outer-interocular distance is zero".into()));
    }
    Ok([
        dist(spec.ear) / oicd,
        dist(spec.forehead) / oicd,
        dist(spec.midline) / oicd,
        dist(spec.cheek) / oicd,
    ])
}

pub fn are_from_landmarks(pred: &LandmarkSet, reference: &LandmarkSet, spec: &RatioSpec) -> Result<AreResult> {
    let a = facial_ratios(pred, spec)?;
    let b = facial_ratios(reference, spec)?;
    Ok(AreResult::from_parts(
        (a[0] - b[0]).abs(),
        (a[1] - b[1]).abs(),
        (a[2] - b[2]).abs(),
        (a[3] - b[3]).abs(),
    ))
}

/// ARE between two meshes sharing the basis topology.
pub fn absolute_ratio_error(
    pred: &Mesh,
    reference: &Mesh,
    basis: &MorphableBasis,
    spec: &RatioSpec,
) -> Result<AreResult> {
    are_from_landmarks(
        &extract_landmarks(pred, basis)?,
        &extract_landmarks(reference, basis)?,
        spec,
    )
}

/// Percentage change of `candidate` relative to `baseline`.
pub fn relative_gain(candidate_mean: f64, baseline_mean: f64) -> Result<f64> {
    if !(baseline_mean > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "baseline must be > 0, got {baseline_mean}"
        )));
    }
    Ok(100.0 * (candidate_mean - baseline_mean) / baseline_mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::morphable::synthetic::SyntheticFace;
    use crate::morphable::{reconstruct, ShapeCoefficients};
    use nalgebra::DVector;

    #[test]
    fn identical_meshes_zero() {
        let b = SyntheticFace::default().build().unwrap().basis;
        let m = b.mean_mesh();
        assert_eq!(
            absolute_ratio_error(&m, &m, &b, &RatioSpec::default()).unwrap(),
            AreResult::zero()
        );
    }

    #[test]
    fn table_mean_and_gain() {
        let r = AreResult::from_parts(0.0152, 0.0186, 0.0169, 0.0457);
        assert!((r.mean - 0.0241).abs() < 1e-12);
        assert!((relative_gain(0.0241, 0.0302).unwrap() + 20.2).abs() < 0.05);
        assert!((relative_gain(0.0251, 0.0302).unwrap() + 16.9).abs() < 0.05);
        assert_eq!(relative_gain(0.3, 0.3).unwrap(), 0.0);
        assert!(relative_gain(0.1, 0.0).is_err());
    }

    #[test]
    fn scale_invariant() {
        let b = SyntheticFace::default().build().unwrap().basis;
        let a = reconstruct(
            &b,
            &ShapeCoefficients::predicted(DVector::from_element(b.coeff_count(), 1.5)),
        )
        .unwrap();
        let r = b.mean_mesh();
        let base = absolute_ratio_error(&a, &r, &b, &RatioSpec::default()).unwrap();
        for s in [0.1, 2.0, 37.0] {
            let scaled = absolute_ratio_error(&a.scaled(s), &r.scaled(s), &b, &RatioSpec::default()).unwrap();
            assert!((scaled.mean - base.mean).abs() < 1e-12);
            assert!((scaled.er - base.er).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_oicd_is_error() {
        let b = SyntheticFace::default().build().unwrap().basis;
        let mut m = b.mean_mesh();
        let lms = b.landmark_indices().unwrap();
        m.vertices[lms[45]] = m.vertices[lms[36]];
        assert!(matches!(
            absolute_ratio_error(&m, &b.mean_mesh(), &b, &RatioSpec::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn spec_toml_roundtrip_and_validation() {
        let s = RatioSpec::default();
        assert_eq!(RatioSpec::parse(&s.to_toml(), "r").unwrap(), s);
        assert!(RatioSpec::parse(
            "ear=[0,16]\nforehead=[17,26]\nouter_interocular=[36,36]\nmidline=[27,8]\ncheek=[4,12]\n",
            "r"
        )
        .is_err());
        assert!(RatioSpec::parse(
            "ear=[0,99]\nforehead=[17,26]\nouter_interocular=[36,45]\nmidline=[27,8]\ncheek=[4,12]\n",
            "r"
        )
        .is_err());
    }
}
