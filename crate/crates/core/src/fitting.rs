//! Recovery of shape coefficients from 68 3D landmarks.
//!
//! Solves `argmin ||mean_L + V_L a - l||^2 + lambda ||a||^2` through the normal
//! equations `(V_L^T V_L + lambda I) a = V_L^T (l - mean_L)`, where the `_L`
//! subscript selects the 204 rows belonging to the landmark vertices. Landmarks
//! are expected in the model frame (pose already removed).

use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::{read_to_string, Error, Result};
use crate::morphable::{parse_numbers, CoeffRole, Mesh, MorphableBasis, ShapeCoefficients, LANDMARK_COUNT};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LandmarkSource {
    Detected,
    Synthetic,
    MeshExtracted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    points: Vec<Vector3<f64>>,
    pub source: LandmarkSource,
}

impl LandmarkSet {
    pub fn new(points: Vec<Vector3<f64>>, source: LandmarkSource) -> Result<Self> {
        if points.len() != LANDMARK_COUNT {
            return Err(Error::dim("landmark set", LANDMARK_COUNT, points.len()));
        }
        if points.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("landmark coordinates".into()));
        }
        Ok(Self { points, source })
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn to_flat(&self) -> DVector<f64> {
        DVector::from_iterator(3 * self.points.len(), self.points.iter().flat_map(|p| [p.x, p.y, p.z]))
    }

    /// Parses 68 lines of `x y z`.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let nums = parse_numbers(text, origin)?;
        if nums.len() != 3 * LANDMARK_COUNT {
            return Err(Error::parse(
                origin,
                0,
                format!("expected {} coordinates, found {}", 3 * LANDMARK_COUNT, nums.len()),
            ));
        }
        let pts = nums.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect();
        Self::new(pts, LandmarkSource::Detected)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, &path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        self.points
            .iter()
            .map(|p| format!("{} {} {}\n", p.x, p.y, p.z))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub ridge_lambda: f64,
    /// RMS landmark residual above which a fit is flagged in its report.
    pub max_landmark_residual: f64,
}

impl FitConfig {
    pub fn new(ridge_lambda: f64) -> Result<Self> {
        if !(ridge_lambda >= 0.0) || !ridge_lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "ridge_lambda must be >= 0, got {ridge_lambda}"
            )));
        }
        Ok(Self {
            ridge_lambda,
            max_landmark_residual: f64::INFINITY,
        })
    }

    /// Scale-aware default: `1e-6 * trace(V_L^T V_L) / P`.
    pub fn default_for(basis: &MorphableBasis) -> Result<Self> {
        let vl = landmark_rows(basis)?;
        let p = basis.coeff_count().max(1) as f64;
        Self::new(1e-6 * vl.norm_squared() / p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub coefficients: ShapeCoefficients,
    pub residual_rms: f64,
    pub within_threshold: bool,
}

pub fn extract_landmarks(mesh: &Mesh, basis: &MorphableBasis) -> Result<LandmarkSet> {
    let idx = basis.require_landmarks()?;
    let pts = idx
        .iter()
        .map(|&i| {
            mesh.vertices.get(i).copied().ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "landmark vertex {i} missing from mesh of {}",
                    mesh.vertex_count()
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LandmarkSet::new(pts, LandmarkSource::MeshExtracted)
}

/// The 204xP block of basis rows at the landmark vertices.
pub fn landmark_rows(basis: &MorphableBasis) -> Result<DMatrix<f64>> {
    let idx = basis.require_landmarks()?;
    let p = basis.coeff_count();
    Ok(DMatrix::from_fn(3 * idx.len(), p, |r, c| {
        basis.basis()[(3 * idx[r / 3] + r % 3, c)]
    }))
}

pub fn landmark_mean(basis: &MorphableBasis) -> Result<DVector<f64>> {
    let idx = basis.require_landmarks()?;
    Ok(DVector::from_fn(3 * idx.len(), |r, _| {
        basis.mean_shape()[3 * idx[r / 3] + r % 3]
    }))
}

pub fn fit_coefficients(landmarks: &LandmarkSet, basis: &MorphableBasis, cfg: &FitConfig) -> Result<ShapeCoefficients> {
    let vl = landmark_rows(basis)?;
    let rhs = DMatrix::from_column_slice(vl.nrows(), 1, (landmarks.to_flat() - landmark_mean(basis)?).as_slice());
    let sol = ridge_solve(&vl, &rhs, cfg.ridge_lambda)?;
    Ok(ShapeCoefficients::new(
        sol.column(0).into_owned(),
        CoeffRole::GroundTruth,
    ))
}

/// Solves `min ‖A X − B‖² + λ‖X‖²` column by column through the normal
/// equations. With `λ = 0`, `A` must have full column rank.
pub fn ridge_solve(a: &DMatrix<f64>, b: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::dim("ridge_solve rows", a.nrows(), b.nrows()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ridge lambda must be >= 0, got {lambda}"
        )));
    }
    let p = a.ncols();
    if lambda == 0.0 {
        if p > a.nrows() {
            return Err(Error::Singular(format!(
                "{p} unknowns exceed {} equations; use ridge_lambda > 0",
                a.nrows()
            )));
        }
        let sv = a.singular_values();
        let smax = sv.max();
        let smin = sv.min();
        if p > 0 && (smax == 0.0 || smin <= 1e-10 * smax) {
            return Err(Error::Singular(format!(
                "design matrix is rank deficient (singular values {smin:e}..{smax:e}); use ridge_lambda > 0"
            )));
        }
    }
    let mut normal = a.transpose() * a;
    for i in 0..p {
        normal[(i, i)] += lambda;
    }
    let rhs = a.transpose() * b;
    let chol = normal
        .cholesky()
        .ok_or_else(|| Error::Singular("normal matrix is not positive definite; use ridge_lambda > 0".into()))?;
    Ok(chol.solve(&rhs))
}

/// RMS of per-landmark Euclidean residuals for a coefficient vector.
pub fn landmark_residual_rms(
    landmarks: &LandmarkSet,
    basis: &MorphableBasis,
    coeffs: &ShapeCoefficients,
) -> Result<f64> {
    let pred = landmark_mean(basis)? + landmark_rows(basis)? * &coeffs.values;
    let diff = pred - landmarks.to_flat();
    Ok((diff.norm_squared() / LANDMARK_COUNT as f64).sqrt())
}

pub fn fit_report(landmarks: &LandmarkSet, basis: &MorphableBasis, cfg: &FitConfig) -> Result<FitReport> {
    let coefficients = fit_coefficients(landmarks, basis, cfg)?;
    let residual_rms = landmark_residual_rms(landmarks, basis, &coefficients)?;
    Ok(FitReport {
        within_threshold: residual_rms <= cfg.max_landmark_residual,
        coefficients,
        residual_rms,
    })
}
