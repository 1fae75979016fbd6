use crate::error::{Error, Result};
use crate::fitting::LandmarkSet;
use crate::morphable::Mesh;

/// `sqrt(width * length)` of a mesh: x and y extents in its own frame.
pub fn face_size(mesh: &Mesh) -> f64 {
    let e = mesh.extents();
    (e.x * e.y).sqrt()
}

/// Mean per-landmark Euclidean distance divided by the reference face size.
pub fn nme(pred: &LandmarkSet, reference: &LandmarkSet, reference_mesh: &Mesh) -> Result<f64> {
    nme_with_size(pred, reference, face_size(reference_mesh))
}

pub fn nme_with_size(pred: &LandmarkSet, reference: &LandmarkSet, size: f64) -> Result<f64> {
    if !(size > 0.0) || !size.is_finite() {
        return Err(Error::Degenerate(format!("face size must be positive, got {size}")));
    }
    let total: f64 = pred
        .points()
        .iter()
        .zip(reference.points())
        .map(|(a, b)| (a - b).norm())
        .sum();
    Ok(total / pred.points().len() as f64 / size)
}
