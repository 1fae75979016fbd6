use nalgebra::Vector3;

use super::Mesh;
use crate::error::{Error, Result};

/// Populates per-vertex normals as the normalised area-weighted sum of
/// incident triangle normals. Zero-area triangles contribute nothing and
/// vertices with no usable incident triangle get `(0, 0, 1)`.
pub fn vertex_normals(mesh: &Mesh) -> Result<Mesh> {
    if mesh.faces.is_empty() {
        return Err(Error::Degenerate("mesh has no faces to derive normals from".into()));
    }
    let mut acc = vec![Vector3::zeros(); mesh.vertices.len()];
    let mut any_area = false;
    for f in &mesh.faces {
        let [a, b, c] = [mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]];
        // |cross| is twice the triangle area, so summing it area-weights.
        let n = (b - a).cross(&(c - a));
        if n.norm_squared() == 0.0 {
            continue;
        }
        any_area = true;
        for &i in f {
            acc[i] += n;
        }
    }
    if !any_area {
        return Err(Error::Degenerate("every triangle has zero area".into()));
    }
    let normals = acc
        .into_iter()
        .map(|n| {
            let len = n.norm();
            if len > 0.0 {
                n / len
            } else {
                Vector3::z()
            }
        })
        .collect();
    Ok(Mesh {
        vertices: mesh.vertices.clone(),
        faces: mesh.faces.clone(),
        normals: Some(normals),
    })
}
