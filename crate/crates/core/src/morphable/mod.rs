//! PCA morphable face model.
//!
//! A face is the mean shape plus a linear combination of basis columns,
//! `shape = mean + basis * coeffs`, stored flat with interleaved coordinates
//! `[x0, y0, z0, x1, y1, z1, ...]`. Reshaping gives one 3D vertex per triple.

mod basis_io;
mod normals;
mod obj;
pub mod synthetic;

pub use basis_io::{load_basis, load_coefficients, save_basis, save_coefficients};
pub use normals::vertex_normals;
pub use obj::{load_obj, parse_obj, save_obj, write_obj};

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};

/// Number of canonical facial landmarks.
pub const LANDMARK_COUNT: usize = 68;

/// Tolerance used when validating rotation matrices.
pub const ROTATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct MorphableBasis {
    mean_shape: DVector<f64>,
    basis: DMatrix<f64>,
    faces: Vec<[usize; 3]>,
    landmark_indices: Option<Vec<usize>>,
}

impl MorphableBasis {
    pub fn new(
        mean_shape: DVector<f64>,
        basis: DMatrix<f64>,
        faces: Vec<[usize; 3]>,
        landmark_indices: Option<Vec<usize>>,
    ) -> Result<Self> {
        if mean_shape.len() % 3 != 0 {
            return Err(Error::InvalidArgument(format!(
                "mean shape length {} is not a multiple of 3",
                mean_shape.len()
            )));
        }
        if basis.nrows() != mean_shape.len() {
            return Err(Error::dim("basis rows vs 3N", mean_shape.len(), basis.nrows()));
        }
        let n = mean_shape.len() / 3;
        check_faces(&faces, n)?;
        if let Some(lms) = &landmark_indices {
            if lms.len() != LANDMARK_COUNT {
                return Err(Error::dim("landmark index count", LANDMARK_COUNT, lms.len()));
            }
            if let Some(&bad) = lms.iter().find(|&&i| i >= n) {
                return Err(Error::InvalidArgument(format!(
                    "landmark index {bad} out of range for {n} vertices"
                )));
            }
        }
        if mean_shape.iter().chain(basis.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("morphable basis".into()));
        }
        Ok(Self {
            mean_shape,
            basis,
            faces,
            landmark_indices,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.mean_shape.len() / 3
    }

    pub fn coeff_count(&self) -> usize {
        self.basis.ncols()
    }

    pub fn mean_shape(&self) -> &DVector<f64> {
        &self.mean_shape
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn landmark_indices(&self) -> Option<&[usize]> {
        self.landmark_indices.as_deref()
    }

    pub fn require_landmarks(&self) -> Result<&[usize]> {
        self.landmark_indices()
            .ok_or_else(|| Error::Missing("basis has no landmark indices".into()))
    }

    /// Basis restricted to its first `p` columns (a nested sub-model).
    pub fn truncated(&self, p: usize) -> Result<Self> {
        if p > self.coeff_count() {
            return Err(Error::dim("truncated coefficient count", self.coeff_count(), p));
        }
        Ok(Self {
            mean_shape: self.mean_shape.clone(),
            basis: self.basis.columns(0, p).into_owned(),
            faces: self.faces.clone(),
            landmark_indices: self.landmark_indices.clone(),
        })
    }

    /// Mean shape as a mesh (all coefficients zero).
    pub fn mean_mesh(&self) -> Mesh {
        Mesh::from_flat(&self.mean_shape, self.faces.clone())
    }
}

fn check_faces(faces: &[[usize; 3]], n: usize) -> Result<()> {
    for (fi, f) in faces.iter().enumerate() {
        if let Some(&bad) = f.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidArgument(format!(
                "face {fi} references vertex {bad} but only {n} vertices exist"
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoeffRole {
    Predicted,
    GroundTruth,
    Positive,
    Negative,
    Expert,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeCoefficients {
    pub values: DVector<f64>,
    pub role: CoeffRole,
}

impl ShapeCoefficients {
    pub fn new(values: DVector<f64>, role: CoeffRole) -> Self {
        Self { values, role }
    }

    pub fn predicted(values: DVector<f64>) -> Self {
        Self::new(values, CoeffRole::Predicted)
    }

    pub fn zeros(p: usize, role: CoeffRole) -> Self {
        Self::new(DVector::zeros(p), role)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn with_role(mut self, role: CoeffRole) -> Self {
        self.role = role;
        self
    }
}

/// Rigid pose `v -> R v + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseParams {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl PoseParams {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let orth_err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if !orth_err.is_finite() || orth_err > ROTATION_TOL {
            return Err(Error::InvalidRotation(format!(
                "R^T R deviates from identity by {orth_err:e}"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::InvalidRotation(format!("determinant {det} is not +1")));
        }
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pose translation".into()));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Rotation of `angle` radians about `axis`, followed by `translation`.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rot = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        Self {
            rotation: *rot.matrix(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn transform_point(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v + self.translation
    }

    /// `self` applied after `first`: `(R2 R1, R2 t1 + t2)`.
    pub fn compose(&self, first: &PoseParams) -> PoseParams {
        PoseParams {
            rotation: self.rotation * first.rotation,
            translation: self.rotation * first.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> PoseParams {
        let rt = self.rotation.transpose();
        PoseParams {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Geodesic angle between two rotations, in radians.
    // atan2 form stays accurate (and finite) near zero, where acos of the
    // trace loses half the digits and can see arguments just above 1.
    pub fn rotation_angle_to(&self, other: &PoseParams) -> f64 {
        let r = self.rotation.transpose() * other.rotation;
        let s = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm();
        s.atan2(r.trace() - 1.0)
    }

    /// Parse the 12-number text form: three rows of R then t, whitespace separated.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let nums = parse_numbers(text, origin)?;
        if nums.len() != 12 {
            return Err(Error::parse(
                origin,
                0,
                format!("expected 12 pose values, found {}", nums.len()),
            ));
        }
        let r = Matrix3::from_row_slice(&nums[..9]);
        let t = Vector3::new(nums[9], nums[10], nums[11]);
        Self::new(r, t)
    }

    pub fn to_text(&self) -> String {
        let r = &self.rotation;
        let t = &self.translation;
        let mut s = String::new();
        for i in 0..3 {
            s.push_str(&format!("{} {} {}\n", r[(i, 0)], r[(i, 1)], r[(i, 2)]));
        }
        s.push_str(&format!("{} {} {}\n", t.x, t.y, t.z));
        s
    }
}

pub(crate) fn parse_numbers(text: &str, origin: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::parse(origin, ln + 1, format!("not a number: {tok:?}")))?;
            out.push(v);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Mesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
    pub normals: Option<Vec<Vector3<f64>>>,
}

impl Mesh {
    pub fn new(vertices: Vec<Vector3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self> {
        check_faces(&faces, vertices.len())?;
        Ok(Self {
            vertices,
            faces,
            normals: None,
        })
    }

    pub fn from_flat(flat: &DVector<f64>, faces: Vec<[usize; 3]>) -> Self {
        let vertices = flat
            .as_slice()
            .chunks_exact(3)
            .map(|c| Vector3::new(c[0], c[1], c[2]))
            .collect();
        Self {
            vertices,
            faces,
            normals: None,
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Vertices as a 3xN matrix.
    pub fn vertex_matrix(&self) -> nalgebra::Matrix3xX<f64> {
        nalgebra::Matrix3xX::from_columns(&self.vertices)
    }

    pub fn to_flat(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.vertices.len() * 3,
            self.vertices.iter().flat_map(|v| [v.x, v.y, v.z]),
        )
    }

    pub fn scaled(&self, s: f64) -> Mesh {
        Mesh {
            vertices: self.vertices.iter().map(|v| v * s).collect(),
            faces: self.faces.clone(),
            normals: self.normals.clone(),
        }
    }

    /// Sub-mesh over `indices` (in the given order). Faces whose three
    /// corners all lie in the subset are kept; normals are inherited.
    pub fn submesh(&self, indices: &[usize]) -> Result<Mesh> {
        let n = self.vertices.len();
        let mut remap = vec![usize::MAX; n];
        for (new, &old) in indices.iter().enumerate() {
            if old >= n {
                return Err(Error::InvalidArgument(format!(
                    "submesh index {old} out of range for {n} vertices"
                )));
            }
            remap[old] = new;
        }
        let faces = self
            .faces
            .iter()
            .filter_map(|f| {
                let m = [remap[f[0]], remap[f[1]], remap[f[2]]];
                m.iter().all(|&i| i != usize::MAX).then_some(m)
            })
            .collect();
        Ok(Mesh {
            vertices: indices.iter().map(|&i| self.vertices[i]).collect(),
            faces,
            normals: self.normals.as_ref().map(|ns| indices.iter().map(|&i| ns[i]).collect()),
        })
    }

    /// Axis-aligned extents (max - min) per coordinate.
    pub fn extents(&self) -> Vector3<f64> {
        if self.vertices.is_empty() {
            return Vector3::zeros();
        }
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        hi - lo
    }

    pub fn centroid(&self) -> Vector3<f64> {
        if self.vertices.is_empty() {
            return Vector3::zeros();
        }
        self.vertices.iter().sum::<Vector3<f64>>() / self.vertices.len() as f64
    }
}

/// `A = mean + V * alpha`, reshaped to one vertex per coordinate triple.
pub fn reconstruct(basis: &MorphableBasis, coeffs: &ShapeCoefficients) -> Result<Mesh> {
    if coeffs.len() != basis.coeff_count() {
        return Err(Error::dim(
            "coefficients vs basis columns",
            basis.coeff_count(),
            coeffs.len(),
        ));
    }
    let flat = &basis.mean_shape + &basis.basis * &coeffs.values;
    Ok(Mesh::from_flat(&flat, basis.faces.clone()))
}

/// Applies `v -> R v + t` to every vertex. Normals, if present, are rotated.
pub fn apply_pose(mesh: &Mesh, pose: &PoseParams) -> Result<Mesh> {
    // Re-validate: PoseParams fields are private but a caller may have
    // built one via `compose` from accumulated float error.
    let pose = PoseParams::new(pose.rotation, pose.translation)?;
    Ok(Mesh {
        vertices: mesh.vertices.iter().map(|v| pose.transform_point(v)).collect(),
        faces: mesh.faces.clone(),
        normals: mesh
            .normals
            .as_ref()
            .map(|ns| ns.iter().map(|n| pose.rotation * n).collect()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_angle_small_and_large() {
        let t = Vector3::zeros();
        let a = PoseParams::from_axis_angle(Vector3::new(1.0, 2.0, -0.5), 0.7, t);
        for angle in [0.0, 1e-9, 1e-5, 0.3, 3.0] {
            let b = PoseParams::from_axis_angle(Vector3::new(-0.3, 0.2, 1.0), angle, t).compose(&a);
            let got = a.rotation_angle_to(&b);
            assert!((got - angle).abs() < 1e-12, "{angle}: {got}");
        }
    }

    fn tiny_basis() -> MorphableBasis {
        MorphableBasis::new(
            DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
            DMatrix::from_column_slice(6, 1, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
            vec![],
            None,
        )
        .unwrap()
    }

    #[test]
    fn reconstruct_direct_matrix_product() {
        let b = tiny_basis();
        let m = reconstruct(&b, &ShapeCoefficients::predicted(DVector::from_vec(vec![2.0]))).unwrap();
        assert_eq!(
            m.vertices,
            vec![Vector3::new(2.0, 0.0, 0.0), Vector3::new(1.0, 2.0, 0.0)]
        );
    }

    #[test]
    fn zero_coefficients_give_mean_shape() {
        let b = tiny_basis();
        let m = reconstruct(&b, &ShapeCoefficients::zeros(1, CoeffRole::Predicted)).unwrap();
        assert_eq!(m, b.mean_mesh());
    }

    #[test]
    fn reconstruct_rejects_wrong_length() {
        let b = tiny_basis();
        let err = reconstruct(&b, &ShapeCoefficients::zeros(3, CoeffRole::Predicted)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('1') && msg.contains('3'), "{msg}");
    }

    #[test]
    fn basis_validation() {
        assert!(MorphableBasis::new(DVector::zeros(6), DMatrix::zeros(5, 1), vec![], None).is_err());
        assert!(MorphableBasis::new(DVector::zeros(6), DMatrix::zeros(6, 1), vec![[0, 1, 2]], None).is_err());
        assert!(MorphableBasis::new(DVector::zeros(6), DMatrix::zeros(6, 1), vec![], Some(vec![0; 5])).is_err());
    }

    #[test]
    fn pose_identity_and_axis_rotation() {
        let m = Mesh::new(vec![Vector3::new(1.0, 0.0, 0.0)], vec![]).unwrap();
        assert_eq!(apply_pose(&m, &PoseParams::identity()).unwrap(), m);
        let rz = PoseParams::from_axis_angle(Vector3::z(), std::f64::consts::FRAC_PI_2, Vector3::zeros());
        let out = apply_pose(&m, &rz).unwrap();
        assert!((out.vertices[0] - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn pose_composition_matches_successive_application() {
        let m = synthetic::SyntheticFace::default().build().unwrap().basis.mean_mesh();
        let p1 = PoseParams::from_axis_angle(Vector3::new(1.0, 2.0, 0.5), 0.3, Vector3::new(0.1, -2.0, 3.0));
        let p2 = PoseParams::from_axis_angle(Vector3::new(-0.2, 1.0, 1.0), -0.7, Vector3::new(5.0, 0.0, 1.0));
        let two = apply_pose(&apply_pose(&m, &p1).unwrap(), &p2).unwrap();
        let one = apply_pose(&m, &p2.compose(&p1)).unwrap();
        for (a, b) in two.vertices.iter().zip(&one.vertices) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn pose_rejects_non_rotation() {
        let scale = Matrix3::identity() * 1.01;
        assert!(matches!(
            PoseParams::new(scale, Vector3::zeros()),
            Err(Error::InvalidRotation(_))
        ));
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(PoseParams::new(reflect, Vector3::zeros()).is_err());
    }

    #[test]
    fn pose_text_roundtrip() {
        let p = PoseParams::from_axis_angle(Vector3::new(0.3, 1.0, 0.0), 0.4, Vector3::new(1.0, 2.0, 3.0));
        let q = PoseParams::parse(&p.to_text(), "pose").unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn submesh_keeps_inner_faces_and_normals() {
        let mut m = Mesh::new(
            vec![Vector3::zeros(), Vector3::x(), Vector3::y(), Vector3::z()],
            vec![[0, 1, 2], [1, 2, 3]],
        )
        .unwrap();
        m.normals = Some(vec![Vector3::z(); 4]);
        let s = m.submesh(&[1, 2, 3]).unwrap();
        assert_eq!(s.faces, vec![[0, 1, 2]]);
        assert_eq!(s.normals.unwrap().len(), 3);
    }
}
