//! Seeded synthetic face model.
//!
//! The mean shape is a curved height field over a regular grid
//! (`x` in [-1, 1], `y` in [-1.2, 1.2]) with a nose ridge and eye sockets. Basis
//! columns are smooth random displacement fields (sums of Gaussian bumps),
//! orthogonalised and given a common norm. Landmarks follow the usual 68-point
//! layout (jaw 0-16, brows 17-26, nose 27-35, eyes 36-47, mouth 48-67) snapped
//! to distinct grid vertices; `x < 0` is the subject's right side.

use nalgebra::{DMatrix, DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{MorphableBasis, LANDMARK_COUNT};
use crate::error::{Error, Result};
use crate::metrics::RegionMap;

#[derive(Debug, Clone)]
pub struct SyntheticFace {
    pub cols: usize,
    pub rows: usize,
    pub coeff_count: usize,
    /// RMS per-coordinate displacement produced by a unit coefficient.
    pub deformation_scale: f64,
    pub bumps_per_column: usize,
    pub seed: u64,
}

impl Default for SyntheticFace {
    fn default() -> Self {
        Self {
            cols: 33,
            rows: 39,
            coeff_count: 10,
            deformation_scale: 0.03,
            bumps_per_column: 6,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticModel {
    pub basis: MorphableBasis,
    pub regions: RegionMap,
}

const X_HALF: f64 = 1.0;
const Y_HALF: f64 = 1.2;

/// Height of the neutral face surface above the xy-plane.
pub fn surface_height(x: f64, y: f64) -> f64 {
    let cap = 0.8 - 0.35 * x * x - 0.2 * y * y + 0.08 * x * x * y;
    let nose = 0.22 * (-(x * x) / 0.015 - (y + 0.05).powi(2) / 0.09).exp();
    let eye = |cx: f64| -0.06 * (-((x - cx).powi(2) + (y - 0.35).powi(2)) / 0.02).exp();
    cap + nose + eye(-0.45) + eye(0.45)
}

/// Canonical (x, y) positions of the 68 landmarks on the synthetic face.
pub fn canonical_landmark_xy() -> Vec<Vector2<f64>> {
    use std::f64::consts::PI;
    let mut pts = Vec::with_capacity(LANDMARK_COUNT);
    // jaw: half ellipse from the right temple, under the chin, to the left temple
    for k in 0..17 {
        let phi = PI + PI * k as f64 / 16.0;
        pts.push(Vector2::new(0.9 * phi.cos(), 0.1 + 1.0 * phi.sin()));
    }
    // brows
    for k in 0..5 {
        let x = -0.75 + 0.55 * k as f64 / 4.0;
        pts.push(Vector2::new(x, 0.6 + 0.08 * (1.0 - ((x + 0.475) / 0.275).powi(2))));
    }
    for k in 0..5 {
        let x = 0.2 + 0.55 * k as f64 / 4.0;
        pts.push(Vector2::new(x, 0.6 + 0.08 * (1.0 - ((x - 0.475) / 0.275).powi(2))));
    }
    // nose bridge then nostrils
    for k in 0..4 {
        pts.push(Vector2::new(0.0, 0.4 - 0.13 * k as f64));
    }
    for k in 0..5 {
        pts.push(Vector2::new(-0.2 + 0.1 * k as f64, -0.15));
    }
    // eyes: outer corner first for the right eye, inner corner first for the left
    for cx in [-0.45, 0.45] {
        for k in 0..6 {
            let a = PI - PI / 3.0 * k as f64;
            pts.push(Vector2::new(cx + 0.18 * a.cos(), 0.35 + 0.08 * a.sin()));
        }
    }
    // outer lip (12) then inner lip (8), starting at the right corner
    for k in 0..12 {
        let a = PI - 2.0 * PI * k as f64 / 12.0;
        pts.push(Vector2::new(0.35 * a.cos(), -0.5 + 0.16 * a.sin()));
    }
    for k in 0..8 {
        let a = PI - 2.0 * PI * k as f64 / 8.0;
        pts.push(Vector2::new(0.22 * a.cos(), -0.5 + 0.06 * a.sin()));
    }
    debug_assert_eq!(pts.len(), LANDMARK_COUNT);
    pts
}

impl SyntheticFace {
    pub fn build(&self) -> Result<SyntheticModel> {
        if self.cols < 8 || self.rows < 8 {
            return Err(Error::InvalidArgument(
                "synthetic grid needs at least 8x8 vertices".into(),
            ));
        }
        let n = self.cols * self.rows;
        if self.coeff_count > 3 * n {
            return Err(Error::InvalidArgument("more coefficients than shape dimensions".into()));
        }
        let xy: Vec<Vector2<f64>> = (0..self.rows)
            .flat_map(|r| {
                (0..self.cols).map(move |c| {
                    Vector2::new(
                        -X_HALF + 2.0 * X_HALF * c as f64 / (self.cols - 1) as f64,
                        -Y_HALF + 2.0 * Y_HALF * r as f64 / (self.rows - 1) as f64,
                    )
                })
            })
            .collect();
        let mean = DVector::from_iterator(3 * n, xy.iter().flat_map(|p| [p.x, p.y, surface_height(p.x, p.y)]));

        let mut faces = Vec::with_capacity(2 * (self.rows - 1) * (self.cols - 1));
        for r in 0..self.rows - 1 {
            for c in 0..self.cols - 1 {
                let v00 = r * self.cols + c;
                let v10 = v00 + 1;
                let v01 = v00 + self.cols;
                let v11 = v01 + 1;
                faces.push([v00, v10, v11]);
                faces.push([v00, v11, v01]);
            }
        }

        let landmarks = snap_landmarks(&xy)?;
        let basis = self.random_basis(&xy);
        let regions = default_regions(&xy)?;
        Ok(SyntheticModel {
            basis: MorphableBasis::new(mean, basis, faces, Some(landmarks))?,
            regions,
        })
    }

    fn random_basis(&self, xy: &[Vector2<f64>]) -> DMatrix<f64> {
        let n = xy.len();
        let p = self.coeff_count;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut raw = DMatrix::zeros(3 * n, p);
        for k in 0..p {
            for _ in 0..self.bumps_per_column {
                let c = Vector2::new(rng.random_range(-X_HALF..X_HALF), rng.random_range(-Y_HALF..Y_HALF));
                let w: f64 = rng.random_range(0.25..0.6);
                let amp: [f64; 3] = [
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                ];
                for (i, q) in xy.iter().enumerate() {
                    let g = (-(q - c).norm_squared() / (2.0 * w * w)).exp();
                    for d in 0..3 {
                        raw[(3 * i + d, k)] += amp[d] * g;
                    }
                }
            }
        }
        if p == 0 {
            return raw;
        }
        let q = raw.qr().q();
        q * (self.deformation_scale * ((3 * n) as f64).sqrt())
    }
}

fn snap_landmarks(xy: &[Vector2<f64>]) -> Result<Vec<usize>> {
    let mut taken = vec![false; xy.len()];
    let mut out = Vec::with_capacity(LANDMARK_COUNT);
    for target in canonical_landmark_xy() {
        let best = xy
            .iter()
            .enumerate()
            .filter(|(i, _)| !taken[*i])
            .min_by(|(_, a), (_, b)| (*a - target).norm_squared().total_cmp(&(*b - target).norm_squared()))
            .map(|(i, _)| i)
            .ok_or_else(|| Error::InvalidArgument("grid too small for 68 landmarks".into()))?;
        taken[best] = true;
        out.push(best);
    }
    Ok(out)
}

fn default_regions(xy: &[Vector2<f64>]) -> Result<RegionMap> {
    let select = |f: &dyn Fn(&Vector2<f64>) -> bool| -> Vec<usize> {
        xy.iter().enumerate().filter(|(_, p)| f(p)).map(|(i, _)| i).collect()
    };
    let ellipse = |cx: f64, cy: f64, rx: f64, ry: f64| {
        move |p: &Vector2<f64>| ((p.x - cx) / rx).powi(2) + ((p.y - cy) / ry).powi(2) <= 1.0
    };
    RegionMap::new(
        select(&ellipse(0.45, 0.35, 0.28, 0.18)),
        select(&ellipse(-0.45, 0.35, 0.28, 0.18)),
        select(&|p| p.x.abs() <= 0.22 && p.y >= -0.2 && p.y <= 0.45),
        select(&ellipse(0.0, -0.5, 0.42, 0.22)),
        select(&ellipse(0.62, -0.15, 0.26, 0.3)),
        select(&ellipse(-0.62, -0.15, 0.26, 0.3)),
        xy.len(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_model_is_valid() {
        let m = SyntheticFace::default().build().unwrap();
        let b = &m.basis;
        assert_eq!(b.vertex_count(), 33 * 39);
        let lms = b.landmark_indices().unwrap();
        let mut sorted = lms.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 68, "landmarks must be distinct");
        // columns are orthogonal with a common norm
        let gram = b.basis().transpose() * b.basis();
        let d = gram[(0, 0)];
        for i in 0..gram.nrows() {
            for j in 0..gram.ncols() {
                let expect = if i == j { d } else { 0.0 };
                assert!((gram[(i, j)] - expect).abs() < 1e-9 * d);
            }
        }
        for (name, set) in m.regions.iter() {
            assert!(set.len() >= 6, "{name} has {} vertices", set.len());
        }
    }

    #[test]
    fn same_seed_same_model() {
        let a = SyntheticFace::default().build().unwrap();
        let b = SyntheticFace::default().build().unwrap();
        assert_eq!(a.basis, b.basis);
        let c = SyntheticFace {
            seed: 8,
            ..Default::default()
        }
        .build()
        .unwrap();
        assert_ne!(a.basis.basis(), c.basis.basis());
    }
}
