//! Point-to-plane ICP.
//!
//! Each iteration matches every (posed) source vertex to its nearest target
//! vertex, drops matches farther than `rejection_multiplier` times the median
//! match distance, and solves the linearised point-to-plane problem
//!
//! ```text
//! min over (w, u)  sum_i ((p_i + w x p_i + u - q_i) . n_i)^2
//! ```
//!
//! for a small rotation `w` and translation `u`. The increment is applied
//! through the exponential map and the rotation re-orthonormalised. A step is
//! only accepted if it does not raise the kept-correspondence RMSE (the step is
//! halved up to `MAX_HALVINGS` times), so the RMSE trace never increases.

use nalgebra::{Matrix3, Matrix6, Rotation3, Vector3, Vector6};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kdtree::KdTree;
use crate::error::{Error, Result};
use crate::morphable::{vertex_normals, Mesh, PoseParams};

const MIN_CORRESPONDENCES: usize = 6;
const MAX_HALVINGS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the RMSE by less than this.
    pub convergence_tol: f64,
    /// Matches farther than this multiple of the median match distance are dropped.
    pub rejection_multiplier: f64,
    /// Optional cap on source points; a seeded subset is drawn when exceeded.
    pub max_source_points: Option<usize>,
    pub seed: u64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            convergence_tol: 1e-7,
            rejection_multiplier: 3.0,
            max_source_points: None,
            seed: 0,
        }
    }
}

impl IcpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::InvalidArgument("icp max_iterations must be >= 1".into()));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::InvalidArgument("icp convergence_tol must be > 0".into()));
        }
        if !(self.rejection_multiplier > 0.0) {
            return Err(Error::InvalidArgument("icp rejection_multiplier must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    /// Pose taking source into the target frame.
    pub pose: PoseParams,
    pub rmse: f64,
    pub iterations: usize,
    /// RMSE at the initial pose followed by the RMSE after every accepted step.
    pub rmse_trace: Vec<f64>,
    pub correspondences: usize,
}

struct Matches {
    // (posed source point, target point, target normal)
    rows: Vec<(Vector3<f64>, Vector3<f64>, Vector3<f64>)>,
    rmse: f64,
}

struct Target<'a> {
    mesh: &'a Mesh,
    normals: &'a [Vector3<f64>],
    tree: KdTree,
}

impl Target<'_> {
    fn matches(&self, source: &[Vector3<f64>], pose: &PoseParams, mult: f64) -> Result<Matches> {
        let mut cand: Vec<(Vector3<f64>, usize, f64)> = source
            .iter()
            .map(|s| {
                let p = pose.transform_point(s);
                let (j, d2) = self.tree.nearest(&p).expect("target is non-empty");
                (p, j, d2.sqrt())
            })
            .collect();
        let mut dists: Vec<f64> = cand.iter().map(|c| c.2).collect();
        let mid = dists.len() / 2;
        let (_, median, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
        let threshold = mult * *median;
        cand.retain(|c| c.2 <= threshold);
        if cand.len() < MIN_CORRESPONDENCES {
            return Err(Error::Degenerate(format!(
                "only {} correspondences survive rejection; need at least {MIN_CORRESPONDENCES}",
                cand.len()
            )));
        }
        let rows: Vec<_> = cand
            .into_iter()
            .map(|(p, j, _)| (p, self.mesh.vertices[j], self.normals[j]))
            .collect();
        let sq: f64 = rows.iter().map(|(p, q, n)| ((p - q).dot(n)).powi(2)).sum();
        let rmse = (sq / rows.len() as f64).sqrt();
        Ok(Matches { rows, rmse })
    }
}

fn solve_increment(rows: &[(Vector3<f64>, Vector3<f64>, Vector3<f64>)]) -> Vector6<f64> {
    let mut ata = Matrix6::zeros();
    let mut atb = Vector6::zeros();
    for (p, q, n) in rows {
        let c = p.cross(n);
        let j = Vector6::new(c.x, c.y, c.z, n.x, n.y, n.z);
        let r = (p - q).dot(n);
        ata += j * j.transpose();
        atb -= j * r;
    }
    // Pseudo-inverse: directions the surface cannot constrain get no motion.
    let svd = ata.svd(true, true);
    let tol = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    svd.solve(&atb, tol).unwrap_or_else(|_| Vector6::zeros())
}

fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut out = u * vt;
    if out.determinant() < 0.0 {
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        out = u2 * vt;
    }
    out
}

fn apply_increment(pose: &PoseParams, step: &Vector6<f64>, scale: f64) -> Result<PoseParams> {
    let w = Vector3::new(step[0], step[1], step[2]) * scale;
    let u = Vector3::new(step[3], step[4], step[5]) * scale;
    let dr = *Rotation3::new(w).matrix();
    let r = orthonormalize(&(dr * pose.rotation()));
    PoseParams::new(r, dr * pose.translation() + u)
}

/// Registers `source` onto `target`. Target normals are computed when absent.
/// The initial pose aligns the two centroids.
pub fn icp_point_to_plane(source: &Mesh, target: &Mesh, cfg: &IcpConfig) -> Result<IcpResult> {
    cfg.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::Degenerate("icp needs non-empty source and target".into()));
    }
    let owned;
    let normals: &[Vector3<f64>] = match &target.normals {
        Some(ns) => ns,
        None => {
            owned = vertex_normals(target)?.normals.expect("normals populated");
            &owned
        }
    };
    let tgt = Target {
        mesh: target,
        normals,
        tree: KdTree::build(&target.vertices),
    };

    let src: Vec<Vector3<f64>> = match cfg.max_source_points {
        Some(cap) if cap < source.vertices.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut idx = sample(&mut rng, source.vertices.len(), cap).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| source.vertices[i]).collect()
        }
        _ => source.vertices.clone(),
    };

    let mut pose = PoseParams::new(Matrix3::identity(), target.centroid() - source.centroid())?;
    let mut current = tgt.matches(&src, &pose, cfg.rejection_multiplier)?;
    let mut trace = vec![current.rmse];
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        iterations += 1;
        let step = solve_increment(&current.rows);
        let mut accepted = None;
        let mut scale = 1.0;
        for _ in 0..=MAX_HALVINGS {
            let cand_pose = apply_increment(&pose, &step, scale)?;
            // a failed match set at a trial pose just means the step was too long
            if let Ok(cand) = tgt.matches(&src, &cand_pose, cfg.rejection_multiplier) {
                if cand.rmse <= current.rmse {
                    accepted = Some((cand_pose, cand));
                    break;
                }
            }
            scale *= 0.5;
        }
        let Some((new_pose, new_matches)) = accepted else {
            break;
        };
        let improvement = current.rmse - new_matches.rmse;
        pose = new_pose;
        current = new_matches;
        trace.push(current.rmse);
        if improvement < cfg.convergence_tol {
            break;
        }
    }

    Ok(IcpResult {
        pose,
        rmse: current.rmse,
        iterations,
        rmse_trace: trace,
        correspondences: current.rows.len(),
    })
}
