//! Probabilistic knowledge transfer: cosine kernel, conditional probabilities
//! over a batch and the KL divergence between teacher and student.

use nalgebra::{DMatrix, DVector, RowDVector};

use super::LossValue;
use crate::error::{Error, Result};

/// Floor applied to student probabilities inside the log ratio.
pub const KD_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSource {
    Student,
    Expert,
}

/// B × ν features, one row per batch item.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    rows: DMatrix<f64>,
    norms: Vec<f64>,
    pub source: FeatureSource,
}

impl FeatureBatch {
    pub fn new(rows: DMatrix<f64>, source: FeatureSource) -> Result<Self> {
        if rows.nrows() == 0 || rows.ncols() == 0 {
            return Err(Error::InvalidArgument("empty feature batch".into()));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature batch".into()));
        }
        let norms: Vec<f64> = rows.row_iter().map(|r| r.norm()).collect();
        if let Some(i) = norms.iter().position(|&n| n == 0.0) {
            return Err(Error::Degenerate(format!("feature row {i} is all zeros")));
        }
        Ok(Self { rows, norms, source })
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn batch_size(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    fn kernel_matrix(&self) -> DMatrix<f64> {
        let b = self.batch_size();
        let gram = &self.rows * self.rows.transpose();
        DMatrix::from_fn(b, b, |i, j| {
            0.5 * (gram[(i, j)] / (self.norms[i] * self.norms[j]) + 1.0)
        })
    }
}

/// `½(cos(z_i, z_j) + 1)`, in `[0, 1]`.
pub fn cosine_kernel(zi: &DVector<f64>, zj: &DVector<f64>) -> Result<f64> {
    if zi.len() != zj.len() {
        return Err(Error::dim("cosine_kernel", zi.len(), zj.len()));
    }
    let (a, b) = (zi.norm(), zj.norm());
    if a == 0.0 || b == 0.0 {
        return Err(Error::Degenerate("cosine kernel of a zero vector".into()));
    }
    Ok((0.5 * (zi.dot(zj) / (a * b) + 1.0)).clamp(0.0, 1.0))
}

// d/da of ½(a·b / (|a||b|) + 1)
fn kernel_partial(a: &RowDVector<f64>, na: f64, b: &RowDVector<f64>, nb: f64) -> RowDVector<f64> {
    (b / (na * nb) - a * (a.dot(b) / (na * na * na * nb))) * 0.5
}

/// Kernel value with its gradients with respect to `zi` and `zj`.
pub fn cosine_kernel_grad(zi: &DVector<f64>, zj: &DVector<f64>) -> Result<(f64, DVector<f64>, DVector<f64>)> {
    let k = cosine_kernel(zi, zj)?;
    let (a, b) = (zi.transpose(), zj.transpose());
    let (na, nb) = (zi.norm(), zj.norm());
    Ok((
        k,
        kernel_partial(&a, na, &b, nb).transpose(),
        kernel_partial(&b, nb, &a, na).transpose(),
    ))
}

fn probs_from_kernel(k: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let b = k.nrows();
    let mut sums = vec![0.0; b];
    let mut p = DMatrix::<f64>::zeros(b, b);
    for j in 0..b {
        let s: f64 = (0..b).filter(|&i| i != j).map(|i| k[(i, j)]).sum();
        if !(s > 0.0) {
            return Err(Error::Degenerate(format!(
                "column {j} has no positive off-diagonal kernel value"
            )));
        }
        sums[j] = s;
        for i in (0..b).filter(|&i| i != j) {
            p[(i, j)] = k[(i, j)] / s;
        }
    }
    Ok((p, sums))
}

/// Matrix with `P[(i, j)] = K(z_i, z_j) / Σ_{k≠j} K(z_k, z_j)` off the
/// diagonal and 0 on it; every column sums to 1.
pub fn conditional_probs(batch: &FeatureBatch) -> Result<DMatrix<f64>> {
    if batch.batch_size() < 2 {
        return Err(Error::InvalidArgument(
            "conditional probabilities need a batch of at least 2".into(),
        ));
    }
    Ok(probs_from_kernel(&batch.kernel_matrix())?.0)
}

// dL/dK from dL/dP, column by column: P_kj = K_kj / S_j
fn probs_backward(k: &DMatrix<f64>, sums: &[f64], d_p: &DMatrix<f64>) -> DMatrix<f64> {
    let b = k.nrows();
    let mut g = DMatrix::<f64>::zeros(b, b);
    for j in 0..b {
        let s = sums[j];
        let through_sum: f64 = (0..b).filter(|&i| i != j).map(|i| d_p[(i, j)] * k[(i, j)]).sum::<f64>() / (s * s);
        for i in (0..b).filter(|&i| i != j) {
            g[(i, j)] = d_p[(i, j)] / s - through_sum;
        }
    }
    g
}

// dL/dZ from dL/dK, using the symmetry of the kernel
fn kernel_backward(batch: &FeatureBatch, g: &DMatrix<f64>) -> DMatrix<f64> {
    let b = batch.batch_size();
    let z = batch.rows();
    let mut grad = DMatrix::zeros(b, batch.dim());
    for m in 0..b {
        let a = z.row(m).into_owned();
        let mut acc = RowDVector::zeros(batch.dim());
        for n in (0..b).filter(|&n| n != m) {
            let w = g[(m, n)] + g[(n, m)];
            if w == 0.0 {
                continue;
            }
            acc += kernel_partial(&a, batch.norms[m], &z.row(n).into_owned(), batch.norms[n]) * w;
        }
        grad.set_row(m, &acc);
    }
    grad
}

/// Gradient of `Σ upstream ∘ P` with respect to the batch rows, where `P`
/// is [`conditional_probs`] of the batch.
pub fn conditional_probs_backward(batch: &FeatureBatch, upstream: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let b = batch.batch_size();
    if upstream.shape() != (b, b) {
        return Err(Error::dim(
            "conditional_probs_backward upstream rows",
            b,
            upstream.nrows(),
        ));
    }
    let k = batch.kernel_matrix();
    let (_, sums) = probs_from_kernel(&k)?;
    Ok(kernel_backward(batch, &probs_backward(&k, &sums, upstream)))
}

/// `Σ_i Σ_{j≠i} pE_{j|i} ln(pE_{j|i} / pS_{j|i})` with its gradient with
/// respect to the student rows under `"student"` (B × ν).
///
/// Expert features are constants. Student probabilities below
/// [`KD_EPSILON`] are floored, which sets `clamped` and zeroes that term's
/// gradient.
pub fn kd_divergence(expert: &FeatureBatch, student: &FeatureBatch) -> Result<LossValue> {
    let b = expert.batch_size();
    if student.batch_size() != b {
        return Err(Error::dim("kd_divergence batch", b, student.batch_size()));
    }
    let pe = conditional_probs(expert)?;
    let ks = student.kernel_matrix();
    let (ps, sums) = probs_from_kernel(&ks)?;

    let mut value = 0.0;
    let mut clamped = false;
    let mut d_p = DMatrix::<f64>::zeros(b, b);
    for i in 0..b {
        for j in (0..b).filter(|&j| j != i) {
            let (e, s) = (pe[(j, i)], ps[(j, i)]);
            if e <= 0.0 {
                continue;
            }
            if s < KD_EPSILON {
                clamped = true;
                value += e * (e / KD_EPSILON).ln();
                continue;
            }
            value += e * (e / s).ln();
            d_p[(j, i)] = -e / s;
        }
    }
    let grad = kernel_backward(student, &probs_backward(&ks, &sums, &d_p));

    Ok(LossValue {
        value: value.max(0.0),
        gradients: vec![("student", grad)],
        components: vec![("div", value.max(0.0))],
        clamped,
    })
}
