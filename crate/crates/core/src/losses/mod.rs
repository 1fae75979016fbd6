//! Training losses with analytic gradients.
//!
//! Every loss returns a [`LossValue`]: the scalar, a named gradient per
//! differentiable input and a per-component breakdown. Coefficient vectors are
//! plain `DVector`s (the `values` of a `ShapeCoefficients`); vector gradients
//! are stored as single-column matrices.

mod pkt;

pub use pkt::{
    conditional_probs, conditional_probs_backward, cosine_kernel, cosine_kernel_grad, kd_divergence, FeatureBatch,
    FeatureSource, KD_EPSILON,
};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Triplet margin, fixed at 1.
pub const TRIPLET_MARGIN: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    /// Gradient of `value` with respect to each named input.
    pub gradients: Vec<(&'static str, DMatrix<f64>)>,
    /// Named parts summing to `value` (a single entry for atomic losses).
    pub components: Vec<(&'static str, f64)>,
    /// Set when an epsilon floor changed the result.
    pub clamped: bool,
}

impl LossValue {
    fn atomic(name: &'static str, value: f64, gradients: Vec<(&'static str, DMatrix<f64>)>) -> Self {
        Self {
            value,
            gradients,
            components: vec![(name, value)],
            clamped: false,
        }
    }

    pub fn gradient(&self, input: &str) -> Option<&DMatrix<f64>> {
        self.gradients.iter().find(|(n, _)| *n == input).map(|(_, g)| g)
    }

    /// Gradient flattened column-major into a vector.
    pub fn gradient_vec(&self, input: &str) -> Option<DVector<f64>> {
        self.gradient(input).map(|g| DVector::from_column_slice(g.as_slice()))
    }

    pub fn component(&self, name: &str) -> Option<f64> {
        self.components.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }

    /// Weighted sum of losses. Gradients with the same input name are added;
    /// components are kept under `names`.
    pub fn combine(parts: &[(&'static str, f64, &LossValue)]) -> Result<Self> {
        let mut out = LossValue {
            value: 0.0,
            gradients: Vec::new(),
            components: Vec::new(),
            clamped: false,
        };
        for &(name, w, part) in parts {
            out.value += w * part.value;
            out.components.push((name, w * part.value));
            out.clamped |= part.clamped;
            for (input, g) in &part.gradients {
                match out.gradients.iter_mut().find(|(n, _)| n == input) {
                    Some((_, acc)) => {
                        if acc.shape() != g.shape() {
                            return Err(Error::dim(format!("gradient {input}"), acc.len(), g.len()));
                        }
                        *acc += g * w;
                    }
                    None => out.gradients.push((input, g * w)),
                }
            }
        }
        Ok(out)
    }
}

fn check_len(what: &str, a: &DVector<f64>, b: &DVector<f64>) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::dim(what, a.len(), b.len()));
    }
    Ok(())
}

fn col(v: DVector<f64>) -> DMatrix<f64> {
    let n = v.len();
    DMatrix::from_vec(n, 1, v.data.into())
}

/// `‖α − α*‖²`, gradient `2(α − α*)` under `"alpha"`.
pub fn reg_loss(alpha: &DVector<f64>, target: &DVector<f64>) -> Result<LossValue> {
    check_len("reg_loss", target, alpha)?;
    let d = alpha - target;
    Ok(LossValue::atomic(
        "reg",
        d.norm_squared(),
        vec![("alpha", col(d * 2.0))],
    ))
}

/// Pseudo-groundtruth loss `‖α^E − α‖²`; same form as [`reg_loss`].
pub fn pgt_loss(expert_alpha: &DVector<f64>, alpha: &DVector<f64>) -> Result<LossValue> {
    let mut l = reg_loss(alpha, expert_alpha)?;
    l.components = vec![("pgt", l.value)];
    Ok(l)
}

/// `max{‖α − α_p‖ − ‖α − α_n‖ + 1, 0}` with gradients for `"anchor"`,
/// `"positive"` and `"negative"`.
///
/// At the kink (hinge argument exactly 0) the zero branch is taken. A zero
/// distance contributes a zero subgradient for its term.
pub fn triplet_loss(anchor: &DVector<f64>, positive: &DVector<f64>, negative: &DVector<f64>) -> Result<LossValue> {
    check_len("triplet_loss positive", anchor, positive)?;
    check_len("triplet_loss negative", anchor, negative)?;
    let dp = anchor - positive;
    let dn = anchor - negative;
    let (np, nn) = (dp.norm(), dn.norm());
    let arg = np - nn + TRIPLET_MARGIN;
    let p = anchor.len();
    if arg <= 0.0 {
        return Ok(LossValue::atomic(
            "tri",
            0.0,
            vec![
                ("anchor", DMatrix::zeros(p, 1)),
                ("positive", DMatrix::zeros(p, 1)),
                ("negative", DMatrix::zeros(p, 1)),
            ],
        ));
    }
    let up = if np > 0.0 { dp / np } else { DVector::zeros(p) };
    let un = if nn > 0.0 { dn / nn } else { DVector::zeros(p) };
    Ok(LossValue::atomic(
        "tri",
        arg,
        vec![
            ("anchor", col(&up - &un)),
            ("positive", col(-up)),
            ("negative", col(un)),
        ],
    ))
}

/// Discriminator and classifier outputs for a batch of generated or real
/// images.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsBatch {
    pub disc_logits: DVector<f64>,
    /// B × C
    pub class_logits: DMatrix<f64>,
    pub labels: Vec<usize>,
}

impl LogitsBatch {
    pub fn new(disc_logits: DVector<f64>, class_logits: DMatrix<f64>, labels: Vec<usize>) -> Result<Self> {
        let b = disc_logits.len();
        if b == 0 {
            return Err(Error::InvalidArgument("empty logits batch".into()));
        }
        if class_logits.nrows() != b {
            return Err(Error::dim("class_logits rows", b, class_logits.nrows()));
        }
        if labels.len() != b {
            return Err(Error::dim("labels", b, labels.len()));
        }
        let c = class_logits.ncols();
        if let Some(bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        if disc_logits.iter().chain(class_logits.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("logits".into()));
        }
        Ok(Self {
            disc_logits,
            class_logits,
            labels,
        })
    }
}

/// Target of the discriminator term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Realness {
    Real,
    Fake,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `L_d + L_c`: binary cross-entropy of the discriminator logits against
/// `target` plus categorical cross-entropy of the class logits, each averaged
/// over the batch. Gradients under `"disc_logits"` (B × 1) and `"class_logits"`.
pub fn gan_loss(batch: &LogitsBatch, target: Realness) -> LossValue {
    let b = batch.disc_logits.len() as f64;
    let y = match target {
        Realness::Real => 1.0,
        Realness::Fake => 0.0,
    };
    let mut ld = 0.0;
    let gd = batch.disc_logits.map(|x| {
        // -[y ln σ(x) + (1-y) ln(1-σ(x))]
        ld += y * softplus(-x) + (1.0 - y) * softplus(x);
        (sigmoid(x) - y) / b
    });
    let mut lc = 0.0;
    let mut gc = DMatrix::zeros(batch.class_logits.nrows(), batch.class_logits.ncols());
    for (i, row) in batch.class_logits.row_iter().enumerate() {
        let m = row.max();
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        lc += lse - row[batch.labels[i]];
        for (k, v) in row.iter().enumerate() {
            gc[(i, k)] = (v - lse).exp() / b;
        }
        gc[(i, batch.labels[i])] -= 1.0 / b;
    }
    let (ld, lc) = (ld / b, lc / b);
    LossValue {
        value: ld + lc,
        gradients: vec![("disc_logits", col(gd)), ("class_logits", gc)],
        components: vec![("disc", ld), ("class", lc)],
        clamped: false,
    }
}

/// `L_r`: real images scored against the real label.
pub fn gan_real_loss(batch: &LogitsBatch) -> LossValue {
    gan_loss(batch, Realness::Real)
}

/// `L_f`: generated images scored against the fake label.
pub fn gan_fake_loss(batch: &LogitsBatch) -> LossValue {
    gan_loss(batch, Realness::Fake)
}

/// `L_KD = L_pgt + L_div`. Gradients under `"alpha"` and `"student"`.
pub fn kd_loss(
    expert_alpha: &DVector<f64>,
    alpha: &DVector<f64>,
    expert: &FeatureBatch,
    student: &FeatureBatch,
) -> Result<LossValue> {
    let pgt = pgt_loss(expert_alpha, alpha)?;
    let div = kd_divergence(expert, student)?;
    LossValue::combine(&[("pgt", 1.0, &pgt), ("div", 1.0, &div)])
}

/// `L_sup = L_reg + L_tri` with α as the triplet anchor.
pub fn supervised_loss(
    alpha: &DVector<f64>,
    target: &DVector<f64>,
    positive: &DVector<f64>,
    negative: &DVector<f64>,
) -> Result<LossValue> {
    let reg = reg_loss(alpha, target)?;
    let mut tri = triplet_loss(alpha, positive, negative)?;
    // the anchor is α itself
    for g in &mut tri.gradients {
        if g.0 == "anchor" {
            g.0 = "alpha";
        }
    }
    LossValue::combine(&[("reg", 1.0, &reg), ("tri", 1.0, &tri)])
}

/// The four terms of the unsupervised objective.
#[derive(Debug, Clone, Copy)]
pub struct UnsupervisedTerms<'a> {
    pub fake: &'a LossValue,
    pub real: &'a LossValue,
    pub kd: &'a LossValue,
    pub triplet: &'a LossValue,
}

/// Optional term weights; all 1 reproduces the unweighted objective.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct UnsupervisedWeights {
    pub fake: f64,
    pub real: f64,
    pub kd: f64,
    pub triplet: f64,
}

impl Default for UnsupervisedWeights {
    fn default() -> Self {
        Self {
            fake: 1.0,
            real: 1.0,
            kd: 1.0,
            triplet: 1.0,
        }
    }
}

/// `L_unsuper = L_f + L_r + L_KD + L_tri` (weighted if `weights` says so).
pub fn unsupervised_loss(terms: UnsupervisedTerms<'_>, weights: &UnsupervisedWeights) -> Result<LossValue> {
    LossValue::combine(&[
        ("fake", weights.fake, terms.fake),
        ("real", weights.real, terms.real),
        ("kd", weights.kd, terms.kd),
        ("tri", weights.triplet, terms.triplet),
    ])
}
