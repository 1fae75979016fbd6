//! Desk-scale training loops for the supervised decoder and the distilled
//! student.

use std::path::Path;

use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step_lr, AdamState};
use super::data::SyntheticDataset;
use super::mlp::{Activation, Layer, MlpModel};
use crate::error::{read_to_string, write_string, Error, Result};
use crate::losses::{kd_divergence, pgt_loss, reg_loss, triplet_loss, FeatureBatch, FeatureSource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub triplet_weight: f64,
    /// Weight of the divergence term in distillation.
    pub div_weight: f64,
    /// The learning rate decays linearly to `learning_rate * final_lr_fraction`
    /// at the last step; 1 keeps it constant.
    pub final_lr_fraction: f64,
    /// Emit an info log line every this many steps (0 disables).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            batch_size: 64,
            steps: 2000,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            triplet_weight: 1.0,
            div_weight: 1.0,
            final_lr_fraction: 1.0,
            log_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("train config: {what}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be > 0");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be > 0");
        }
        if !(self.triplet_weight >= 0.0 && self.div_weight >= 0.0) {
            return bad("loss weights must be >= 0");
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return bad("final_lr_fraction must lie in (0, 1]");
        }
        Ok(())
    }

    fn lr_at(&self, step: usize) -> f64 {
        if self.steps <= 1 {
            return self.learning_rate;
        }
        let t = step as f64 / (self.steps - 1) as f64;
        self.learning_rate * (1.0 - t * (1.0 - self.final_lr_fraction))
    }
}

/// Hidden widths and activation; input and output widths come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            activation: Activation::Relu,
        }
    }
}

impl ModelConfig {
    pub fn build(&self, input: usize, output: usize, seed: u64) -> Result<MlpModel> {
        let mut sizes = vec![input];
        sizes.extend(&self.hidden);
        sizes.push(output);
        MlpModel::new(&sizes, self.activation, seed)
    }
}

/// Per-step loss rows, written as TSV with a `step` column first.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub columns: Vec<String>,
    pub rows: Vec<(usize, Vec<f64>)>,
}

impl TrainLog {
    fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.columns.iter().position(|x| x == name)?;
        Some(self.rows.iter().map(|r| r.1[c]).collect())
    }

    pub fn to_tsv(&self) -> String {
        let mut s = format!("step\t{}\n", self.columns.join("\t"));
        for (step, vals) in &self.rows {
            s.push_str(&step.to_string());
            for v in vals {
                s.push('\t');
                s.push_str(&v.to_string());
            }
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, head) = lines.next().ok_or_else(|| Error::parse(origin, 1, "empty log"))?;
        let mut cols = head.split('\t');
        if cols.next() != Some("step") {
            return Err(Error::parse(origin, 1, "first column must be `step`"));
        }
        let columns: Vec<String> = cols.map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, line) in lines {
            let cells: Vec<&str> = line.split('\t').collect();
            if cells.len() != columns.len() + 1 {
                return Err(Error::parse(
                    origin,
                    i + 1,
                    format!("expected {} cells", columns.len() + 1),
                ));
            }
            let step = cells[0].parse().map_err(|_| Error::parse(origin, i + 1, "bad step"))?;
            let vals = cells[1..]
                .iter()
                .map(|c| {
                    c.parse::<f64>()
                        .map_err(|_| Error::parse(origin, i + 1, format!("not a number: {c:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push((step, vals));
        }
        Ok(Self { columns, rows })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_string(path, &self.to_tsv())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, &path.display().to_string())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub log: TrainLog,
}

fn add_into(acc: &mut [Layer], g: &[Layer]) {
    for (a, b) in acc.iter_mut().zip(g) {
        a.weight += &b.weight;
        a.bias += &b.bias;
    }
}

/// Positive: another sample of the same identity. Negative: a sample of a
/// uniformly chosen other identity. Both uniform.
fn sample_triplets(
    data: &SyntheticDataset,
    batch: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let k = data.identity_count();
    let mut a = Vec::with_capacity(batch);
    let mut p = Vec::with_capacity(batch);
    let mut n = Vec::with_capacity(batch);
    for _ in 0..batch {
        let i = rng.random_range(0..data.len());
        let id = data.samples[i].identity;
        let own = data.samples_of(id);
        let pos_self = own
            .iter()
            .position(|&s| s == i)
            .expect("sample listed under its identity");
        let mut r = rng.random_range(0..own.len() - 1);
        if r >= pos_self {
            r += 1;
        }
        let mut other = rng.random_range(0..k - 1);
        if other >= id {
            other += 1;
        }
        let theirs = data.samples_of(other);
        a.push(i);
        p.push(own[r]);
        n.push(theirs[rng.random_range(0..theirs.len())]);
    }
    (a, p, n)
}

// m[i, :] += s * g  (g is a column gradient)
fn add_row(m: &mut DMatrix<f64>, i: usize, g: &DMatrix<f64>, s: f64) {
    for (k, v) in g.iter().enumerate() {
        m[(i, k)] += s * v;
    }
}

fn row(m: &DMatrix<f64>, i: usize) -> DVector<f64> {
    m.row(i).transpose()
}

/// Trains `φ_dec` on `L_reg + w·L_tri`, averaged over each batch.
/// Gradients flow through the anchor, positive and negative branches.
pub fn train_supervised(data: &SyntheticDataset, arch: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let model = arch.build(data.embed_dim(), data.coeff_dim(), cfg.seed)?;
    train_supervised_from(model, data, cfg)
}

pub fn train_supervised_from(mut model: MlpModel, data: &SyntheticDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    data.validate_for_triplets()?;
    if model.input_dim() != data.embed_dim() || model.output_dim() != data.coeff_dim() {
        return Err(Error::dim("model output", data.coeff_dim(), model.output_dim()));
    }
    // separate streams so model init and batch sampling don't interact
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_ba7c);
    let mut adam = AdamState::new(&model);
    let mut log = TrainLog::new(&["total", "reg", "tri"]);
    let b = cfg.batch_size;
    let scale = 1.0 / b as f64;
    for step in 0..cfg.steps {
        let (ia, ip, ineg) = sample_triplets(data, b, &mut rng);
        let fa = model.forward(&data.embedding_rows(&ia))?;
        let fp = model.forward(&data.embedding_rows(&ip))?;
        let fnn = model.forward(&data.embedding_rows(&ineg))?;
        let targets = data.coefficient_rows(&ia);
        let p = data.coeff_dim();
        let (mut ga, mut gp, mut gn) = (DMatrix::zeros(b, p), DMatrix::zeros(b, p), DMatrix::zeros(b, p));
        let (mut reg_sum, mut tri_sum) = (0.0, 0.0);
        for i in 0..b {
            let alpha = row(&fa.output, i);
            let reg = reg_loss(&alpha, &row(&targets, i))?;
            let tri = triplet_loss(&alpha, &row(&fp.output, i), &row(&fnn.output, i))?;
            reg_sum += reg.value;
            tri_sum += tri.value;
            let w = cfg.triplet_weight;
            let g_reg = reg.gradient("alpha").expect("reg gradient");
            let g_anchor = tri.gradient("anchor").expect("anchor gradient");
            add_row(&mut ga, i, g_reg, scale);
            add_row(&mut ga, i, g_anchor, w * scale);
            add_row(
                &mut gp,
                i,
                tri.gradient("positive").expect("positive gradient"),
                w * scale,
            );
            add_row(
                &mut gn,
                i,
                tri.gradient("negative").expect("negative gradient"),
                w * scale,
            );
        }
        let mut grads = model.backward(&fa, &ga, None)?;
        if cfg.triplet_weight > 0.0 {
            add_into(&mut grads, &model.backward(&fp, &gp, None)?);
            add_into(&mut grads, &model.backward(&fnn, &gn, None)?);
        }
        let (reg_mean, tri_mean) = (reg_sum * scale, tri_sum * scale);
        let total = reg_mean + cfg.triplet_weight * tri_mean;
        log.rows.push((step, vec![total, reg_mean, tri_mean]));
        if cfg.log_every > 0 && step % cfg.log_every == 0 {
            info!("supervised step {step}: total {total:.6} reg {reg_mean:.6} tri {tri_mean:.6}");
        }
        adam_step_lr(&mut model, &grads, &mut adam, cfg, cfg.lr_at(step))?;
    }
    debug!("supervised training finished after {} steps", cfg.steps);
    Ok(TrainOutcome { model, log })
}

/// Trains a student against a frozen expert with
/// `L_pgt + w_div·L_div + w_tri·L_tri`. The expert maps each embedding to
/// `(α^E, z^E)`; its feature tap must have the student's feature width.
/// Only the embeddings and identity labels of `data` are used.
pub fn train_distilled(
    expert: &MlpModel,
    data: &SyntheticDataset,
    arch: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let student = arch.build(data.embed_dim(), expert.output_dim(), cfg.seed)?;
    train_distilled_from(student, expert, data, cfg)
}

pub fn train_distilled_from(
    mut model: MlpModel,
    expert: &MlpModel,
    data: &SyntheticDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.triplet_weight > 0.0 {
        data.validate_for_triplets()?;
    }
    if model.feature_dim() != expert.feature_dim() {
        return Err(Error::dim(
            "student feature width (must equal the expert's)",
            expert.feature_dim(),
            model.feature_dim(),
        ));
    }
    if model.output_dim() != expert.output_dim() || model.input_dim() != expert.input_dim() {
        return Err(Error::dim(
            "student output width",
            expert.output_dim(),
            model.output_dim(),
        ));
    }
    if cfg.batch_size < 2 {
        return Err(Error::InvalidArgument("distillation needs batch_size >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xd157_111e);
    let mut adam = AdamState::new(&model);
    let mut log = TrainLog::new(&["total", "pgt", "div", "tri"]);
    let b = cfg.batch_size;
    let scale = 1.0 / b as f64;
    let p = model.output_dim();
    for step in 0..cfg.steps {
        let (ia, ip, ineg) = if cfg.triplet_weight > 0.0 {
            sample_triplets(data, b, &mut rng)
        } else {
            (
                (0..b).map(|_| rng.random_range(0..data.len())).collect(),
                vec![],
                vec![],
            )
        };
        let xa = data.embedding_rows(&ia);
        let ef = expert.forward(&xa)?;
        let fa = model.forward(&xa)?;

        let mut ga = DMatrix::zeros(b, p);
        let mut pgt_sum = 0.0;
        for i in 0..b {
            let l = pgt_loss(&row(&ef.output, i), &row(&fa.output, i))?;
            pgt_sum += l.value;
            add_row(&mut ga, i, l.gradient("alpha").expect("pgt gradient"), scale);
        }

        let zf = FeatureBatch::new(ef.features().clone(), FeatureSource::Expert)?;
        let zs = FeatureBatch::new(fa.features().clone(), FeatureSource::Student)?;
        let div = kd_divergence(&zf, &zs)?;
        let gz = div.gradient("student").expect("div gradient") * cfg.div_weight;

        let mut tri_mean = 0.0;
        let mut grads;
        if cfg.triplet_weight > 0.0 {
            let fp = model.forward(&data.embedding_rows(&ip))?;
            let fnn = model.forward(&data.embedding_rows(&ineg))?;
            let (mut gp, mut gn) = (DMatrix::zeros(b, p), DMatrix::zeros(b, p));
            let w = cfg.triplet_weight * scale;
            for i in 0..b {
                let alpha = row(&fa.output, i);
                let tri = triplet_loss(&alpha, &row(&fp.output, i), &row(&fnn.output, i))?;
                tri_mean += tri.value * scale;
                add_row(&mut ga, i, tri.gradient("anchor").expect("anchor gradient"), w);
                add_row(&mut gp, i, tri.gradient("positive").expect("positive gradient"), w);
                add_row(&mut gn, i, tri.gradient("negative").expect("negative gradient"), w);
            }
            grads = model.backward(&fa, &ga, Some(&gz))?;
            add_into(&mut grads, &model.backward(&fp, &gp, None)?);
            add_into(&mut grads, &model.backward(&fnn, &gn, None)?);
        } else {
            grads = model.backward(&fa, &ga, Some(&gz))?;
        }

        let pgt_mean = pgt_sum * scale;
        let total = pgt_mean + cfg.div_weight * div.value + cfg.triplet_weight * tri_mean;
        log.rows.push((step, vec![total, pgt_mean, div.value, tri_mean]));
        if cfg.log_every > 0 && step % cfg.log_every == 0 {
            info!(
                "distill step {step}: total {total:.6} pgt {pgt_mean:.6} div {:.6} tri {tri_mean:.6}",
                div.value
            );
        }
        adam_step_lr(&mut model, &grads, &mut adam, cfg, cfg.lr_at(step))?;
    }
    Ok(TrainOutcome { model, log })
}

/// Root-mean-square difference between two models' outputs on `x`.
pub fn output_rms(a: &MlpModel, b: &MlpModel, x: &DMatrix<f64>) -> Result<f64> {
    let (ya, yb) = (a.predict(x)?, b.predict(x)?);
    Ok(((ya - yb).norm_squared() / x.nrows().max(1) as f64 / a.output_dim() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitting::ridge_solve;
    use crate::nnkit::data::SyntheticSpec;

    fn small_data(seed: u64) -> SyntheticDataset {
        SyntheticSpec {
            identities: 12,
            utterances: 3,
            embed_dim: 8,
            coeff_count: 4,
            seed,
            ..Default::default()
        }
        .generate()
        .unwrap()
    }

    fn quick(steps: usize) -> TrainConfig {
        TrainConfig {
            steps,
            batch_size: 16,
            learning_rate: 1e-3,
            ..Default::default()
        }
    }

    #[test]
    fn supervised_is_deterministic_and_descends() {
        let data = small_data(1);
        let arch = ModelConfig {
            hidden: vec![16],
            activation: Activation::Relu,
        };
        let a = train_supervised(&data, &arch, &quick(400)).unwrap();
        let b = train_supervised(&data, &arch, &quick(400)).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.model, b.model);
        let total = a.log.column("total").unwrap();
        let head: f64 = total[..40].iter().sum::<f64>() / 40.0;
        let tail: f64 = total[360..].iter().sum::<f64>() / 40.0;
        assert!(tail < head, "{head} -> {tail}");
    }

    #[test]
    fn supervised_rejects_bad_data() {
        let data = SyntheticSpec {
            identities: 4,
            utterances: 1,
            ..Default::default()
        }
        .generate()
        .unwrap();
        assert!(train_supervised(&data, &ModelConfig::default(), &quick(1)).is_err());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(train_supervised(&small_data(0), &ModelConfig::default(), &bad).is_err());
    }

    #[test]
    fn linear_model_reaches_least_squares() {
        // zero-noise linear data, triplet off: the optimum is the normal-equation solution
        let data = SyntheticSpec {
            identities: 40,
            utterances: 2,
            embed_dim: 8,
            coeff_count: 3,
            embed_noise: 0.0,
            seed: 5,
            ..Default::default()
        }
        .generate()
        .unwrap();
        let cfg = TrainConfig {
            steps: 3000,
            batch_size: 32,
            learning_rate: 1e-2,
            final_lr_fraction: 0.01,
            triplet_weight: 0.0,
            ..Default::default()
        };
        let arch = ModelConfig {
            hidden: vec![],
            activation: Activation::Identity,
        };
        let out = train_supervised(&data, &arch, &cfg).unwrap();

        let idx: Vec<usize> = (0..data.len()).collect();
        let x = data.embedding_rows(&idx);
        let design = DMatrix::from_fn(
            x.nrows(),
            x.ncols() + 1,
            |r, c| if c < x.ncols() { x[(r, c)] } else { 1.0 },
        );
        let sol = ridge_solve(&design, &data.coefficient_rows(&idx), 0.0).unwrap();
        let layer = &out.model.layers()[0];
        let mut sq = 0.0;
        for o in 0..3 {
            for i in 0..8 {
                sq += (layer.weight[(o, i)] - sol[(i, o)]).powi(2);
            }
            sq += (layer.bias[o] - sol[(8, o)]).powi(2);
        }
        let rms = (sq / 27.0).sqrt();
        assert!(rms < 1e-2, "{rms}");
    }

    fn linear_expert(d: usize, nu: usize, p: usize, seed: u64) -> MlpModel {
        MlpModel::new(&[d, nu, p], Activation::Identity, seed).unwrap()
    }

    #[test]
    fn student_equal_to_expert_has_zero_kd_loss() {
        let data = small_data(2);
        let expert = linear_expert(8, 5, 4, 9);
        let cfg = TrainConfig { steps: 1, ..quick(1) };
        let out = train_distilled_from(expert.clone(), &expert, &data, &cfg).unwrap();
        let pgt = out.log.column("pgt").unwrap()[0];
        let div = out.log.column("div").unwrap()[0];
        assert!(pgt + div < 1e-12, "{pgt} {div}");
    }

    #[test]
    fn feature_width_mismatch_is_error() {
        let data = small_data(3);
        let expert = linear_expert(8, 5, 4, 1);
        let arch = ModelConfig {
            hidden: vec![6],
            activation: Activation::Identity,
        };
        let err = train_distilled(&expert, &data, &arch, &quick(1)).unwrap_err();
        assert!(err.to_string().contains("feature width"), "{err}");
    }

    #[test]
    fn distillation_lowers_divergence() {
        let data = small_data(4);
        let expert = linear_expert(8, 5, 4, 11);
        let arch = ModelConfig {
            hidden: vec![5],
            activation: Activation::Identity,
        };
        let out = train_distilled(&expert, &data, &arch, &quick(600)).unwrap();
        let div = out.log.column("div").unwrap();
        let head: f64 = div[..30].iter().sum::<f64>() / 30.0;
        let tail: f64 = div[570..].iter().sum::<f64>() / 30.0;
        assert!(tail < head, "{head} -> {tail}");
    }

    #[test]
    fn log_roundtrip() {
        let out = train_supervised(
            &small_data(5),
            &ModelConfig {
                hidden: vec![4],
                activation: Activation::Relu,
            },
            &quick(5),
        )
        .unwrap();
        assert_eq!(TrainLog::parse(&out.log.to_tsv(), "log").unwrap(), out.log);
        assert!(TrainLog::parse("total\n1\n", "log").is_err());
    }
}
