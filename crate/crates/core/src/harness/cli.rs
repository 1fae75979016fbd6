//! Command-line front end.
//!
//! Every subcommand prints its results as `key=value` lines on stdout.
//! Exit status: 0 success, 1 usage error, 2 data error, 3 numerical failure.
//!
//! `--config FILE` reads TOML with any of these optional tables, each field
//! optional and overridable by the matching flag:
//!
//! ```toml
//! [train]   # learning_rate, batch_size, steps, beta1, beta2, epsilon, seed,
//!           # triplet_weight, div_weight, final_lr_fraction, log_every
//! [model]   # hidden = [128, 128], activation = "relu" | "identity"
//! [icp]     # max_iterations, convergence_tol, rejection_multiplier, max_source_points, seed
//! [mel]     # window, hop (seconds), n_mels, n_fft
//! [synth]   # identities, utterances, embed_dim, coeff_count, embed_noise,
//!           # coeff_noise, gender_shift, seed
//! [fit]     # ridge_lambda
//! ```

use std::ffi::OsString;
use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use super::evaluate::{evaluate, CoefficientTable};
use super::manifest::{split_manifest, DatasetManifest, ManifestEntry};
use super::oracle::{fit_oracle, OracleKind};
use super::{significance_test, PreferenceTally};
use crate::audio::{melspectrogram, normalize_per_bin, MelConfig, Waveform};
use crate::error::{read_to_string, write_string, Error, Result};
use crate::fitting::{fit_report, FitConfig, LandmarkSet};
use crate::metrics::{icp_point_to_plane, IcpConfig, RatioSpec, RegionMap};
use crate::morphable::synthetic::SyntheticFace;
use crate::morphable::{
    apply_pose, load_basis, load_coefficients, load_obj, reconstruct, save_basis, save_coefficients, save_obj,
    CoeffRole, PoseParams, ShapeCoefficients,
};
use crate::nnkit::{
    train_distilled, train_supervised, Activation, Layer, MlpModel, ModelConfig, SyntheticDataset, SyntheticSpec,
    TrainConfig,
};

/// Width of the synthetic expert's feature layer.
const EXPERT_FEATURES: usize = 16;

#[derive(Debug, Parser)]
#[command(
    name = "facegeo",
    version,
    about = "Face geometry toolkit: morphable models, metrics and toy training"
)]
struct Cli {
    /// TOML config file with [train], [model], [icp], [mel], [synth], [fit] tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a mesh from a basis and coefficients.
    Reconstruct {
        #[arg(long)]
        basis: PathBuf,
        /// One coefficient per line.
        #[arg(long)]
        coeffs: PathBuf,
        /// Optional rigid pose (rotation rows then translation).
        #[arg(long)]
        pose: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a rigid pose to a mesh, or estimate one by registering onto a target.
    Pose {
        #[arg(long)]
        mesh: PathBuf,
        /// Pose file to apply; the posed mesh goes to --out.
        #[arg(long, conflicts_with = "target", required_unless_present = "target")]
        apply: Option<PathBuf>,
        /// Target mesh; the estimated pose goes to --out.
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit coefficients to 68 landmarks (one `x y z` per line).
    Fit {
        #[arg(long)]
        basis: PathBuf,
        #[arg(long)]
        landmarks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Ridge strength; defaults to a scale-aware value.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Score predicted coefficients against per-identity references.
    Eval {
        #[arg(long)]
        basis: PathBuf,
        #[arg(long)]
        regions: PathBuf,
        /// Ratio landmark pairs; the 68-point defaults when omitted.
        #[arg(long)]
        ratio: Option<PathBuf>,
        /// Rows `identity utterance c0 c1 ...`.
        #[arg(long)]
        predictions: PathBuf,
        /// Rows `identity utterance c0 c1 ...`, one per identity.
        #[arg(long)]
        references: PathBuf,
        /// Writes the metric table as TSV.
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long, default_value = "Ours")]
        label: String,
    },
    /// Fit a mean-shape oracle on the training split and predict the evaluation split.
    Oracle {
        #[arg(long)]
        manifest: PathBuf,
        /// global | group
        #[arg(long, default_value = "global")]
        kind: String,
        /// Prediction table for the evaluation identities.
        #[arg(long)]
        out: PathBuf,
        /// Also save the fitted oracle as TOML.
        #[arg(long)]
        model_out: Option<PathBuf>,
    },
    /// Train the supervised decoder on the training split.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Model checkpoint.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: TrainOpts,
    },
    /// Distill a student from a frozen expert on the training split.
    Distill {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        expert: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: TrainOpts,
    },
    /// Log-mel spectrogram of a mono WAV file.
    Melspec {
        #[arg(long)]
        wav: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-bin zero mean, unit variance.
        #[arg(long)]
        normalize: bool,
        #[arg(long)]
        n_mels: Option<usize>,
    },
    /// One-sided binomial preference test against p = 0.5.
    Sigtest {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        k: u64,
        #[arg(long, default_value_t = 0.001)]
        gamma: f64,
    },
    /// Write a seeded synthetic dataset, face basis and linear expert.
    SynthData {
        /// Output directory (created if needed).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        identities: Option<usize>,
        #[arg(long)]
        utterances: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Args)]
struct TrainOpts {
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Hidden widths, comma separated (e.g. 64,64).
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// relu | identity
    #[arg(long)]
    activation: Option<String>,
    /// Loss log as TSV.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Per-utterance predictions for the evaluation split.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FitSection {
    ridge_lambda: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    train: TrainConfig,
    model: Option<ModelConfig>,
    icp: IcpConfig,
    mel: MelConfig,
    synth: SyntheticSpec,
    fit: FitSection,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                toml::from_str(&read_to_string(p)?).map_err(|e| Error::parse(p.display().to_string(), 0, e.to_string()))
            }
        }
    }
}

/// Runs the CLI on `args` (including the program name).
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    match dispatch(cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_numerical() {
                3
            } else {
                2
            }
        }
    }
}

/// Runs on the process arguments with stdout and stderr.
pub fn run() -> i32 {
    run_with(
        std::env::args_os(),
        &mut std::io::stdout().lock(),
        &mut std::io::stderr().lock(),
    )
}

fn kv(out: &mut dyn Write, key: &str, value: impl Display) -> Result<()> {
    writeln!(out, "{key}={value}").map_err(|e| Error::io("stdout", e))
}

fn warn(err: &mut dyn Write, msg: &str) {
    let _ = writeln!(err, "warning: {msg}");
}

fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let cfg = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Reconstruct {
            basis,
            coeffs,
            pose,
            out: path,
        } => {
            let basis = load_basis(&basis)?;
            let c = load_coefficients(&coeffs, CoeffRole::Predicted)?;
            let mut mesh = reconstruct(&basis, &c)?;
            if let Some(p) = pose {
                mesh = apply_pose(&mesh, &load_pose(&p)?)?;
            }
            save_obj(&mesh, &path)?;
            kv(out, "vertices", mesh.vertex_count())?;
            kv(out, "faces", mesh.faces.len())?;
            kv(out, "out", path.display())
        }
        Command::Pose {
            mesh,
            apply,
            target,
            out: path,
        } => {
            let mesh = load_obj(&mesh)?;
            if let Some(p) = apply {
                let posed = apply_pose(&mesh, &load_pose(&p)?)?;
                save_obj(&posed, &path)?;
                kv(out, "vertices", posed.vertex_count())?;
            } else {
                let target = load_obj(target.as_deref().expect("clap requires --apply or --target"))?;
                let r = icp_point_to_plane(&mesh, &target, &cfg.icp)?;
                write_string(&path, &r.pose.to_text())?;
                kv(out, "rmse", r.rmse)?;
                kv(out, "iterations", r.iterations)?;
                kv(out, "correspondences", r.correspondences)?;
            }
            kv(out, "out", path.display())
        }
        Command::Fit {
            basis,
            landmarks,
            out: path,
            lambda,
        } => {
            let basis = load_basis(&basis)?;
            let lms = LandmarkSet::load(&landmarks)?;
            let fit_cfg = match lambda.or(cfg.fit.ridge_lambda) {
                Some(l) => FitConfig::new(l)?,
                None => FitConfig::default_for(&basis)?,
            };
            let report = fit_report(&lms, &basis, &fit_cfg)?;
            save_coefficients(&report.coefficients, &path)?;
            kv(out, "lambda", fit_cfg.ridge_lambda)?;
            kv(out, "residual_rms", report.residual_rms)?;
            kv(out, "out", path.display())
        }
        Command::Eval {
            basis,
            regions,
            ratio,
            predictions,
            references,
            table,
            label,
        } => {
            let basis = load_basis(&basis)?;
            let regions = RegionMap::load(&regions, basis.vertex_count())?;
            let spec = match ratio {
                Some(p) => RatioSpec::load(&p)?,
                None => RatioSpec::default(),
            };
            let preds = CoefficientTable::load(&predictions)?;
            let refs = CoefficientTable::load(&references)?.by_identity()?;
            let e = evaluate(&preds, &refs, &basis, &spec, &regions, &cfg.icp)?;
            if let Some(t) = table {
                e.table(&label).save(&t)?;
            }
            kv(out, "identities", e.per_identity.len())?;
            for (name, v) in e.overall.metric_rows() {
                kv(out, &metric_key(name), v)?;
            }
            Ok(())
        }
        Command::Oracle {
            manifest,
            kind,
            out: path,
            model_out,
        } => {
            let kind: OracleKind = kind.parse()?;
            let split = split_manifest(&DatasetManifest::load(&manifest)?)?;
            for w in &split.warnings {
                warn(err, w);
            }
            let train: Vec<DVector<f64>> = (0..split.train.len())
                .map(|i| split.train.load_coefficients(i))
                .collect::<Result<_>>()?;
            let groups: Vec<String> = split.train.entries.iter().map(|e| e.gender.clone()).collect();
            let oracle = fit_oracle(&train, kind, Some(&groups))?;
            let mut table = CoefficientTable::default();
            for e in &split.eval.entries {
                let pred = oracle.predict(Some(&e.gender))?;
                for u in 0..e.features.len().max(1) {
                    table.push(&e.name, u, pred.clone());
                }
            }
            table.save(&path)?;
            if let Some(m) = model_out {
                oracle.save(&m)?;
            }
            kv(out, "train_identities", split.train.len())?;
            kv(out, "eval_identities", split.eval.len())?;
            kv(out, "groups", oracle.means.len())?;
            kv(out, "out", path.display())
        }
        Command::Train {
            manifest,
            out: path,
            opts,
        } => {
            let (train, eval) = load_split(&manifest, err)?;
            let tcfg = opts.train_config(&cfg)?;
            let arch = opts.model_config(cfg.model.clone().unwrap_or_default())?;
            let outcome = train_supervised(&train, &arch, &tcfg)?;
            finish_training(&outcome.model, &outcome.log, &eval, &path, &opts, out)
        }
        Command::Distill {
            manifest,
            expert,
            out: path,
            opts,
        } => {
            let expert = MlpModel::load(&expert)?;
            let (train, eval) = load_split(&manifest, err)?;
            let tcfg = opts.train_config(&cfg)?;
            // the student copies the expert's shape unless told otherwise
            let default_arch = cfg.model.clone().unwrap_or_else(|| {
                let sizes = expert.sizes();
                ModelConfig {
                    hidden: sizes[1..sizes.len() - 1].to_vec(),
                    activation: expert.activation(),
                }
            });
            let arch = opts.model_config(default_arch)?;
            let outcome = train_distilled(&expert, &train, &arch, &tcfg)?;
            let held_out = if eval.is_empty() { &train } else { &eval };
            let x = held_out.embeddings();
            let rms = crate::nnkit::output_rms(&outcome.model, &expert, &x)?;
            kv(out, "expert_rms", rms)?;
            finish_training(&outcome.model, &outcome.log, &eval, &path, &opts, out)
        }
        Command::Melspec {
            wav,
            out: path,
            normalize,
            n_mels,
        } => {
            let w = Waveform::load_wav(&wav)?;
            let mut mel_cfg = cfg.mel.clone();
            if let Some(n) = n_mels {
                mel_cfg.n_mels = n;
            }
            let mut m = melspectrogram(&w, &mel_cfg)?;
            if normalize {
                m = normalize_per_bin(&m)?;
                for b in &m.degenerate_bins {
                    warn(err, &format!("mel bin {b} has no variance; left at zero"));
                }
            }
            m.save(&path)?;
            kv(out, "frames", m.frames())?;
            kv(out, "bins", m.bins())?;
            kv(out, "sample_rate", w.sample_rate())?;
            kv(out, "out", path.display())
        }
        Command::Sigtest { n, k, gamma } => {
            let r = significance_test(&PreferenceTally::new(n, k, gamma)?)?;
            kv(out, "n", n)?;
            kv(out, "k", k)?;
            kv(out, "gamma", gamma)?;
            kv(out, "threshold", r.threshold)?;
            kv(out, "reject", r.reject)?;
            kv(out, "p_value", format!("{:e}", r.p_value))
        }
        Command::SynthData {
            out: dir,
            identities,
            utterances,
            seed,
        } => {
            let mut spec = cfg.synth.clone();
            if let Some(n) = identities {
                spec.identities = n;
            }
            if let Some(u) = utterances {
                spec.utterances = u;
            }
            if let Some(s) = seed {
                spec.seed = s;
            }
            write_synthetic(&spec, &dir, out)
        }
    }
}

fn metric_key(name: &str) -> String {
    match name {
        "ER" | "FR" | "MR" | "CR" => format!("are_{}", name.to_lowercase()),
        "Mean" => "are_mean".into(),
        "NME" => "nme".into(),
        "RMSE" => "rmse".into(),
        part => format!("rmse_{}", part.to_lowercase().replace(' ', "_")),
    }
}

fn load_pose(path: &Path) -> Result<PoseParams> {
    PoseParams::parse(&read_to_string(path)?, &path.display().to_string())
}

fn load_split(manifest: &Path, err: &mut dyn Write) -> Result<(SyntheticDataset, SyntheticDataset)> {
    let m = DatasetManifest::load(manifest)?;
    let (train, eval, warnings) = m.to_dataset()?.split_by_name()?;
    for w in &warnings {
        warn(err, w);
    }
    if train.is_empty() {
        return Err(Error::InvalidArgument("training split has no samples".into()));
    }
    Ok((train, eval))
}

impl TrainOpts {
    fn train_config(&self, cfg: &FileConfig) -> Result<TrainConfig> {
        let mut t = cfg.train.clone();
        if let Some(s) = self.steps {
            t.steps = s;
        }
        if let Some(lr) = self.learning_rate {
            t.learning_rate = lr;
        }
        if let Some(b) = self.batch_size {
            t.batch_size = b;
        }
        if let Some(s) = self.seed {
            t.seed = s;
        }
        t.validate()?;
        Ok(t)
    }

    fn model_config(&self, mut m: ModelConfig) -> Result<ModelConfig> {
        if let Some(h) = &self.hidden {
            m.hidden = h.clone();
        }
        if let Some(a) = &self.activation {
            m.activation = match a.as_str() {
                "relu" => Activation::Relu,
                "identity" => Activation::Identity,
                other => return Err(Error::InvalidArgument(format!("unknown activation {other:?}"))),
            };
        }
        Ok(m)
    }
}

fn finish_training(
    model: &MlpModel,
    log: &crate::nnkit::TrainLog,
    eval: &SyntheticDataset,
    path: &Path,
    opts: &TrainOpts,
    out: &mut dyn Write,
) -> Result<()> {
    model.save(path)?;
    if let Some(l) = &opts.log {
        log.save(l)?;
    }
    if let Some(p) = &opts.predictions {
        predictions_for(model, eval)?.save(p)?;
    }
    if let Some((step, last)) = log.rows.last() {
        kv(out, "steps", step + 1)?;
        for (c, v) in log.columns.iter().zip(last) {
            kv(out, &format!("final_{c}"), v)?;
        }
    }
    kv(out, "parameters", model.param_count())?;
    kv(out, "out", path.display())
}

/// Predicts every sample; utterance indices count within each identity.
pub fn predictions_for(model: &MlpModel, data: &SyntheticDataset) -> Result<CoefficientTable> {
    let mut table = CoefficientTable::default();
    if data.is_empty() {
        return Ok(table);
    }
    let pred = model.predict(&data.embeddings())?;
    for id in 0..data.identity_count() {
        for (u, &i) in data.samples_of(id).iter().enumerate() {
            table.push(&data.names[id], u, pred.row(i).transpose());
        }
    }
    Ok(table)
}

/// Two-layer linear network computing `g x + c` exactly, with a feature
/// layer of `width >= rank(g)` units taken from the SVD of `g`.
pub fn linear_expert(g: &DMatrix<f64>, c: &DVector<f64>, width: usize) -> Result<MlpModel> {
    let (p, d) = g.shape();
    let k = p.min(d);
    if width < k {
        return Err(Error::InvalidArgument(format!(
            "expert width {width} is below rank bound {k}"
        )));
    }
    let svd = g.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let mut w1 = DMatrix::zeros(width, d);
    w1.rows_mut(0, k).copy_from(&vt.rows(0, k));
    let mut w2 = DMatrix::zeros(p, width);
    for j in 0..k {
        w2.set_column(j, &(u.column(j) * svd.singular_values[j]));
    }
    MlpModel::from_layers(
        vec![
            Layer {
                weight: w1,
                bias: DVector::zeros(width),
            },
            Layer {
                weight: w2,
                bias: c.clone(),
            },
        ],
        Activation::Identity,
    )
}

fn write_synthetic(spec: &SyntheticSpec, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let face = SyntheticFace {
        coeff_count: spec.coeff_count,
        ..SyntheticFace::default()
    }
    .build()?;
    let (ds, truth) = spec.generate_with_truth()?;
    for sub in ["coeffs", "features"] {
        std::fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    save_basis(&face.basis, &dir.join("basis.txt"))?;
    write_string(&dir.join("regions.toml"), &face.regions.to_toml())?;
    write_string(&dir.join("ratio.toml"), &RatioSpec::default().to_toml())?;
    linear_expert(&truth.g, &truth.c, EXPERT_FEATURES.max(spec.coeff_count))?.save(&dir.join("expert.txt"))?;

    let mut entries = Vec::with_capacity(ds.identity_count());
    let mut refs = CoefficientTable::default();
    for id in 0..ds.identity_count() {
        let name = &ds.names[id];
        let alpha = ds.identity_coefficients(id);
        let coeff_rel = PathBuf::from(format!("coeffs/{name}.txt"));
        save_coefficients(
            &ShapeCoefficients::new(alpha.clone(), CoeffRole::GroundTruth),
            &dir.join(&coeff_rel),
        )?;
        refs.push(name, 0, alpha);
        let mut features = Vec::new();
        for (u, &i) in ds.samples_of(id).iter().enumerate() {
            let rel = PathBuf::from(format!("features/{name}_{u}.txt"));
            let line: Vec<String> = ds.samples[i].embedding.iter().map(|v| v.to_string()).collect();
            write_string(&dir.join(&rel), &(line.join(" ") + "\n"))?;
            features.push(rel);
        }
        entries.push(ManifestEntry {
            name: name.clone(),
            gender: ds.genders[id].clone(),
            coefficients: coeff_rel,
            features,
        });
    }
    write_string(&dir.join("manifest.toml"), &DatasetManifest { entries }.to_toml())?;
    refs.save(&dir.join("references.tsv"))?;
    kv(out, "identities", ds.identity_count())?;
    kv(out, "samples", ds.len())?;
    kv(out, "embed_dim", ds.embed_dim())?;
    kv(out, "coeff_count", ds.coeff_dim())?;
    kv(out, "vertices", face.basis.vertex_count())?;
    kv(out, "out", dir.display())
}
