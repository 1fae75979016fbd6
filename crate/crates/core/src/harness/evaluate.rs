//! Batch evaluation of predicted coefficients against per-identity references.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{read_to_string, write_string, Error, Result};
use crate::fitting::extract_landmarks;
use crate::metrics::{
    absolute_ratio_error, icp_point_to_plane, nme, part_rmse, EvalReport, IcpConfig, RatioSpec, RegionMap, ReportTable,
};
use crate::morphable::{reconstruct, vertex_normals, Mesh, MorphableBasis, ShapeCoefficients};

/// One coefficient vector tagged with its identity and utterance index.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffRow {
    pub identity: String,
    pub utterance: usize,
    pub values: DVector<f64>,
}

/// Whitespace-separated rows `identity utterance c0 c1 ...`; `#` comments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CoefficientTable {
    pub rows: Vec<CoeffRow>,
}

impl CoefficientTable {
    pub fn push(&mut self, identity: &str, utterance: usize, values: DVector<f64>) {
        self.rows.push(CoeffRow {
            identity: identity.into(),
            utterance,
            values,
        });
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut rows = Vec::new();
        let mut width = None;
        for (ln, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("");
            let mut toks = line.split_whitespace();
            let Some(identity) = toks.next() else { continue };
            let utterance = toks
                .next()
                .ok_or_else(|| Error::parse(origin, ln + 1, "missing utterance index"))?
                .parse::<usize>()
                .map_err(|_| Error::parse(origin, ln + 1, "utterance index must be a non-negative integer"))?;
            let values = toks
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| Error::parse(origin, ln + 1, format!("not a number: {t:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            if values.is_empty() {
                return Err(Error::parse(origin, ln + 1, "row has no coefficients"));
            }
            match width {
                None => width = Some(values.len()),
                Some(w) if w != values.len() => {
                    return Err(Error::parse(
                        origin,
                        ln + 1,
                        format!("expected {w} coefficients, found {}", values.len()),
                    ))
                }
                _ => {}
            }
            rows.push(CoeffRow {
                identity: identity.into(),
                utterance,
                values: DVector::from_vec(values),
            });
        }
        Ok(Self { rows })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# identity utterance coefficients...\n");
        for r in &self.rows {
            let _ = write!(s, "{}\t{}", r.identity, r.utterance);
            for v in r.values.iter() {
                let _ = write!(s, "\t{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_string(path, &self.to_text())
    }

    /// One vector per identity; errors if an identity appears twice.
    pub fn by_identity(&self) -> Result<BTreeMap<String, DVector<f64>>> {
        let mut out = BTreeMap::new();
        for r in &self.rows {
            if out.insert(r.identity.clone(), r.values.clone()).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "identity {} has more than one reference row",
                    r.identity
                )));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Mean over each identity's utterances, keyed by identity.
    pub per_identity: BTreeMap<String, EvalReport>,
    /// Mean over identities.
    pub overall: EvalReport,
}

impl Evaluation {
    /// All metrics as a one-column table headed by `label`.
    pub fn table(&self, label: &str) -> ReportTable {
        ReportTable::full(&[(label, &self.overall)])
    }
}

/// Compares two meshes of the same topology. `reference` should carry normals.
pub fn compare_meshes(
    pred: &Mesh,
    reference: &Mesh,
    basis: &MorphableBasis,
    spec: &RatioSpec,
    regions: &RegionMap,
    icp: &IcpConfig,
) -> Result<EvalReport> {
    let are = absolute_ratio_error(pred, reference, basis, spec)?;
    let nme = nme(
        &extract_landmarks(pred, basis)?,
        &extract_landmarks(reference, basis)?,
        reference,
    )?;
    let rmse_holistic = icp_point_to_plane(pred, reference, icp)?.rmse;
    let rmse_parts = part_rmse(pred, reference, regions, icp)?;
    Ok(EvalReport {
        are,
        nme,
        rmse_holistic,
        rmse_parts,
        pred_id: String::new(),
        ref_id: String::new(),
    })
}

/// Scores every prediction against its identity's reference, averages over
/// each identity's utterances (in utterance order), then over identities
/// (in name order). The result does not depend on row order.
pub fn evaluate(
    predictions: &CoefficientTable,
    references: &BTreeMap<String, DVector<f64>>,
    basis: &MorphableBasis,
    spec: &RatioSpec,
    regions: &RegionMap,
    icp: &IcpConfig,
) -> Result<Evaluation> {
    if predictions.rows.is_empty() {
        return Err(Error::InvalidArgument("no predictions to evaluate".into()));
    }
    let mut grouped: BTreeMap<&str, Vec<&CoeffRow>> = BTreeMap::new();
    for r in &predictions.rows {
        if !references.contains_key(&r.identity) {
            return Err(Error::Missing(format!("no reference for identity {}", r.identity)));
        }
        grouped.entry(&r.identity).or_default().push(r);
    }
    for (id, rows) in grouped.iter_mut() {
        rows.sort_by_key(|r| r.utterance);
        if let Some(w) = rows.windows(2).find(|w| w[0].utterance == w[1].utterance) {
            return Err(Error::InvalidArgument(format!(
                "identity {id} has utterance {} twice",
                w[0].utterance
            )));
        }
    }

    let mesh_of = |v: &DVector<f64>| reconstruct(basis, &ShapeCoefficients::predicted(v.clone()));
    let per_identity: Vec<(String, EvalReport)> = grouped
        .par_iter()
        .map(|(id, rows)| {
            let reference = vertex_normals(&mesh_of(&references[*id])?)?;
            let reports = rows
                .iter()
                .map(|r| compare_meshes(&mesh_of(&r.values)?, &reference, basis, spec, regions, icp))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| match e {
                    Error::Degenerate(m) => Error::Degenerate(format!("identity {id}: {m}")),
                    other => other,
                })?;
            Ok((id.to_string(), EvalReport::mean_of(&reports, id, id)?))
        })
        .collect::<Result<_>>()?;
    let reports: Vec<EvalReport> = per_identity.iter().map(|(_, r)| r.clone()).collect();
    let overall = EvalReport::mean_of(&reports, "predictions", "references")?;
    Ok(Evaluation {
        per_identity: per_identity.into_iter().collect(),
        overall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::morphable::synthetic::SyntheticFace;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (MorphableBasis, RegionMap) {
        let m = SyntheticFace::default().build().unwrap();
        (m.basis, m.regions)
    }

    fn random_table(ids: &[&str], utts: usize, p: usize, seed: u64) -> CoefficientTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = CoefficientTable::default();
        for id in ids {
            for u in 0..utts {
                t.push(id, u, DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0)));
            }
        }
        t
    }

    #[test]
    fn identical_sets_are_zero() {
        let (basis, regions) = setup();
        let preds = random_table(&["Ann", "Bob"], 1, basis.coeff_count(), 1);
        let refs = preds.by_identity().unwrap();
        let e = evaluate(
            &preds,
            &refs,
            &basis,
            &RatioSpec::default(),
            &regions,
            &IcpConfig::default(),
        )
        .unwrap();
        for (name, v) in e.overall.metric_rows() {
            assert!(v.abs() < 1e-9, "{name} = {v}");
        }
        assert_eq!(e.per_identity.len(), 2);
    }

    #[test]
    fn missing_reference_names_identity() {
        let (basis, regions) = setup();
        let preds = random_table(&["Ann", "Quincy"], 1, basis.coeff_count(), 2);
        let mut refs = preds.by_identity().unwrap();
        refs.remove("Quincy");
        let err = evaluate(
            &preds,
            &refs,
            &basis,
            &RatioSpec::default(),
            &regions,
            &IcpConfig::default(),
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("Quincy"), "{err}");
    }

    #[test]
    fn permutation_invariant_and_per_identity_mean() {
        let (basis, regions) = setup();
        let p = basis.coeff_count();
        let preds = random_table(&["Ann", "Bob", "Cid"], 3, p, 3);
        let refs = random_table(&["Ann", "Bob", "Cid"], 1, p, 4).by_identity().unwrap();
        let cfg = IcpConfig::default();
        let spec = RatioSpec::default();
        let a = evaluate(&preds, &refs, &basis, &spec, &regions, &cfg).unwrap();
        let mut shuffled = preds.clone();
        shuffled.rows.reverse();
        shuffled.rows.swap(0, 4);
        let b = evaluate(&shuffled, &refs, &basis, &spec, &regions, &cfg).unwrap();
        assert_eq!(a, b);

        // identity mean equals the arithmetic mean of its utterance scores
        let reference =
            vertex_normals(&reconstruct(&basis, &ShapeCoefficients::predicted(refs["Bob"].clone())).unwrap()).unwrap();
        let per: Vec<f64> = preds
            .rows
            .iter()
            .filter(|r| r.identity == "Bob")
            .map(|r| {
                let m = reconstruct(&basis, &ShapeCoefficients::predicted(r.values.clone())).unwrap();
                compare_meshes(&m, &reference, &basis, &spec, &regions, &cfg)
                    .unwrap()
                    .are
                    .mean
            })
            .collect();
        let want = per.iter().sum::<f64>() / 3.0;
        assert!((a.per_identity["Bob"].are.mean - want).abs() < 1e-15);
        let over = a.per_identity.values().map(|r| r.are.mean).sum::<f64>() / 3.0;
        assert!((a.overall.are.mean - over).abs() < 1e-15);
    }

    #[test]
    fn duplicate_utterance_rejected() {
        let (basis, regions) = setup();
        let mut preds = random_table(&["Ann"], 2, basis.coeff_count(), 5);
        preds.rows[1].utterance = 0;
        let refs = random_table(&["Ann"], 1, basis.coeff_count(), 6).by_identity().unwrap();
        assert!(evaluate(
            &preds,
            &refs,
            &basis,
            &RatioSpec::default(),
            &regions,
            &IcpConfig::default()
        )
        .is_err());
    }

    #[test]
    fn table_round_trip() {
        let t = random_table(&["Ann", "Bob"], 2, 4, 7);
        assert_eq!(CoefficientTable::parse(&t.to_text(), "mem").unwrap(), t);
        assert!(CoefficientTable::parse("Ann 0 1 2\nBob 0 1\n", "mem").is_err());
        assert!(CoefficientTable::parse("Ann x 1\n", "mem").is_err());
        assert!(CoefficientTable::parse("Ann 0 1\nAnn 1 2\n", "mem")
            .unwrap()
            .by_identity()
            .is_err());
    }
}
