//! Constant mean-shape predictors used as baselines.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, write_string, Error, Result};

const GLOBAL_KEY: &str = "all";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    GlobalMean,
    PerGroupMean,
}

impl std::str::FromStr for OracleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" | "global_mean" => Ok(Self::GlobalMean),
            "group" | "per_group" | "per_group_mean" => Ok(Self::PerGroupMean),
            other => Err(Error::InvalidArgument(format!("unknown oracle kind {other:?}"))),
        }
    }
}

/// Stored mean coefficient vectors. A global oracle has a single entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleModel {
    pub kind: OracleKind,
    /// What the group labels mean, e.g. `gender`.
    #[serde(default)]
    pub group_key: String,
    pub means: BTreeMap<String, Vec<f64>>,
}

/// Fits the oracle from training coefficient vectors. `groups` labels each
/// sample and is required for the per-group kind.
pub fn fit_oracle(train: &[DVector<f64>], kind: OracleKind, groups: Option<&[String]>) -> Result<OracleModel> {
    let Some(first) = train.first() else {
        return Err(Error::InvalidArgument("oracle needs a non-empty training set".into()));
    };
    let p = first.len();
    if let Some(bad) = train.iter().position(|a| a.len() != p) {
        return Err(Error::dim(format!("training sample {bad}"), p, train[bad].len()));
    }
    let mut sums: BTreeMap<String, (DVector<f64>, usize)> = BTreeMap::new();
    match kind {
        OracleKind::GlobalMean => {
            let acc = sums.entry(GLOBAL_KEY.into()).or_insert((DVector::zeros(p), 0));
            for a in train {
                acc.0 += a;
                acc.1 += 1;
            }
        }
        OracleKind::PerGroupMean => {
            let groups = groups
                .ok_or_else(|| Error::InvalidArgument("per-group oracle needs a group label per sample".into()))?;
            if groups.len() != train.len() {
                return Err(Error::dim("oracle group labels", train.len(), groups.len()));
            }
            for (a, g) in train.iter().zip(groups) {
                if g.is_empty() {
                    return Err(Error::InvalidArgument("empty group label".into()));
                }
                let acc = sums.entry(g.clone()).or_insert((DVector::zeros(p), 0));
                acc.0 += a;
                acc.1 += 1;
            }
        }
    }
    let means = sums
        .into_iter()
        .map(|(g, (s, n))| (g, (s / n as f64).iter().copied().collect()))
        .collect();
    Ok(OracleModel {
        kind,
        group_key: if kind == OracleKind::PerGroupMean {
            "gender".into()
        } else {
            String::new()
        },
        means,
    })
}

impl OracleModel {
    pub fn coeff_count(&self) -> usize {
        self.means.values().next().map_or(0, Vec::len)
    }

    /// Prediction for a sample of the given group. The global oracle ignores
    /// the group; the per-group oracle errors on a group it never saw.
    pub fn predict(&self, group: Option<&str>) -> Result<DVector<f64>> {
        let key = match self.kind {
            OracleKind::GlobalMean => GLOBAL_KEY,
            OracleKind::PerGroupMean => {
                group.ok_or_else(|| Error::InvalidArgument("per-group oracle needs a group label".into()))?
            }
        };
        self.means
            .get(key)
            .map(|v| DVector::from_column_slice(v))
            .ok_or_else(|| Error::Missing(format!("oracle has no mean for group {key:?}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.means.is_empty() {
            return Err(Error::InvalidArgument("oracle stores no means".into()));
        }
        if self.kind == OracleKind::GlobalMean && !self.means.contains_key(GLOBAL_KEY) {
            return Err(Error::InvalidArgument(format!(
                "global oracle must store key {GLOBAL_KEY:?}"
            )));
        }
        let p = self.coeff_count();
        for (g, v) in &self.means {
            if v.len() != p {
                return Err(Error::dim(format!("oracle mean {g:?}"), p, v.len()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("oracle mean {g:?}")));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("oracle serializes")
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let m: OracleModel = toml::from_str(text).map_err(|e| Error::parse(origin, 0, e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_string(path, &self.to_toml())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ReportTable;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn single_and_pair() {
        let one = fit_oracle(&[v(&[1.0, -2.0])], OracleKind::GlobalMean, None).unwrap();
        assert_eq!(one.predict(None).unwrap(), v(&[1.0, -2.0]));
        let two = fit_oracle(&[v(&[1.0, -2.0]), v(&[3.0, 4.0])], OracleKind::GlobalMean, None).unwrap();
        assert_eq!(two.predict(Some("ignored")).unwrap(), v(&[2.0, 1.0]));
    }

    #[test]
    fn per_group() {
        let g: Vec<String> = ["f", "m", "f"].iter().map(|s| s.to_string()).collect();
        let o = fit_oracle(&[v(&[1.0]), v(&[10.0]), v(&[3.0])], OracleKind::PerGroupMean, Some(&g)).unwrap();
        assert_eq!(o.predict(Some("f")).unwrap(), v(&[2.0]));
        assert_eq!(o.predict(Some("m")).unwrap(), v(&[10.0]));
        assert!(o.predict(Some("x")).is_err());
        assert!(o.predict(None).is_err());
        assert!(fit_oracle(&[v(&[1.0])], OracleKind::PerGroupMean, None).is_err());
        assert!(fit_oracle(&[], OracleKind::GlobalMean, None).is_err());
        assert!(fit_oracle(&[v(&[1.0])], OracleKind::PerGroupMean, Some(&["".to_string()])).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let g: Vec<String> = ["female", "male"].iter().map(|s| s.to_string()).collect();
        let o = fit_oracle(&[v(&[0.1, 0.2]), v(&[-0.3, 1e-17])], OracleKind::PerGroupMean, Some(&g)).unwrap();
        let back = OracleModel::parse(&o.to_toml(), "mem").unwrap();
        assert_eq!(back, o);
        assert!(OracleModel::parse("kind = \"global_mean\"\n[means]\nx = [1.0]\n", "mem").is_err());
    }

    #[test]
    fn oracle_table_layout() {
        let t = ReportTable::oracles(&[
            ("Oracle(1)", 0.0319, 0.3058, 1.540),
            ("Oracle(2)", 0.0311, 0.3021, 1.529),
            ("Base-2", 0.0302, 0.2969, 1.348),
        ]);
        let tsv = t.to_tsv();
        let header = tsv.lines().next().unwrap();
        assert_eq!(header, "Metrics\tType\tOracle(1)\tOracle(2)\tBase-2");
        assert!(tsv
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("Mean ARE\tline\t0.0319\t0.0311\t0.0302"));
        let back = ReportTable::parse_tsv(&tsv, 2, "mem").unwrap();
        assert_eq!(back, t);
        assert_eq!(back.value("Mean ARE", "Base-2"), Some(0.0302));
    }

    proptest! {
        // the mean minimises the summed squared error among constant predictors
        #[test]
        fn global_mean_minimises_mse(
            xs in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 1..12),
            d in proptest::collection::vec(-1.0f64..1.0, 3),
        ) {
            let train: Vec<_> = xs.iter().map(|x| v(x)).collect();
            let m = fit_oracle(&train, OracleKind::GlobalMean, None).unwrap().predict(None).unwrap();
            let sse = |c: &DVector<f64>| train.iter().map(|a| (a - c).norm_squared()).sum::<f64>();
            let grad: DVector<f64> = train.iter().map(|a| (&m - a) * 2.0).fold(DVector::zeros(3), |s, g| s + g);
            prop_assert!(grad.amax() < 1e-9);
            let other = &m + v(&d) * 0.1;
            prop_assert!(sse(&m) <= sse(&other) + 1e-12);
        }
    }
}
