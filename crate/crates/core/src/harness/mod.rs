//! Dataset manifests, mean-shape oracles, batch evaluation, the binomial
//! preference test and the command-line front end.

mod binomial;
pub mod cli;
mod evaluate;
mod manifest;
mod oracle;
mod split;

pub use binomial::{
    binomial_cdf, binomial_pmf, binomial_quantile, binomial_upper_tail, significance_test, PreferenceTally,
    SignificanceResult,
};
pub use evaluate::{compare_meshes, evaluate, CoeffRow, CoefficientTable, Evaluation};
pub use manifest::{split_manifest, DatasetManifest, ManifestEntry, ManifestSplit};
pub use oracle::{fit_oracle, OracleKind, OracleModel};
pub use split::{split_names, NameSplit};
