//! Geometry, losses and evaluation tooling for predicting 3D morphable face
//! meshes from voice embeddings.
//!
//! The crate is organised by subsystem:
//!
//! - [`morphable`]: PCA face model reconstruction, rigid pose, normals, mesh and basis files
//! - [`fitting`]: ridge least-squares recovery of shape coefficients from 68 3D landmarks
//! - [`metrics`]: ratio error (ARE), landmark NME, point-to-plane ICP and per-part RMSE
//! - [`losses`]: regression, triplet, GAN real/fake, pseudo-groundtruth and PKT divergence
//!   losses with analytic gradients
//! - [`nnkit`]: a small MLP, Adam, gradient checking and the toy training loops
//! - [`audio`]: log-mel spectrogram extraction and per-bin normalisation
//! - [`harness`]: manifests, the A-E split, mean-shape oracles, batch evaluation,
//!   exact binomial significance and the command line front end

pub mod audio;
pub mod error;
pub mod fitting;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod morphable;
pub mod nnkit;

pub use error::{Error, Result};
