//! Matrix completion by smoothed alternating least squares.
//!
//! An unknown symmetric `n x n` matrix `A = M + N`, with `M` of rank `k`
//! and incoherent, is observed on a Bernoulli subsample of its entries.
//! [`saltls::salt_ls`] recovers factors `X`, `Y` with `M ~ X Y^T` from the
//! sample alone. The remaining modules expose the building blocks:
//! sampling and splitting, the row-wise least-squares update, smoothed
//! orthonormalization, spectral initialization, and a noisy subspace
//! iteration harness for studying convergence under perturbations.

pub mod cli;
pub mod error;
pub mod generators;
pub mod initialize;
pub mod least_squares;
pub mod linalg;
pub mod nsi;
pub mod rng;
pub mod saltls;
pub mod sampling;
pub mod smooth_qr;
pub mod textio;
pub mod truth;

pub use error::{Error, Result};
pub use linalg::{OrthonormalBasis, PrincipalAngle, SpectralSummary};
pub use sampling::ObservedSample;
pub use saltls::{salt_ls, SaltlsConfig, SaltlsOutput, Schedule};
pub use truth::GroundTruth;
