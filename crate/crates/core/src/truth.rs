//! Planted decomposition `A = U Lambda_U U^T + N` used as the oracle in
//! experiments.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg::{coherence, ensure_symmetric, OrthonormalBasis};

/// Tolerance on `||U^T N||_max`, relative to `max(1, ||N||_max)`.
const RANGE_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct GroundTruth {
    u: OrthonormalBasis,
    lambda_u: Vec<f64>,
    noise: DMatrix<f64>,
    m: DMatrix<f64>,
    a: DMatrix<f64>,
    singular_values: Vec<f64>,
    sigma_k: f64,
    noise_norm: f64,
    gamma_k: f64,
    mu_u: f64,
    mu_n: f64,
    mu_star: f64,
}

impl GroundTruth {
    /// Assembles `A = U diag(lambda_u) U^T + noise` and checks that the
    /// noise lives in the orthogonal complement of `U` and satisfies
    ///
    /// `max_i ||e_i^T N||^2 <= (mu_N/n) sigma_k^2` and
    /// `max_ij |N_ij| <= (mu_N/n) ||A||_F`.
    ///
    /// With `mu_n = None` the smallest `mu_N` meeting both bounds is
    /// recorded; with `Some(c)` the achieved value must not exceed `c`.
    pub fn new(
        u: OrthonormalBasis,
        lambda_u: Vec<f64>,
        noise: DMatrix<f64>,
        mu_n: Option<f64>,
    ) -> Result<Self> {
        let n = u.n();
        let k = u.k();
        if lambda_u.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "{} eigenvalues for a rank-{k} basis",
                lambda_u.len()
            )));
        }
        if noise.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!(
                "noise is {}x{}, expected {n}x{n}",
                noise.nrows(),
                noise.ncols()
            )));
        }
        ensure_symmetric(&noise)?;
        let leak = (u.matrix().transpose() * &noise).amax();
        if leak > RANGE_TOLERANCE * noise.amax().max(1.0) {
            return Err(Error::NoiseInfeasible(format!(
                "noise is not orthogonal to U (||U^T N||_max = {leak:e})"
            )));
        }

        let scaled = u.matrix() * DMatrix::from_diagonal(&DVector::from_vec(lambda_u.clone()));
        let m = &scaled * u.matrix().transpose();
        let a = &m + &noise;

        let sigma_k = lambda_u.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
        if !(sigma_k > 0.0) {
            return Err(Error::GapUndefined { k });
        }

        // Spectrum of A: |Lambda_U| together with the spectrum of N on the
        // complement of U (N has k eigenvalues that vanish on range(U)).
        let mut noise_spectrum: Vec<f64> = if noise.iter().all(|&v| v == 0.0) {
            vec![0.0; n]
        } else {
            SymmetricEigen::new(noise.clone())
                .eigenvalues
                .iter()
                .map(|v| v.abs())
                .collect()
        };
        noise_spectrum.sort_by(|x, y| y.total_cmp(x));
        let noise_norm = noise_spectrum.first().copied().unwrap_or(0.0);
        let mut singular_values: Vec<f64> = lambda_u.iter().map(|v| v.abs()).collect();
        singular_values.extend(noise_spectrum.iter().take(n - k));
        singular_values.sort_by(|x, y| y.total_cmp(x));

        let gamma_k = 1.0 - noise_norm / sigma_k;
        let mu_u = coherence(&u);
        let frob_a = a.norm();
        let max_row = noise
            .row_iter()
            .map(|r| r.norm_squared())
            .fold(0.0_f64, f64::max);
        let achieved = (n as f64 * max_row / (sigma_k * sigma_k))
            .max(if frob_a > 0.0 { n as f64 * noise.amax() / frob_a } else { 0.0 });
        let mu_n = match mu_n {
            Some(ceiling) => {
                if achieved > ceiling * (1.0 + 1e-12) {
                    return Err(Error::NoiseInfeasible(format!(
                        "noise needs mu_N >= {achieved:.6}, ceiling is {ceiling}"
                    )));
                }
                ceiling
            }
            None => achieved,
        };
        let mu_star = mu_u.max(mu_n).max((n as f64).ln());

        Ok(Self {
            u,
            lambda_u,
            noise,
            m,
            a,
            singular_values,
            sigma_k,
            noise_norm,
            gamma_k,
            mu_u,
            mu_n,
            mu_star,
        })
    }

    pub fn n(&self) -> usize {
        self.u.n()
    }

    pub fn k(&self) -> usize {
        self.u.k()
    }

    pub fn u(&self) -> &OrthonormalBasis {
        &self.u
    }

    pub fn lambda_u(&self) -> &[f64] {
        &self.lambda_u
    }

    pub fn noise(&self) -> &DMatrix<f64> {
        &self.noise
    }

    /// Rank-`k` part `U Lambda_U U^T`.
    pub fn m(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// Singular values of `A`, nonincreasing.
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// Smallest singular value of `M`.
    pub fn sigma_k(&self) -> f64 {
        self.sigma_k
    }

    /// Spectral norm of `N`, the `sigma_{k+1}` of the gap definition.
    pub fn noise_norm(&self) -> f64 {
        self.noise_norm
    }

    pub fn gamma_k(&self) -> f64 {
        self.gamma_k
    }

    pub fn mu_u(&self) -> f64 {
        self.mu_u
    }

    pub fn mu_n(&self) -> f64 {
        self.mu_n
    }

    /// `max{mu(U), mu_N, log n}`.
    pub fn mu_star(&self) -> f64 {
        self.mu_star
    }
}
