//! Truncated spectral initialization.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{coherence, ensure_symmetric, qr_orthonormalize, smallest_singular_value, OrthonormalBasis};
use crate::rng::gaussian_matrix;
use crate::sampling::{p_omega, ObservedSample};

#[derive(Clone, Debug)]
pub struct InitReport {
    pub x0: OrthonormalBasis,
    /// `||V^T X_0||` (spectral) when a reference basis `U` was supplied.
    pub sin_theta: Option<f64>,
    /// `||V^T X_0||_F` when a reference basis `U` was supplied.
    pub sin_theta_frob: Option<f64>,
    pub coherence: f64,
    /// `sqrt(8 mu log n / n)`.
    pub clip_level: f64,
    /// `sigma_k` of the clipped matrix before orthonormalization.
    pub t_min_singular: f64,
}

/// `ceil(10 log n / gamma)` power-method steps.
pub fn default_power_iters(n: usize, gamma: f64) -> usize {
    let g = if gamma > 0.0 { gamma } else { 1.0 };
    ((10.0 * (n.max(2) as f64).ln() / g).ceil() as usize).max(1)
}

/// Subspace iteration on `B` from a Gaussian start, orthonormalizing after
/// every multiplication.
pub fn power_method_topk<R: Rng + ?Sized>(
    b: &DMatrix<f64>,
    k: usize,
    iters: usize,
    rng: &mut R,
) -> Result<OrthonormalBasis> {
    let n = b.nrows();
    if b.ncols() != n {
        return Err(Error::DimensionMismatch("power method needs a square matrix".into()));
    }
    if iters == 0 {
        return Err(Error::InvalidArgument("power method needs at least one iteration".into()));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("rank {k} out of range for n = {n}")));
    }
    let collapse = |step, e| match e {
        Error::RankDeficient { sigma_k } => Error::RankFailure { step, sigma_k },
        other => other,
    };
    let mut x = qr_orthonormalize(&gaussian_matrix(n, k, 1.0, rng))
        .map_err(|e| collapse(Some(0), e))?
        .0;
    for step in 1..=iters {
        x = qr_orthonormalize(&(b * x.matrix()))
            .map_err(|e| collapse(Some(step), e))?
            .0;
    }
    Ok(x)
}

/// Haar-distributed `k x k` orthogonal matrix: QR of a Gaussian matrix with
/// the diagonal of `R` made nonnegative.
pub fn random_orthonormal<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    if k == 0 {
        return Err(Error::InvalidArgument("rotation dimension must be positive".into()));
    }
    loop {
        if let Ok((q, _)) = qr_orthonormalize(&gaussian_matrix(k, k, 1.0, rng)) {
            return Ok(q.into_matrix());
        }
    }
}

/// Entrywise projection onto `[-c, c]`.
pub fn clip_entries(w: &DMatrix<f64>, c: f64) -> DMatrix<f64> {
    w.map(|v| v.clamp(-c, c))
}

pub fn clip_level(n: usize, mu: f64) -> f64 {
    (8.0 * mu * (n as f64).ln() / n as f64).sqrt()
}

/// Sampling rate `C k (k mu(U) + mu_N) (||A||_F / (gamma sigma_k))^2 log n / n`
/// for the initialization guarantee. Not clamped to 1.
pub fn init_sample_rate(truth: &crate::truth::GroundTruth, c: f64) -> f64 {
    let n = truth.n() as f64;
    let k = truth.k() as f64;
    let ratio = truth.a().norm() / (truth.gamma_k() * truth.sigma_k());
    c * k * (k * truth.mu_u() + truth.mu_n()) * ratio * ratio * n.ln() / n
}

/// Top-`k` power method on `P_Omega(A)`, random rotation, clipping at
/// `sqrt(8 mu log n / n)`, then QR. `reference` is the true `U`, used only
/// to fill the diagnostic angles.
pub fn initialize<R: Rng + ?Sized>(
    sample: &ObservedSample,
    k: usize,
    mu: f64,
    iters: usize,
    rng: &mut R,
    reference: Option<&OrthonormalBasis>,
) -> Result<InitReport> {
    if !(mu >= 1.0) {
        return Err(Error::InvalidArgument(format!("coherence estimate must be at least 1, got {mu}")));
    }
    let n = sample.n();
    let b = p_omega(sample);
    ensure_symmetric(&b)?;
    let w = power_method_topk(&b, k, iters, rng)?;
    let rotated = w.matrix() * random_orthonormal(k, rng)?;
    let c = clip_level(n, mu);
    let t = clip_entries(&rotated, c);
    let t_min_singular = smallest_singular_value(&t);
    let x0 = qr_orthonormalize(&t)
        .map_err(|e| match e {
            Error::RankDeficient { sigma_k } => Error::RankFailure { step: Some(0), sigma_k },
            other => other,
        })?
        .0;

    let (sin_theta, sin_theta_frob) = match reference {
        Some(u) => {
            if u.n() != n {
                return Err(Error::DimensionMismatch("reference basis has wrong dimension".into()));
            }
            let resid = x0.matrix() - u.matrix() * (u.matrix().transpose() * x0.matrix());
            (Some(crate::linalg::spectral_norm(&resid)), Some(resid.norm()))
        }
        None => (None, None),
    };
    Ok(InitReport {
        coherence: coherence(&x0),
        x0,
        sin_theta,
        sin_theta_frob,
        clip_level: c,
        t_min_singular,
    })
}
