//! Smoothed orthonormalization: perturb `Y` with Gaussian noise of doubling
//! scale until the orthonormal factor meets a coherence target.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{coherence, qr_orthonormalize, smallest_singular_value, spectral_norm, OrthonormalBasis};
use crate::rng::gaussian_matrix;

/// Extra attempts at the same scale when `QR(Y + H)` loses rank.
const RANK_RETRIES: usize = 3;

#[derive(Clone, Debug)]
pub struct SmoothQrResult {
    pub x: OrthonormalBasis,
    /// Perturbation behind `x`; zero when the loop never ran.
    pub h: DMatrix<f64>,
    /// Scale of the last perturbation drawn (the initial scale if none was).
    pub final_sigma: f64,
    pub rounds: usize,
    pub met_target: bool,
    /// Scale used in each round, in order.
    pub sigmas: Vec<f64>,
}

/// Runs the smoothing loop on `Y` with accuracy `eps` and coherence target `mu`.
///
/// Starts from `X = QR(Y)` at scale `sigma = eps ||Y|| / n` and, while
/// `mu(X) > mu` and `sigma <= ||Y||`, redraws `H ~ N(0, sigma^2/n)`, sets
/// `X = QR(Y + H)` and doubles `sigma`.
pub fn smooth_qr<R: Rng + ?Sized>(
    y: &DMatrix<f64>,
    eps: f64,
    mu: f64,
    rng: &mut R,
) -> Result<SmoothQrResult> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    if !(mu >= 1.0) {
        return Err(Error::InvalidArgument(format!("coherence target must be at least 1, got {mu}")));
    }
    let (n, k) = y.shape();
    let norm_y = spectral_norm(y);
    if norm_y == 0.0 {
        return Err(Error::ZeroInput);
    }

    let mut sigma = eps * norm_y / n as f64;
    let mut h = DMatrix::zeros(n, k);
    let mut current = qr_orthonormalize(y).ok().map(|(q, _)| q);
    let mut last_sigma_k = 0.0;
    let mut sigmas = Vec::new();

    while current.as_ref().map_or(true, |x| coherence(x) > mu) && sigma <= norm_y {
        let mut attempt = 0;
        loop {
            let draw = gaussian_matrix(n, k, sigma / (n as f64).sqrt(), rng);
            match qr_orthonormalize(&(y + &draw)) {
                Ok((q, _)) => {
                    current = Some(q);
                    h = draw;
                    break;
                }
                Err(Error::RankDeficient { sigma_k }) if attempt < RANK_RETRIES => {
                    last_sigma_k = sigma_k;
                    attempt += 1;
                }
                Err(Error::RankDeficient { sigma_k }) => {
                    return Err(Error::RankFailure { step: None, sigma_k });
                }
                Err(e) => return Err(e),
            }
        }
        sigmas.push(sigma);
        sigma *= 2.0;
    }

    let x = current.ok_or(Error::RankFailure {
        step: None,
        sigma_k: last_sigma_k,
    })?;
    let met_target = coherence(&x) <= mu;
    let final_sigma = sigmas.last().copied().unwrap_or(sigma);
    Ok(SmoothQrResult {
        x,
        h,
        final_sigma,
        rounds: sigmas.len(),
        met_target,
        sigmas,
    })
}

/// `sigma_k((I - W W^T)(G + H))` where `removed = W` has orthonormal columns.
/// With `removed = None` no projection is applied.
pub fn projected_smallest_singular(
    g: &DMatrix<f64>,
    h: &DMatrix<f64>,
    removed: Option<&DMatrix<f64>>,
) -> f64 {
    let z = g + h;
    let projected = match removed {
        Some(w) => &z - w * (w.transpose() * &z),
        None => z,
    };
    smallest_singular_value(&projected)
}

/// Draws `H ~ N(0, tau^2/n)` and a Haar-random `k`-dimensional subspace `W`,
/// then returns `sigma_k` of `G + H` projected onto the complement of `W`.
pub fn smallest_singular_after_projection<R: Rng + ?Sized>(
    g: &DMatrix<f64>,
    tau: f64,
    rng: &mut R,
) -> Result<f64> {
    let (n, k) = g.shape();
    if k >= n {
        return Err(Error::DimensionMismatch(format!("need k < n, got {n}x{k}")));
    }
    let h = gaussian_matrix(n, k, tau / (n as f64).sqrt(), rng);
    let (w, _) = qr_orthonormalize(&gaussian_matrix(n, k, 1.0, rng))?;
    Ok(projected_smallest_singular(g, &h, Some(w.matrix())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn orthonormal_incoherent_input_is_untouched() {
        let y = DMatrix::from_element(8, 1, 1.0 / 8f64.sqrt());
        let r = smooth_qr(&y, 1e-3, 1.0 + 1e-9, &mut seeded(1)).unwrap();
        assert_eq!(r.rounds, 0);
        assert!(r.met_target);
        assert!(r.h.iter().all(|&v| v == 0.0));
        assert!((r.x.matrix() - &y).amax() < 1e-12);
    }

    #[test]
    fn vacuous_target_never_perturbs() {
        let y = OrthonormalBasis::standard(10, 2).unwrap().into_matrix();
        let r = smooth_qr(&y, 1e-3, 5.0, &mut seeded(2)).unwrap();
        assert_eq!(r.rounds, 0);
        assert!(r.h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scales_double_and_stop_at_norm() {
        let y = OrthonormalBasis::standard(50, 1).unwrap().into_matrix();
        // Target 1 is unreachable for a random vector, so the loop runs to the guard.
        let r = smooth_qr(&y, 1e-2, 1.0, &mut seeded(3)).unwrap();
        assert!(!r.met_target);
        let s0 = 1e-2 / 50.0;
        for (i, s) in r.sigmas.iter().enumerate() {
            assert_eq!(*s, s0 * 2f64.powi(i as i32));
        }
        assert!(r.sigmas.last().unwrap() <= &1.0);
        assert!(r.rounds as f64 <= (50.0f64 / 1e-2).log2().ceil() + 2.0);
        let recomputed = qr_orthonormalize(&(&y + &r.h)).unwrap().0;
        assert!((recomputed.matrix() - r.x.matrix()).amax() < 1e-8);
    }

    #[test]
    fn rank_deficient_input_recovers_through_noise() {
        let mut y = DMatrix::zeros(20, 2);
        y[(0, 0)] = 1.0;
        let r = smooth_qr(&y, 1e-3, 20.0, &mut seeded(4)).unwrap();
        assert!(r.rounds >= 1);
        assert!(matches!(smooth_qr(&DMatrix::zeros(4, 1), 1e-3, 2.0, &mut seeded(4)), Err(Error::ZeroInput)));
    }

    #[test]
    fn reproducible() {
        let y = crate::rng::gaussian_matrix(30, 2, 1.0, &mut seeded(5));
        let a = smooth_qr(&y, 1e-3, 1.2, &mut seeded(6)).unwrap();
        let b = smooth_qr(&y, 1e-3, 1.2, &mut seeded(6)).unwrap();
        assert_eq!(a.x.matrix(), b.x.matrix());
        assert_eq!(a.h, b.h);
    }

    #[test]
    fn no_noise_no_projection_returns_sigma_k() {
        let mut g = DMatrix::zeros(6, 2);
        g[(0, 0)] = 0.8;
        g[(1, 1)] = 0.3;
        let s = projected_smallest_singular(&g, &DMatrix::zeros(6, 2), None);
        assert!((s - 0.3).abs() < 1e-8);
    }
}
