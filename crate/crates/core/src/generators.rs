//! Synthetic instances `A = U diag(spectrum) U^T + N` with controlled
//! coherence and structured noise.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{coherence, qr_orthonormalize, OrthonormalBasis};
use crate::rng::{gaussian_matrix, stream};
use crate::textio::{load_matrix, save_matrix, KeyValues};
use crate::truth::GroundTruth;

/// Draws allowed before [`gen_incoherent_basis`] gives up.
pub const MAX_BASIS_ATTEMPTS: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub enum NoiseSpec {
    None,
    /// `||N||_F = fraction ||A||_F` at most, subject to the `mu_n` ceiling.
    Frobenius { fraction: f64, mu_n: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceSpec {
    pub n: usize,
    pub k: usize,
    /// Nonincreasing, positive, length `k`.
    pub spectrum: Vec<f64>,
    pub mu_target: f64,
    pub noise: NoiseSpec,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decay {
    Linear,
    Geometric,
}

/// `k` values from `condition` down to 1.
pub fn spectrum_profile(k: usize, condition: f64, decay: Decay) -> Result<Vec<f64>> {
    if k == 0 || !(condition >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need k >= 1 and condition >= 1, got k = {k}, condition = {condition}"
        )));
    }
    if k == 1 {
        return Ok(vec![1.0]);
    }
    let last = (k - 1) as f64;
    Ok((0..k)
        .map(|i| {
            let frac = (last - i as f64) / last;
            match decay {
                Decay::Linear => 1.0 + (condition - 1.0) * frac,
                Decay::Geometric => condition.powf(frac),
            }
        })
        .collect())
}

const SPEC_KEYS: &[&str] = &[
    "n",
    "k",
    "spectrum",
    "condition",
    "decay",
    "mu_target",
    "noise_fraction",
    "mu_n",
    "seed",
];

impl InstanceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.n {
            return Err(Error::InvalidArgument(format!("rank {} out of range for n = {}", self.k, self.n)));
        }
        if self.spectrum.len() != self.k {
            return Err(Error::InvalidArgument(format!(
                "spectrum has {} values for k = {}",
                self.spectrum.len(),
                self.k
            )));
        }
        if self.spectrum.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument("spectrum values must be positive".into()));
        }
        if self.spectrum.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidArgument("spectrum must be nonincreasing".into()));
        }
        if let NoiseSpec::Frobenius { fraction, mu_n } = self.noise {
            if !(0.0..1.0).contains(&fraction) {
                return Err(Error::InvalidArgument(format!("noise fraction {fraction} outside [0, 1)")));
            }
            if !(mu_n > 0.0) && fraction > 0.0 {
                return Err(Error::NoiseInfeasible(format!("mu_n must be positive, got {mu_n}")));
            }
        }
        Ok(())
    }

    /// Reads keys `n`, `k`, `spectrum` (or `condition` with optional
    /// `decay = linear|geometric`), `mu_target`, `noise_fraction`, `mu_n`, `seed`.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        kv.ensure_known(SPEC_KEYS)?;
        let n: usize = kv.require("n")?;
        let k: usize = kv.require("k")?;
        let spectrum = match kv.list::<f64>("spectrum")? {
            Some(s) => s,
            None => {
                let condition: f64 = kv.get_or("condition", 1.0)?;
                let decay = match kv.str("decay").unwrap_or("linear") {
                    "linear" => Decay::Linear,
                    "geometric" => Decay::Geometric,
                    other => return Err(Error::Parse(format!("unknown decay {other:?}"))),
                };
                spectrum_profile(k, condition, decay)?
            }
        };
        let mu_target = kv.get_or("mu_target", n as f64 / k.max(1) as f64)?;
        let fraction: f64 = kv.get_or("noise_fraction", 0.0)?;
        let noise = if fraction == 0.0 {
            NoiseSpec::None
        } else {
            NoiseSpec::Frobenius {
                fraction,
                mu_n: kv.require("mu_n")?,
            }
        };
        let spec = Self {
            n,
            k,
            spectrum,
            mu_target,
            noise,
            seed: kv.get_or("seed", 0)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_key_values(&KeyValues::load(path)?)
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("n", self.n);
        kv.set("k", self.k);
        let s: Vec<String> = self.spectrum.iter().map(|v| format!("{v:?}")).collect();
        kv.set("spectrum", s.join(", "));
        kv.set("mu_target", format!("{:?}", self.mu_target));
        if let NoiseSpec::Frobenius { fraction, mu_n } = self.noise {
            kv.set("noise_fraction", format!("{fraction:?}"));
            kv.set("mu_n", format!("{mu_n:?}"));
        }
        kv.set("seed", self.seed);
        kv
    }
}

/// QR of an `n x k` Gaussian matrix, redrawn until `mu(U) <= mu_target`.
pub fn gen_incoherent_basis<R: Rng + ?Sized>(
    n: usize,
    k: usize,
    mu_target: f64,
    rng: &mut R,
) -> Result<OrthonormalBasis> {
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("rank {k} out of range for n = {n}")));
    }
    if !(mu_target >= 1.0) {
        return Err(Error::CoherenceUnachievable {
            target: mu_target,
            attempts: 0,
            best: f64::NAN,
        });
    }
    let mut best = f64::INFINITY;
    for _ in 0..MAX_BASIS_ATTEMPTS {
        let Ok((u, _)) = qr_orthonormalize(&gaussian_matrix(n, k, 1.0, rng)) else {
            continue;
        };
        let mu = coherence(&u);
        if mu <= mu_target {
            return Ok(u);
        }
        best = best.min(mu);
    }
    Err(Error::CoherenceUnachievable {
        target: mu_target,
        attempts: MAX_BASIS_ATTEMPTS,
        best,
    })
}

#[derive(Clone, Debug)]
pub struct GeneratedNoise {
    pub noise: DMatrix<f64>,
    /// `||N||_F / ||A||_F`.
    pub achieved_fraction: f64,
    /// Smallest `mu_N` satisfying both noise bounds for this `N`.
    pub achieved_mu_n: f64,
}

fn project_out(u: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
    let left = z - u * (u.transpose() * z);
    let both = &left - (&left * u) * u.transpose();
    (&both + both.transpose()) * 0.5
}

/// Symmetric Gaussian noise projected onto the complement of `range(U)` on
/// both sides, scaled so that `||N||_F = fraction ||A||_F`, then shrunk if
/// needed to satisfy
///
/// `max_i ||e_i^T N||^2 <= (mu_n/n) sigma_k^2` and `max_ij |N_ij| <= (mu_n/n) ||A||_F`.
pub fn gen_noise<R: Rng + ?Sized>(
    u: &OrthonormalBasis,
    spectrum: &[f64],
    fraction: f64,
    mu_n: f64,
    rng: &mut R,
) -> Result<GeneratedNoise> {
    let n = u.n();
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!("noise fraction {fraction} outside [0, 1)")));
    }
    if fraction == 0.0 {
        return Ok(GeneratedNoise {
            noise: DMatrix::zeros(n, n),
            achieved_fraction: 0.0,
            achieved_mu_n: 0.0,
        });
    }
    if !(mu_n > 0.0) {
        return Err(Error::NoiseInfeasible(format!("mu_n must be positive, got {mu_n}")));
    }
    if u.k() == n {
        return Err(Error::NoiseInfeasible("U spans the whole space".into()));
    }

    let m_frob = spectrum.iter().map(|s| s * s).sum::<f64>().sqrt();
    let sigma_k = spectrum.iter().map(|s| s.abs()).fold(f64::INFINITY, f64::min);
    let g = gaussian_matrix(n, n, 1.0, rng);
    let base = project_out(u.matrix(), &(&g + g.transpose()));
    let base = project_out(u.matrix(), &base);
    let f0 = base.norm();
    let e0 = base.amax();
    let r0 = base.row_iter().map(|r| r.norm()).fold(0.0_f64, f64::max);
    let c = mu_n / n as f64;

    // M and N are Frobenius-orthogonal, so ||A||_F^2 = ||M||_F^2 + s^2 f0^2.
    let target = fraction * m_frob / ((1.0 - fraction * fraction).sqrt() * f0);
    let row_cap = c.sqrt() * sigma_k / r0;
    let entry_cap = if e0 <= c * f0 {
        f64::INFINITY
    } else {
        c * m_frob / (e0 * e0 - c * c * f0 * f0).sqrt()
    };
    let s = if target <= row_cap.min(entry_cap) {
        target
    } else {
        row_cap.min(entry_cap) * (1.0 - 1e-9)
    };
    let noise = base * s;
    let a_frob = (m_frob * m_frob + s * s * f0 * f0).sqrt();
    let achieved_fraction = s * f0 / a_frob;
    if achieved_fraction < fraction / 2.0 {
        return Err(Error::NoiseInfeasible(format!(
            "mu_n = {mu_n} allows a noise fraction of only {achieved_fraction:.4}, requested {fraction}"
        )));
    }
    let row_mu = n as f64 * (s * r0).powi(2) / (sigma_k * sigma_k);
    let entry_mu = n as f64 * s * e0 / a_frob;
    Ok(GeneratedNoise {
        noise,
        achieved_fraction,
        achieved_mu_n: row_mu.max(entry_mu),
    })
}

/// `Q diag(eigs) Q^T` with Haar-random orthogonal `Q`.
pub fn symmetric_with_spectrum<R: Rng + ?Sized>(eigs: &[f64], rng: &mut R) -> Result<DMatrix<f64>> {
    let n = eigs.len();
    let (q, _) = qr_orthonormalize(&gaussian_matrix(n, n, 1.0, rng))?;
    let q = q.into_matrix();
    let a = &q * DMatrix::from_diagonal(&DVector::from_column_slice(eigs)) * q.transpose();
    Ok((&a + a.transpose()) * 0.5)
}

/// `n` eigenvalues with `sigma_k = 1` and `sigma_{k+1} = 1 - gamma`: the top
/// `k` fall linearly from 2 to 1, the rest linearly from `1 - gamma` towards 0.
pub fn gapped_spectrum(n: usize, k: usize, gamma: f64) -> Result<Vec<f64>> {
    if k == 0 || k >= n || !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidArgument(format!("need 1 <= k < n and gamma in (0, 1], got n = {n}, k = {k}, gamma = {gamma}")));
    }
    let mut eigs = if k == 1 {
        vec![1.0]
    } else {
        spectrum_profile(k, 2.0, Decay::Linear)?
    };
    let rest = n - k;
    eigs.extend((0..rest).map(|j| (1.0 - gamma) * (rest - j) as f64 / rest as f64));
    Ok(eigs)
}

/// Builds the instance described by `spec`. The basis and the noise draw
/// from separate streams derived from `spec.seed`.
pub fn generate_instance(spec: &InstanceSpec) -> Result<GroundTruth> {
    spec.validate()?;
    let u = gen_incoherent_basis(spec.n, spec.k, spec.mu_target, &mut stream(spec.seed, "basis", 0))?;
    let (noise, ceiling) = match spec.noise {
        NoiseSpec::None => (DMatrix::zeros(spec.n, spec.n), None),
        NoiseSpec::Frobenius { fraction, mu_n } => {
            let g = gen_noise(&u, &spec.spectrum, fraction, mu_n, &mut stream(spec.seed, "noise", 0))?;
            (g.noise, Some(mu_n))
        }
    };
    GroundTruth::new(u, spec.spectrum.clone(), noise, ceiling)
}

const INSTANCE_META: &str = "instance.cfg";
const INSTANCE_SPECTRUM: &str = "spectrum.txt";
const INSTANCE_BASIS: &str = "basis.txt";
const INSTANCE_NOISE: &str = "noise.txt";

/// Writes `instance.cfg`, `spectrum.txt`, `basis.txt` and `noise.txt` into `dir`.
pub fn save_instance(truth: &GroundTruth, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut meta = KeyValues::default();
    meta.set("n", truth.n());
    meta.set("k", truth.k());
    meta.set("mu_n", format!("{:?}", truth.mu_n()));
    std::fs::write(dir.join(INSTANCE_META), meta.render())?;
    save_matrix(
        &DMatrix::from_column_slice(truth.k(), 1, truth.lambda_u()),
        &dir.join(INSTANCE_SPECTRUM),
    )?;
    save_matrix(truth.u().matrix(), &dir.join(INSTANCE_BASIS))?;
    save_matrix(truth.noise(), &dir.join(INSTANCE_NOISE))?;
    Ok(())
}

pub fn load_instance(dir: &Path) -> Result<GroundTruth> {
    let meta = KeyValues::load(&dir.join(INSTANCE_META))?;
    let n: usize = meta.require("n")?;
    let k: usize = meta.require("k")?;
    let mu_n: f64 = meta.require("mu_n")?;
    let spectrum = load_matrix(&dir.join(INSTANCE_SPECTRUM))?;
    let basis = load_matrix(&dir.join(INSTANCE_BASIS))?;
    let noise = load_matrix(&dir.join(INSTANCE_NOISE))?;
    if spectrum.shape() != (k, 1) || basis.shape() != (n, k) || noise.shape() != (n, n) {
        return Err(Error::Parse("instance files disagree with instance.cfg".into()));
    }
    let ceiling = if noise.iter().all(|&v| v == 0.0) { None } else { Some(mu_n) };
    GroundTruth::new(
        OrthonormalBasis::new(basis)?,
        spectrum.as_slice().to_vec(),
        noise,
        ceiling,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn basis_meets_target() {
        let u = gen_incoherent_basis(200, 2, 10.0, &mut seeded(1)).unwrap();
        assert!(coherence(&u) <= 10.0);
        let full = gen_incoherent_basis(6, 6, 1.0 + 1e-9, &mut seeded(2)).unwrap();
        assert!((coherence(&full) - 1.0).abs() < 1e-9);
        assert!(matches!(
            gen_incoherent_basis(10, 2, 0.5, &mut seeded(3)),
            Err(Error::CoherenceUnachievable { .. })
        ));
    }

    #[test]
    fn zero_fraction_gives_zero_noise() {
        let u = gen_incoherent_basis(20, 2, 10.0, &mut seeded(4)).unwrap();
        let g = gen_noise(&u, &[2.0, 1.0], 0.0, 1.0, &mut seeded(5)).unwrap();
        assert!(g.noise.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn noise_is_orthogonal_and_on_target() {
        let spectrum = [3.0, 2.0, 1.0];
        let u = gen_incoherent_basis(300, 3, 300.0, &mut seeded(6)).unwrap();
        let g = gen_noise(&u, &spectrum, 0.05, 5.0, &mut seeded(7)).unwrap();
        assert!((u.matrix().transpose() * &g.noise).amax() < 1e-9);
        let t = GroundTruth::new(u, spectrum.to_vec(), g.noise.clone(), Some(5.0)).unwrap();
        let ratio = g.noise.norm() / t.a().norm();
        assert!((0.04..=0.06).contains(&ratio), "{ratio}");
        assert!((ratio - g.achieved_fraction).abs() < 1e-12);
    }

    #[test]
    fn tight_ceiling_is_infeasible() {
        let u = gen_incoherent_basis(100, 2, 100.0, &mut seeded(8)).unwrap();
        let r = gen_noise(&u, &[1.0, 1.0], 0.5, 1e-4, &mut seeded(9));
        assert!(matches!(r, Err(Error::NoiseInfeasible(_))));
    }

    #[test]
    fn profiles() {
        assert_eq!(spectrum_profile(3, 2.0, Decay::Linear).unwrap(), vec![2.0, 1.5, 1.0]);
        let g = spectrum_profile(3, 4.0, Decay::Geometric).unwrap();
        assert!((g[0] - 4.0).abs() < 1e-12 && (g[1] - 2.0).abs() < 1e-12 && (g[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spec_round_trip_and_spectrum_exact() {
        let kv = KeyValues::parse("n = 40\nk = 2\ncondition = 3\nmu_target = 20\nnoise_fraction = 0.05\nmu_n = 10\nseed = 5\n").unwrap();
        let spec = InstanceSpec::from_key_values(&kv).unwrap();
        assert_eq!(InstanceSpec::from_key_values(&spec.to_key_values()).unwrap(), spec);
        let truth = generate_instance(&spec).unwrap();
        let m_eigs = crate::linalg::eigen_by_magnitude(truth.m()).unwrap().0;
        assert!((m_eigs[0] - 3.0).abs() < 1e-10 && (m_eigs[1] - 1.0).abs() < 1e-10);
        assert!(m_eigs[2].abs() < 1e-10);
    }

    #[test]
    fn instance_files_round_trip() {
        let spec = InstanceSpec {
            n: 30,
            k: 2,
            spectrum: vec![2.0, 1.0],
            mu_target: 15.0,
            noise: NoiseSpec::Frobenius { fraction: 0.1, mu_n: 20.0 },
            seed: 3,
        };
        let truth = generate_instance(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_instance(&truth, dir.path()).unwrap();
        let back = load_instance(dir.path()).unwrap();
        assert_eq!(back.a(), truth.a());
        assert_eq!(back.mu_n(), truth.mu_n());
    }
}
