//! Smoothed alternating least squares and the rectangular dilation.
//!
//! The driver splits the sample into an initialization piece and `L`
//! step pieces, runs the truncated spectral initialization, then alternates
//! a median least-squares update with smoothed orthonormalization. With
//! [`Schedule::Reuse`] the whole sample is used at every stage instead.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::initialize::{default_power_iters, initialize, InitReport};
use crate::least_squares::{default_median_copies, ls_update, median_ls};
use crate::linalg::{coherence, spectral_norm, OrthonormalBasis};
use crate::nsi::{ConvergenceTrace, SpectralTruth, TraceRecord};
use crate::rng::stream;
use crate::sampling::{split, ObservedSample};
use crate::smooth_qr::smooth_qr;
use crate::truth::GroundTruth;

/// How observations are allotted to the stages of the algorithm.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    /// Independent pieces: `split(Omega, 2)` for initialization, then
    /// `split(Omega', L)` for the steps, each step splitting again `t` ways.
    Fresh,
    /// The full sample at every stage, one least-squares solve per step.
    Reuse,
}

impl std::str::FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fresh" => Ok(Self::Fresh),
            "reuse" => Ok(Self::Reuse),
            other => Err(Error::Parse(format!("unknown schedule {other:?}"))),
        }
    }
}

impl std::fmt::Display for Schedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Fresh => "fresh",
            Self::Reuse => "reuse",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaltlsConfig {
    pub k: usize,
    pub eps: f64,
    /// Number of steps `L`.
    pub iterations: usize,
    /// Coherence target handed to the smoothing step.
    pub mu: f64,
    /// Coherence estimate handed to the initialization.
    pub mu_init: f64,
    pub t_median: usize,
    pub c_mu: f64,
    pub c_l: f64,
    pub power_iters: usize,
    pub schedule: Schedule,
    pub seed: u64,
}

impl SaltlsConfig {
    /// Parameters from [`default_parameters`], `t = ceil(3 log n)` and the
    /// default power-method budget.
    pub fn for_instance(
        n: usize,
        k: usize,
        eps: f64,
        gamma: f64,
        mu_star: f64,
        c_mu: f64,
        c_l: f64,
    ) -> Result<Self> {
        let (mu, iterations) = default_parameters(n as f64, k, eps, gamma, mu_star, c_mu, c_l)?;
        Ok(Self {
            k,
            eps,
            iterations,
            mu,
            mu_init: mu_star.max(1.0),
            t_median: default_median_copies(n),
            c_mu,
            c_l,
            power_iters: default_power_iters(n, gamma),
            schedule: Schedule::Fresh,
            seed: 0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.k == 0 {
            return bad("rank must be positive".into());
        }
        if !(self.eps > 0.0 && self.eps <= 0.5) {
            return bad(format!("eps = {} outside (0, 1/2]", self.eps));
        }
        if self.iterations == 0 {
            return bad("at least one iteration is required".into());
        }
        if !(self.mu >= 1.0) || !(self.mu_init >= 1.0) {
            return bad(format!("coherence parameters must be at least 1 (mu = {}, mu_init = {})", self.mu, self.mu_init));
        }
        if self.t_median == 0 {
            return Err(Error::InvalidSplit(0));
        }
        if self.power_iters == 0 {
            return bad("power method needs at least one iteration".into());
        }
        Ok(())
    }
}

/// `mu = c_mu k (mu* + log n) / gamma^2` and `L = ceil(c_L log(n/eps) / gamma)`,
/// with `L >= 1`.
pub fn default_parameters(
    n: f64,
    k: usize,
    eps: f64,
    gamma: f64,
    mu_star: f64,
    c_mu: f64,
    c_l: f64,
) -> Result<(f64, usize)> {
    if !(gamma > 0.0) {
        return Err(Error::GapUndefined { k });
    }
    if gamma > 1.0 || !(n > 0.0) || !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("need n > 0, eps > 0 and gamma <= 1 (n = {n}, eps = {eps}, gamma = {gamma})")));
    }
    let mu = c_mu * k as f64 * (mu_star + n.ln()) / (gamma * gamma);
    let raw = c_l * (n / eps).ln() / gamma;
    let iterations = ((raw - 1e-9).ceil().max(1.0)) as usize;
    Ok((mu, iterations))
}

/// Sampling rate `C k (k + log(n/eps)) mu(U) (||M||_F / sigma_k)^2 / n` for
/// exact completion. Not clamped to 1.
pub fn exact_sample_rate(truth: &GroundTruth, eps: f64, c: f64) -> f64 {
    let n = truth.n() as f64;
    let k = truth.k() as f64;
    let ratio = truth.m().norm() / truth.sigma_k();
    c * k * (k + (n / eps).ln()) * truth.mu_u() * ratio * ratio / n
}

/// Sampling rate
/// `C k (k + log(n/eps)) mu* ((||M||_F + ||N||_F / eps) / sigma_k)^2 / (gamma^5 n)`
/// for noisy completion. Not clamped to 1.
pub fn noisy_sample_rate(truth: &GroundTruth, eps: f64, c: f64) -> f64 {
    let n = truth.n() as f64;
    let k = truth.k() as f64;
    let ratio = (truth.m().norm() + truth.noise().norm() / eps) / truth.sigma_k();
    c * k * (k + (n / eps).ln()) * truth.mu_star() * ratio * ratio / (truth.gamma_k().powi(5) * n)
}

#[derive(Clone, Debug, PartialEq)]
pub enum SaltlsWarning {
    /// Smoothing stopped at the scale bound above the coherence target.
    CoherenceUnmet { step: usize, coherence: f64 },
}

#[derive(Clone, Debug)]
pub struct SaltlsOutput {
    /// `X_{L-1}`, the basis paired with `Y_L`.
    pub x: OrthonormalBasis,
    /// `Y_L`.
    pub y: DMatrix<f64>,
    /// `X_L`, reported for diagnostics.
    pub x_final: OrthonormalBasis,
    pub init: InitReport,
    /// Steps `0..=L` against the ground truth, when one was supplied.
    pub trace: Option<ConvergenceTrace>,
    pub warnings: Vec<SaltlsWarning>,
    /// Observation counts of the initialization piece and each step piece.
    pub sample_sizes: Vec<usize>,
}

fn with_step(step: usize, e: Error) -> Error {
    match e {
        Error::RankDeficient { sigma_k } | Error::RankFailure { sigma_k, .. } => Error::RankFailure {
            step: Some(step),
            sigma_k,
        },
        Error::ZeroInput => Error::RankFailure {
            step: Some(step),
            sigma_k: 0.0,
        },
        other => other,
    }
}

/// Runs the algorithm on `sample`. `truth`, when present, is used only to
/// record the convergence trace and the initialization angle.
pub fn salt_ls(
    sample: &ObservedSample,
    cfg: &SaltlsConfig,
    truth: Option<&GroundTruth>,
) -> Result<SaltlsOutput> {
    cfg.validate()?;
    let n = sample.n();
    if cfg.k > n {
        return Err(Error::InvalidArgument(format!("rank {} exceeds dimension {n}", cfg.k)));
    }
    if let Some(t) = truth {
        if t.n() != n || t.k() != cfg.k {
            return Err(Error::DimensionMismatch("ground truth does not match sample and rank".into()));
        }
    }
    let steps = cfg.iterations;

    let (init_piece, step_pieces): (ObservedSample, Vec<ObservedSample>) = match cfg.schedule {
        Schedule::Fresh => {
            let mut halves = split(sample, 2, &mut stream(cfg.seed, "split", 0))?;
            let rest = halves.pop().expect("two pieces");
            let first = halves.pop().expect("two pieces");
            (first, split(&rest, steps, &mut stream(cfg.seed, "split", 1))?)
        }
        Schedule::Reuse => (sample.clone(), Vec::new()),
    };
    let piece = |l: usize| -> &ObservedSample {
        match cfg.schedule {
            Schedule::Fresh => &step_pieces[l - 1],
            Schedule::Reuse => sample,
        }
    };
    let mut sample_sizes = vec![init_piece.len()];
    sample_sizes.extend((1..=steps).map(|l| piece(l).len()));

    let init = initialize(
        &init_piece,
        cfg.k,
        cfg.mu_init,
        cfg.power_iters,
        &mut stream(cfg.seed, "init", 0),
        truth.map(|t| t.u()),
    )
    .map_err(|e| with_step(0, e))?;

    let spectral = truth.map(SpectralTruth::from);
    let mut trace = match &spectral {
        Some(s) => Some(ConvergenceTrace {
            records: vec![TraceRecord::measure(0, &init.x0, None, 0.0, s)?],
        }),
        None => None,
    };

    let mut warnings = Vec::new();
    let mut prev = init.x0.clone();
    let mut x_before_last = init.x0.clone();
    let mut y_last = DMatrix::zeros(n, cfg.k);
    for l in 1..=steps {
        let y = match cfg.schedule {
            Schedule::Fresh => median_ls(piece(l), &prev, cfg.t_median, &mut stream(cfg.seed, "median", l as u64))?,
            Schedule::Reuse => ls_update(sample, &prev)?.y,
        };
        let smoothed = smooth_qr(&y, cfg.eps, cfg.mu, &mut stream(cfg.seed, "smooth", l as u64))
            .map_err(|e| with_step(l, e))?;
        if !smoothed.met_target {
            warnings.push(SaltlsWarning::CoherenceUnmet {
                step: l,
                coherence: coherence(&smoothed.x),
            });
        }
        if let (Some(tr), Some(s), Some(t)) = (trace.as_mut(), spectral.as_ref(), truth) {
            let g = &y - t.a() * prev.matrix();
            tr.records
                .push(TraceRecord::measure(l, &smoothed.x, Some(&g), spectral_norm(&smoothed.h), s)?);
        }
        x_before_last = std::mem::replace(&mut prev, smoothed.x);
        y_last = y;
    }

    Ok(SaltlsOutput {
        x: x_before_last,
        y: y_last,
        x_final: prev,
        init,
        trace,
        warnings,
        sample_sizes,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    /// `||(I - U U^T) X||`.
    pub subspace_err: f64,
    /// `||M - X Y^T||_F / ||A||_F`.
    pub frob_rel_err: f64,
}

pub fn reconstruct_and_score(x: &OrthonormalBasis, y: &DMatrix<f64>, truth: &GroundTruth) -> Result<Metrics> {
    let n = truth.n();
    if x.n() != n || y.nrows() != n || y.ncols() != x.k() {
        return Err(Error::DimensionMismatch("factors do not match the instance".into()));
    }
    let u = truth.u().matrix();
    let resid = x.matrix() - u * (u.transpose() * x.matrix());
    let err = truth.m() - x.matrix() * y.transpose();
    let a_norm = truth.a().norm();
    Ok(Metrics {
        subspace_err: spectral_norm(&resid),
        frob_rel_err: if a_norm > 0.0 { err.norm() / a_norm } else { err.norm() },
    })
}

/// Symmetric dilation `[[0, B], [B^T, 0]]` of an `m x n` matrix.
#[derive(Clone, Debug)]
pub struct Dilation {
    pub a: DMatrix<f64>,
    pub m: usize,
    pub n: usize,
}

pub fn dilate_rectangular(b: &DMatrix<f64>) -> Dilation {
    let (m, n) = b.shape();
    let mut a = DMatrix::zeros(m + n, m + n);
    a.view_mut((0, m), (m, n)).copy_from(b);
    a.view_mut((m, 0), (n, m)).copy_from(&b.transpose());
    Dilation { a, m, n }
}

impl Dilation {
    /// Splits an `(m+n) x k` factor into its `m`-row and `n`-row blocks.
    pub fn undilate(&self, factor: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if factor.nrows() != self.m + self.n {
            return Err(Error::DimensionMismatch(format!(
                "factor has {} rows, dilation has {}",
                factor.nrows(),
                self.m + self.n
            )));
        }
        let k = factor.ncols();
        Ok((
            factor.view((0, 0), (self.m, k)).into_owned(),
            factor.view((self.m, 0), (self.n, k)).into_owned(),
        ))
    }

    /// Estimate of `B` from factors of the dilation: the upper-right block
    /// of `X Y^T`.
    pub fn recover(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (x_top, _) = self.undilate(x)?;
        let (_, y_bottom) = self.undilate(y)?;
        Ok(x_top * y_bottom.transpose())
    }
}

/// Sample of the dilation built from observed entries `(i, j, B_ij)` of an
/// `m x n` matrix seen at rate `p`. Each entry of `B` fills the symmetric
/// pair `(i, m + j)`, `(m + j, i)`; pairs in the two zero blocks are
/// included independently with probability `p` so the result follows the
/// symmetric Bernoulli model.
pub fn dilate_sample<R: Rng + ?Sized>(
    m: usize,
    n: usize,
    p: f64,
    entries: &[(usize, usize, f64)],
    rng: &mut R,
) -> Result<ObservedSample> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidProbability(p));
    }
    if let Some(&(i, j, _)) = entries.iter().find(|&&(i, j, _)| i >= m || j >= n) {
        return Err(Error::DimensionMismatch(format!("entry ({i}, {j}) outside {m}x{n}")));
    }
    let mut pairs: Vec<(usize, usize, f64)> = entries.iter().map(|&(i, j, v)| (i, m + j, v)).collect();
    let blocks = [(0, m), (m, m + n)];
    for (lo, hi) in blocks {
        for i in lo..hi {
            for j in i..hi {
                if rng.random::<f64>() < p {
                    pairs.push((i, j, 0.0));
                }
            }
        }
    }
    ObservedSample::from_pairs(m + n, p, pairs)
}

/// Picks the rank cut at the largest relative gap `1 - s_{i+1}/s_i` among
/// the leading `k_max` values, ignoring values below `eps s_1 / k_max`.
pub fn select_rank_by_gap(spectrum: &[f64], k_max: usize, eps: f64) -> Result<usize> {
    let mut s: Vec<f64> = spectrum.iter().map(|v| v.abs()).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    if s.is_empty() || k_max == 0 || !(s[0] > 0.0) {
        return Err(Error::InvalidArgument("rank selection needs a nonzero spectrum and k_max >= 1".into()));
    }
    let floor = eps * s[0] / k_max as f64;
    let mut best = (1, f64::NEG_INFINITY);
    for i in 1..=k_max.min(s.len()) {
        if s[i - 1] < floor {
            break;
        }
        let next = s.get(i).copied().unwrap_or(0.0);
        let next = if next < floor { 0.0 } else { next };
        let gap = 1.0 - next / s[i - 1];
        if gap > best.1 {
            best = (i, gap);
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{generate_instance, InstanceSpec, NoiseSpec};
    use crate::sampling::bernoulli_sample;

    #[test]
    fn parameter_formula() {
        let e = std::f64::consts::E;
        let (mu, l) = default_parameters(e, 1, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        assert!((mu - 2.0).abs() < 1e-12);
        assert_eq!(l, 1);
        let (mu2, _) = default_parameters(e, 1, 1.0, 1.0, 1.0, 2.0, 1.0).unwrap();
        assert_eq!(mu2, 2.0 * mu);
        assert!(matches!(default_parameters(10.0, 2, 0.1, 0.0, 1.0, 1.0, 1.0), Err(Error::GapUndefined { k: 2 })));
    }

    fn exact_instance(n: usize, k: usize, seed: u64) -> GroundTruth {
        generate_instance(&InstanceSpec {
            n,
            k,
            spectrum: (0..k).map(|i| 2.0 - i as f64 / k as f64).collect(),
            mu_target: n as f64 / k as f64 + 1e-9,
            noise: NoiseSpec::None,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn full_observation_reuse_is_exact() {
        let t = exact_instance(60, 3, 1);
        let s = bernoulli_sample(t.a(), 1.0, &mut crate::rng::seeded(2)).unwrap();
        let mut cfg = SaltlsConfig::for_instance(60, 3, 1e-3, 1.0, t.mu_star(), 1.0, 4.0).unwrap();
        cfg.schedule = Schedule::Reuse;
        cfg.iterations = 5;
        let out = salt_ls(&s, &cfg, Some(&t)).unwrap();
        let m = reconstruct_and_score(&out.x, &out.y, &t).unwrap();
        assert!(m.subspace_err < 1e-8 && m.frob_rel_err < 1e-8, "{m:?}");
        assert_eq!(out.trace.unwrap().len(), 6);
    }

    #[test]
    fn full_rank_target() {
        let t = exact_instance(5, 5, 3);
        let s = bernoulli_sample(t.a(), 1.0, &mut crate::rng::seeded(4)).unwrap();
        let cfg = SaltlsConfig {
            k: 5,
            eps: 0.1,
            iterations: 2,
            mu: 1.0,
            mu_init: 1.0,
            t_median: 1,
            c_mu: 1.0,
            c_l: 4.0,
            power_iters: 5,
            schedule: Schedule::Reuse,
            seed: 0,
        };
        let out = salt_ls(&s, &cfg, None).unwrap();
        assert!((&out.y - t.a() * out.x.matrix()).amax() < 1e-10);
        assert!((out.x.matrix() * out.y.transpose() - t.a()).amax() < 1e-10);
    }

    #[test]
    fn fresh_schedule_runs_and_reports_output_pair() {
        let t = exact_instance(80, 2, 5);
        let s = bernoulli_sample(t.a(), 0.9, &mut crate::rng::seeded(6)).unwrap();
        let mut cfg = SaltlsConfig::for_instance(80, 2, 0.1, 1.0, t.mu_star(), 1.0, 1.0).unwrap();
        cfg.t_median = 1;
        cfg.iterations = 3;
        let out = salt_ls(&s, &cfg, Some(&t)).unwrap();
        assert_eq!(out.sample_sizes.len(), 4);
        let trace = out.trace.unwrap();
        assert_eq!(trace.len(), 4);
        assert!(out.sample_sizes.iter().sum::<usize>() <= 2 * s.len());
        // x is the second-to-last iterate.
        assert!((trace.records[2].sin - reconstruct_and_score(&out.x, &out.y, &t).unwrap().subspace_err).abs() < 1e-12);
    }

    #[test]
    fn score_of_exact_factors() {
        let t = exact_instance(20, 2, 7);
        let y = t.u().matrix() * DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(t.lambda_u()));
        let m = reconstruct_and_score(t.u(), &y, &t).unwrap();
        assert!(m.subspace_err < 1e-10 && m.frob_rel_err < 1e-10);
        let zero = reconstruct_and_score(t.u(), &DMatrix::zeros(20, 2), &t).unwrap();
        assert!((zero.frob_rel_err - t.m().norm() / t.a().norm()).abs() < 1e-12);
    }

    #[test]
    fn dilation_basics() {
        let d = dilate_rectangular(&DMatrix::from_element(1, 1, 3.0));
        assert_eq!(d.a, DMatrix::from_row_slice(2, 2, &[0.0, 3.0, 3.0, 0.0]));
        let z = dilate_rectangular(&DMatrix::zeros(2, 3));
        assert!(z.a.iter().all(|&v| v == 0.0));
        let f = DMatrix::from_fn(5, 1, |r, _| r as f64);
        let (top, bottom) = z.undilate(&f).unwrap();
        assert_eq!(top.as_slice(), &[0.0, 1.0]);
        assert_eq!(bottom.as_slice(), &[2.0, 3.0, 4.0]);
    }

    #[test]
    fn dilated_sample_is_symmetric_and_places_entries() {
        let s = dilate_sample(2, 3, 1.0, &[(1, 2, 7.0)], &mut crate::rng::seeded(8)).unwrap();
        assert_eq!(s.get(1, 4), Some(7.0));
        assert_eq!(s.get(4, 1), Some(7.0));
        assert_eq!(s.get(0, 1), Some(0.0));
        assert!(dilate_sample(2, 3, 1.0, &[(2, 0, 1.0)], &mut crate::rng::seeded(8)).is_err());
    }

    #[test]
    fn gap_selection() {
        assert_eq!(select_rank_by_gap(&[10.0, 9.0, 1.0, 0.9], 3, 0.1).unwrap(), 2);
        // Values under eps s_1 / k_max count as noise.
        assert_eq!(select_rank_by_gap(&[100.0, 50.0, 1e-3, 1e-4], 3, 0.01).unwrap(), 2);
        assert_eq!(select_rank_by_gap(&[1.0], 3, 0.1).unwrap(), 1);
    }
}
