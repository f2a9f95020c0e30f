//! Noisy subspace iteration `Y_l = A X_{l-1} + G_l`, `X_l = QR(Y_l)`, with
//! pluggable perturbations and per-step convergence traces.

use std::fmt;
use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{
    coherence, eigen_by_magnitude, principal_angle, qr_orthonormalize, relative_gap, spectral_norm,
    OrthonormalBasis,
};
use crate::rng::gaussian_matrix;
use crate::truth::GroundTruth;

/// Dominant invariant subspace of `A` and the spectral quantities that
/// govern the iteration. Instrumentation only; never read by the iteration.
#[derive(Clone, Debug)]
pub struct SpectralTruth {
    pub u: OrthonormalBasis,
    pub sigma_k: f64,
    pub sigma_k1: f64,
    pub gamma: f64,
}

impl SpectralTruth {
    /// Dense eigendecomposition of the symmetric `a`, keeping the `k`
    /// eigenvectors of largest `|lambda|`.
    pub fn from_matrix(a: &DMatrix<f64>, k: usize) -> Result<Self> {
        let (values, vectors) = eigen_by_magnitude(a)?;
        if k == 0 || k > values.len() {
            return Err(Error::InvalidArgument(format!("rank {k} out of range")));
        }
        let gamma = relative_gap(&values, k)?;
        let u = OrthonormalBasis::new(vectors.columns(0, k).into_owned())?;
        Ok(Self {
            u,
            sigma_k: values[k - 1],
            sigma_k1: values.get(k).copied().unwrap_or(0.0),
            gamma,
        })
    }

    /// `(1/32) gamma sigma_k (||V^T X|| + eps)`.
    pub fn admissibility_budget(&self, vnorm: f64, eps: f64) -> f64 {
        self.gamma * self.sigma_k * (vnorm + eps) / 32.0
    }

    fn complement_part(&self, g: &DMatrix<f64>) -> DMatrix<f64> {
        let u = self.u.matrix();
        g - u * (u.transpose() * g)
    }
}

impl From<&GroundTruth> for SpectralTruth {
    fn from(t: &GroundTruth) -> Self {
        Self {
            u: t.u().clone(),
            sigma_k: t.sigma_k(),
            sigma_k1: t.noise_norm(),
            gamma: t.gamma_k(),
        }
    }
}

type NoiseCallback = Box<dyn FnMut(usize, &OrthonormalBasis, &DMatrix<f64>) -> DMatrix<f64> + Send>;

/// Source of the per-step perturbation `G_l`.
pub enum NoiseModel {
    Zero,
    /// I.i.d. `N(0, scale^2 / n)` entries.
    Gaussian { scale: f64 },
    /// Gaussian direction rescaled to `factor` times the admissibility budget
    /// at the current iterate.
    AdmissibleGaussian { eps: f64, factor: f64 },
    /// Called with `(l, X_{l-1}, A)`.
    Adversarial(NoiseCallback),
}

impl fmt::Debug for NoiseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => write!(f, "Zero"),
            Self::Gaussian { scale } => write!(f, "Gaussian {{ scale: {scale} }}"),
            Self::AdmissibleGaussian { eps, factor } => {
                write!(f, "AdmissibleGaussian {{ eps: {eps}, factor: {factor} }}")
            }
            Self::Adversarial(_) => write!(f, "Adversarial(..)"),
        }
    }
}

impl NoiseModel {
    fn draw<R: Rng + ?Sized>(
        &mut self,
        step: usize,
        prev: &OrthonormalBasis,
        a: &DMatrix<f64>,
        truth: &SpectralTruth,
        rng: &mut R,
    ) -> Result<DMatrix<f64>> {
        let (n, k) = (prev.n(), prev.k());
        let g = match self {
            Self::Zero => DMatrix::zeros(n, k),
            Self::Gaussian { scale } => gaussian_matrix(n, k, *scale / (n as f64).sqrt(), rng),
            Self::AdmissibleGaussian { eps, factor } => {
                if !(*factor > 0.0 && *factor <= 1.0) {
                    return Err(Error::InvalidArgument(format!("admissible factor {factor} outside (0, 1]")));
                }
                let vnorm = spectral_norm(&truth.complement_part(prev.matrix()));
                let budget = truth.admissibility_budget(vnorm, *eps);
                let z = gaussian_matrix(n, k, 1.0, rng);
                let zn = spectral_norm(&z);
                z * (*factor * budget / zn)
            }
            Self::Adversarial(cb) => cb(step, prev, a),
        };
        if g.shape() != (n, k) {
            return Err(Error::DimensionMismatch(format!(
                "perturbation is {}x{}, expected {n}x{k}",
                g.nrows(),
                g.ncols()
            )));
        }
        Ok(g)
    }
}

/// One iterate's diagnostics. Step 0 is the starting point and carries no
/// perturbation.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub step: usize,
    pub sin: f64,
    pub cos: f64,
    /// `f64::INFINITY` when `U^T X` is singular.
    pub tan: f64,
    /// `||V^T X||`.
    pub vnorm: f64,
    pub gnorm: f64,
    pub ug_norm: f64,
    pub vg_norm: f64,
    /// Smoothing perturbation norm, zero outside SAltLS.
    pub hnorm: f64,
    pub mu: f64,
}

impl TraceRecord {
    pub fn measure(
        step: usize,
        x: &OrthonormalBasis,
        g: Option<&DMatrix<f64>>,
        hnorm: f64,
        truth: &SpectralTruth,
    ) -> Result<Self> {
        let angle = principal_angle(&truth.u, x)?;
        let (gnorm, ug_norm, vg_norm) = match g {
            Some(g) => (
                spectral_norm(g),
                spectral_norm(&(truth.u.matrix().transpose() * g)),
                spectral_norm(&truth.complement_part(g)),
            ),
            None => (0.0, 0.0, 0.0),
        };
        Ok(Self {
            step,
            sin: angle.sine,
            cos: angle.cosine,
            tan: angle.tangent,
            vnorm: angle.sine,
            gnorm,
            ug_norm,
            vg_norm,
            hnorm,
            mu: coherence(x),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConvergenceTrace {
    pub records: Vec<TraceRecord>,
}

fn fmt_float(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

impl ConvergenceTrace {
    pub const CSV_HEADER: &'static str = "step,sin,tan,vnorm,gnorm,mu";

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.step,
                fmt_float(r.sin),
                fmt_float(r.tan),
                fmt_float(r.vnorm),
                fmt_float(r.gnorm),
                fmt_float(r.mu)
            )?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }
}

/// Runs `L` steps of noisy subspace iteration, measuring against the
/// eigendecomposition of `a`.
pub fn nsi_run<R: Rng + ?Sized>(
    a: &DMatrix<f64>,
    k: usize,
    steps: usize,
    noise: &mut NoiseModel,
    x0: &OrthonormalBasis,
    rng: &mut R,
) -> Result<(OrthonormalBasis, ConvergenceTrace)> {
    let truth = SpectralTruth::from_matrix(a, k)?;
    nsi_run_with_truth(a, &truth, steps, noise, x0, rng)
}

pub fn nsi_run_with_truth<R: Rng + ?Sized>(
    a: &DMatrix<f64>,
    truth: &SpectralTruth,
    steps: usize,
    noise: &mut NoiseModel,
    x0: &OrthonormalBasis,
    rng: &mut R,
) -> Result<(OrthonormalBasis, ConvergenceTrace)> {
    let n = a.nrows();
    if a.ncols() != n || x0.n() != n || truth.u.n() != n || truth.u.k() != x0.k() {
        return Err(Error::DimensionMismatch("matrix, start and truth disagree".into()));
    }
    let mut trace = ConvergenceTrace::default();
    trace.records.push(TraceRecord::measure(0, x0, None, 0.0, truth)?);
    let mut x = x0.clone();
    for step in 1..=steps {
        let g = noise.draw(step, &x, a, truth, rng)?;
        let y = a * x.matrix() + &g;
        x = qr_orthonormalize(&y)
            .map_err(|e| match e {
                Error::RankDeficient { sigma_k } => Error::RankFailure { step: Some(step), sigma_k },
                other => other,
            })?
            .0;
        trace.records.push(TraceRecord::measure(step, &x, Some(&g), 0.0, truth)?);
    }
    Ok((x, trace))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Admissibility {
    pub admissible: bool,
    /// Budget minus `||G||`.
    pub slack: f64,
    pub budget: f64,
}

/// Checks `||G|| <= (1/32) gamma sigma_k ||V^T X_prev|| + (eps/32) gamma sigma_k`.
pub fn admissibility_check(
    g: &DMatrix<f64>,
    x_prev: &OrthonormalBasis,
    eps: f64,
    truth: &SpectralTruth,
) -> Admissibility {
    let vnorm = spectral_norm(&truth.complement_part(x_prev.matrix()));
    let budget = truth.admissibility_budget(vnorm, eps);
    let slack = budget - spectral_norm(g);
    Admissibility {
        admissible: slack >= -1e-12 * budget.max(1.0),
        slack,
        budget,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepVerdict {
    Holds,
    Violated { lhs: f64, rhs: f64 },
    PreconditionUnmet,
}

/// For each step `l >= 1` with `cos theta(U, X_{l-1}) >= 1/2 > ||U^T G_l|| / sigma_k`,
/// checks
///
/// `tan_l <= (sigma_{k+1} tan_{l-1} + 2 ||V^T G_l||) / (sigma_k - 2 ||U^T G_l||)`
///
/// up to a relative tolerance of `1e-6`.
pub fn one_step_bound_check(trace: &ConvergenceTrace, truth: &SpectralTruth) -> Vec<StepVerdict> {
    trace
        .records
        .windows(2)
        .map(|w| {
            let (prev, cur) = (&w[0], &w[1]);
            if prev.cos < 0.5 || cur.ug_norm / truth.sigma_k >= 0.5 || !prev.tan.is_finite() {
                return StepVerdict::PreconditionUnmet;
            }
            let rhs = (truth.sigma_k1 * prev.tan + 2.0 * cur.vg_norm) / (truth.sigma_k - 2.0 * cur.ug_norm);
            if cur.tan <= rhs * (1.0 + 1e-6) + 1e-12 {
                StepVerdict::Holds
            } else {
                StepVerdict::Violated { lhs: cur.tan, rhs }
            }
        })
        .collect()
}

/// `U cos(phi) + W sin(phi)` for a random orthonormal `W` orthogonal to `U`,
/// so every principal angle to `U` equals `phi`.
pub fn perturbed_start<R: Rng + ?Sized>(
    u: &OrthonormalBasis,
    sin_phi: f64,
    rng: &mut R,
) -> Result<OrthonormalBasis> {
    if !(0.0..=1.0).contains(&sin_phi) {
        return Err(Error::InvalidArgument(format!("sine {sin_phi} outside [0, 1]")));
    }
    let (n, k) = (u.n(), u.k());
    if 2 * k > n {
        return Err(Error::DimensionMismatch("complement too small for a perturbed start".into()));
    }
    let um = u.matrix();
    let z = gaussian_matrix(n, k, 1.0, rng);
    let z = &z - um * (um.transpose() * &z);
    let (w, _) = qr_orthonormalize(&z)?;
    // Second projection pass keeps U^T W at rounding level.
    let w = w.matrix() - um * (um.transpose() * w.matrix());
    let (w, _) = qr_orthonormalize(&w)?;
    let cos_phi = (1.0 - sin_phi * sin_phi).sqrt();
    let x = um * cos_phi + w.matrix() * sin_phi;
    Ok(qr_orthonormalize(&x)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use nalgebra::dvector;

    fn diag3() -> DMatrix<f64> {
        DMatrix::from_diagonal(&dvector![4.0, 2.0, 1.0])
    }

    fn start_in_plane(phi: f64) -> OrthonormalBasis {
        OrthonormalBasis::new(DMatrix::from_column_slice(3, 1, &[phi.cos(), phi.sin(), 0.0])).unwrap()
    }

    #[test]
    fn zero_noise_matches_two_dimensional_rate() {
        let phi: f64 = 0.7;
        let (_, trace) = nsi_run(&diag3(), 1, 12, &mut NoiseModel::Zero, &start_in_plane(phi), &mut seeded(1)).unwrap();
        for r in &trace.records {
            let expected = phi.tan() * 0.5f64.powi(r.step as i32);
            assert!((r.tan - expected).abs() <= 1e-8, "step {} {} {}", r.step, r.tan, expected);
        }
    }

    #[test]
    fn invariant_start_stays_put() {
        let u = OrthonormalBasis::standard(3, 1).unwrap();
        let (_, trace) = nsi_run(&diag3(), 1, 5, &mut NoiseModel::Zero, &u, &mut seeded(2)).unwrap();
        assert!(trace.records.iter().all(|r| r.tan == 0.0));
    }

    #[test]
    fn admissibility_boundary_cases() {
        let truth = SpectralTruth::from_matrix(&diag3(), 1).unwrap();
        let x = start_in_plane(0.4);
        let zero = admissibility_check(&DMatrix::zeros(3, 1), &x, 1e-2, &truth);
        assert!(zero.admissible);
        assert_eq!(zero.slack, zero.budget);

        let g = gaussian_matrix(3, 1, 1.0, &mut seeded(3));
        let g = &g * (zero.budget / spectral_norm(&g));
        let edge = admissibility_check(&g, &x, 1e-2, &truth);
        assert!(edge.admissible && edge.slack.abs() < 1e-10);
        let over = admissibility_check(&(&g * 1.01), &x, 1e-2, &truth);
        assert!(!over.admissible);
    }

    #[test]
    fn one_step_bound_is_tight_without_noise() {
        let truth = SpectralTruth::from_matrix(&diag3(), 1).unwrap();
        let (_, trace) = nsi_run(&diag3(), 1, 6, &mut NoiseModel::Zero, &start_in_plane(0.3), &mut seeded(4)).unwrap();
        let verdicts = one_step_bound_check(&trace, &truth);
        assert!(verdicts.iter().all(|v| *v == StepVerdict::Holds));
        for w in trace.records.windows(2) {
            assert!((w[1].tan - w[0].tan * 0.5).abs() < 1e-8);
        }
    }

    #[test]
    fn poor_start_is_precondition_unmet() {
        let truth = SpectralTruth::from_matrix(&diag3(), 1).unwrap();
        let (_, trace) = nsi_run(&diag3(), 1, 1, &mut NoiseModel::Zero, &start_in_plane(1.4), &mut seeded(5)).unwrap();
        assert_eq!(one_step_bound_check(&trace, &truth), vec![StepVerdict::PreconditionUnmet]);
    }

    #[test]
    fn csv_layout() {
        let u = OrthonormalBasis::standard(3, 1).unwrap();
        let (_, trace) = nsi_run(&diag3(), 1, 1, &mut NoiseModel::Zero, &u, &mut seeded(6)).unwrap();
        let csv = trace.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], ConvergenceTrace::CSV_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0,0.0000000000000000e0,"));
    }

    #[test]
    fn perturbed_start_has_requested_angle() {
        let u = qr_orthonormalize(&gaussian_matrix(20, 2, 1.0, &mut seeded(7))).unwrap().0;
        let x = perturbed_start(&u, 0.2, &mut seeded(8)).unwrap();
        let a = principal_angle(&u, &x).unwrap();
        assert!((a.sine - 0.2).abs() < 1e-10);
    }

    #[test]
    fn adversarial_receives_step_and_iterate() {
        let mut seen = Vec::new();
        let log = std::sync::Arc::new(std::sync::Mutex::new(Vec::new()));
        let sink = log.clone();
        let mut noise = NoiseModel::Adversarial(Box::new(move |l, x, _a| {
            sink.lock().unwrap().push(l);
            DMatrix::zeros(x.n(), x.k())
        }));
        nsi_run(&diag3(), 1, 3, &mut noise, &start_in_plane(0.2), &mut seeded(9)).unwrap();
        seen.extend(log.lock().unwrap().iter().copied());
        assert_eq!(seen, vec![1, 2, 3]);
    }
}
