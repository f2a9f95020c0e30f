//! Dense primitives shared by every stage: orthonormalization, coherence,
//! principal angles and spectral summaries.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative threshold on `sigma_k / sigma_1` below which QR reports rank loss.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Maximum entry of `X^T X - I` accepted for an orthonormal basis.
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-10;

/// Absolute asymmetry accepted by routines that require a symmetric input,
/// relative to `max(1, max |A_ij|)`.
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// An `n x k` matrix with orthonormal columns, `k <= n`.
#[derive(Clone, Debug, PartialEq)]
pub struct OrthonormalBasis(DMatrix<f64>);

impl OrthonormalBasis {
    /// Wraps `m` after checking `||m^T m - I||_max <= 1e-10`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let (n, k) = m.shape();
        if k == 0 || k > n {
            return Err(Error::DimensionMismatch(format!(
                "orthonormal basis needs 1 <= k <= n, got {n}x{k}"
            )));
        }
        let deviation = orthonormality_defect(&m);
        if !(deviation <= ORTHONORMAL_TOLERANCE) {
            return Err(Error::NotOrthonormal { deviation });
        }
        Ok(Self(m))
    }

    /// The first `k` standard basis vectors of `R^n`.
    pub fn standard(n: usize, k: usize) -> Result<Self> {
        Self::new(DMatrix::identity(n, k))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn k(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Orthogonal projector `X X^T`.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.0 * self.0.transpose()
    }
}

/// `||m^T m - I||_max`.
pub fn orthonormality_defect(m: &DMatrix<f64>) -> f64 {
    let gram = m.transpose() * m;
    let k = gram.nrows();
    (gram - DMatrix::<f64>::identity(k, k)).amax()
}

/// Thin QR factorization `Y = Q R` with `R` upper triangular and a
/// nonnegative diagonal.
///
/// Householder based, so `Q^T Q = I` holds to working precision even for
/// badly conditioned `Y`. Inputs with `sigma_k(Y) <= 1e-12 sigma_1(Y)` are
/// rejected with [`Error::RankDeficient`].
pub fn qr_orthonormalize(y: &DMatrix<f64>) -> Result<(OrthonormalBasis, DMatrix<f64>)> {
    let (n, k) = y.shape();
    if k == 0 || k > n {
        return Err(Error::DimensionMismatch(format!(
            "QR needs a tall matrix, got {n}x{k}"
        )));
    }
    let qr = y.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();

    // sigma(R) = sigma(Y), and R is only k x k.
    let sv = r.singular_values();
    let sigma_1 = sv.max();
    let sigma_k = sv.min();
    if !(sigma_k > RANK_TOLERANCE * sigma_1) {
        return Err(Error::RankDeficient { sigma_k });
    }

    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
            r.row_mut(j).neg_mut();
        }
    }
    Ok((OrthonormalBasis(q), r))
}

/// `mu(X) = (n/k) max_i ||e_i^T X||^2`, in `[1, n/k]` for orthonormal `X`.
pub fn coherence(x: &OrthonormalBasis) -> f64 {
    rho_coherence(x.matrix())
}

/// `rho(G) = (n/k) max_i ||e_i^T G||^2` for an arbitrary `n x k` matrix.
pub fn rho_coherence(g: &DMatrix<f64>) -> f64 {
    let (n, k) = g.shape();
    if n == 0 || k == 0 {
        return 0.0;
    }
    let max_row = g
        .row_iter()
        .map(|r| r.norm_squared())
        .fold(0.0_f64, f64::max);
    n as f64 / k as f64 * max_row
}

/// Largest singular value. Zero for empty matrices.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.nrows() >= m.ncols() {
        m.singular_values().max()
    } else {
        m.transpose().singular_values().max()
    }
}

/// Smallest of the `min(rows, cols)` singular values.
pub fn smallest_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().min()
}

/// Largest principal angle between two equal-dimension subspaces.
///
/// `tangent` is `f64::INFINITY` when the subspaces contain orthogonal
/// directions (`cosine == 0`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrincipalAngle {
    pub sine: f64,
    pub cosine: f64,
    pub tangent: f64,
}

impl PrincipalAngle {
    pub fn tangent_is_infinite(&self) -> bool {
        self.tangent.is_infinite()
    }
}

/// Below this cosine the tangent is reported as infinite.
const COSINE_FLOOR: f64 = 1e-15;

/// `sin = ||(I - X X^T) Y||`, `cos = sigma_k(X^T Y)`,
/// `tan = ||X_perp^T Y (X^T Y)^{-1}||`.
pub fn principal_angle(x: &OrthonormalBasis, y: &OrthonormalBasis) -> Result<PrincipalAngle> {
    if x.n() != y.n() || x.k() != y.k() {
        return Err(Error::DimensionMismatch(format!(
            "principal angle between {}x{} and {}x{}",
            x.n(),
            x.k(),
            y.n(),
            y.k()
        )));
    }
    let xm = x.matrix();
    let ym = y.matrix();
    let xty = xm.transpose() * ym;
    let residual = ym - xm * &xty;

    let sine = spectral_norm(&residual).min(1.0);
    let cosine = smallest_singular_value(&xty).clamp(0.0, 1.0);
    let tangent = if cosine < COSINE_FLOOR {
        f64::INFINITY
    } else {
        match xty.clone().try_inverse() {
            // ||X_perp^T M|| = ||(I - X X^T) M|| for any M.
            Some(inv) => spectral_norm(&(&residual * inv)),
            None => f64::INFINITY,
        }
    };
    Ok(PrincipalAngle {
        sine,
        cosine,
        tangent,
    })
}

/// Sorted singular values of a symmetric matrix together with the relative
/// gap `gamma_k = 1 - sigma_{k+1} / sigma_k` at a designated index.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralSummary {
    pub singular_values: Vec<f64>,
    pub k: usize,
    pub gap: f64,
}

impl SpectralSummary {
    pub fn sigma(&self, i: usize) -> f64 {
        self.singular_values.get(i - 1).copied().unwrap_or(0.0)
    }
}

/// Max `|A_ij - A_ji|`.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    (a - a.transpose()).amax()
}

pub(crate) fn ensure_symmetric(a: &DMatrix<f64>) -> Result<()> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let asym = asymmetry(a);
    if !(asym <= SYMMETRY_TOLERANCE * a.amax().max(1.0)) {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    Ok(())
}

/// Eigen-decomposition of a symmetric matrix ordered by decreasing `|lambda|`.
/// Column `i` of the returned matrix is the eigenvector of value `i`.
pub fn eigen_by_magnitude(a: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    ensure_symmetric(a)?;
    let eig = SymmetricEigen::new(a.clone());
    let mut order: Vec<usize> = (0..a.nrows()).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .abs()
            .total_cmp(&eig.eigenvalues[i].abs())
            .then(i.cmp(&j))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(a.nrows(), a.ncols(), |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

/// Singular values of symmetric `a` (absolute eigenvalues, nonincreasing)
/// and the gap at 1-based index `k`. For `k = n` the missing `sigma_{n+1}`
/// counts as zero.
pub fn spectral_summary(a: &DMatrix<f64>, k: usize) -> Result<SpectralSummary> {
    ensure_symmetric(a)?;
    let n = a.nrows();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "gap index k = {k} outside 1..={n}"
        )));
    }
    let mut singular_values: Vec<f64> = SymmetricEigen::new(a.clone())
        .eigenvalues
        .iter()
        .map(|v| v.abs())
        .collect();
    singular_values.sort_by(|a, b| b.total_cmp(a));
    let gap = relative_gap(&singular_values, k)?;
    Ok(SpectralSummary {
        singular_values,
        k,
        gap,
    })
}

/// `1 - sigma_{k+1} / sigma_k` over a nonincreasing list (1-based `k`).
pub fn relative_gap(sorted: &[f64], k: usize) -> Result<f64> {
    let sigma_1 = sorted.first().copied().unwrap_or(0.0);
    let sigma_k = sorted.get(k - 1).copied().unwrap_or(0.0);
    if !(sigma_k > 1e-14 * sigma_1) || sigma_k <= 0.0 {
        return Err(Error::GapUndefined { k });
    }
    let next = sorted.get(k).copied().unwrap_or(0.0);
    Ok((1.0 - next / sigma_k).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{gaussian_matrix, seeded};
    use nalgebra::dmatrix;

    #[test]
    fn qr_of_identity_columns_is_identity() {
        let y = DMatrix::<f64>::identity(6, 3);
        let (q, r) = qr_orthonormalize(&y).unwrap();
        assert!((q.matrix() - &y).amax() < 1e-15);
        assert!((r - DMatrix::<f64>::identity(3, 3)).amax() < 1e-15);
    }

    #[test]
    fn qr_of_scaled_columns() {
        let mut y = DMatrix::zeros(4, 2);
        y[(0, 0)] = 2.0;
        y[(1, 1)] = 3.0;
        let (q, r) = qr_orthonormalize(&y).unwrap();
        assert!((q.matrix() - DMatrix::<f64>::identity(4, 2)).amax() < 1e-15);
        assert!((r - dmatrix![2.0, 0.0; 0.0, 3.0]).amax() < 1e-15);
    }

    #[test]
    fn qr_reconstructs_random_input() {
        let y = gaussian_matrix(5, 2, 1.0, &mut seeded(11));
        let (q, r) = qr_orthonormalize(&y).unwrap();
        let qm = q.matrix();
        // Reconstruction oracle: multiply back and compare.
        let mut rec = DMatrix::zeros(5, 2);
        for i in 0..5 {
            for j in 0..2 {
                rec[(i, j)] = (0..2).map(|l| qm[(i, l)] * r[(l, j)]).sum();
            }
        }
        assert!((rec - &y).norm() / y.norm() < 1e-8);
        assert!(orthonormality_defect(qm) < 1e-10);
        assert_eq!(r[(1, 0)], 0.0);
        assert!(r[(0, 0)] >= 0.0 && r[(1, 1)] >= 0.0);
    }

    #[test]
    fn qr_rejects_rank_deficient_input() {
        let mut y = DMatrix::zeros(4, 2);
        y[(0, 0)] = 1.0;
        y[(0, 1)] = 2.0;
        match qr_orthonormalize(&y) {
            Err(Error::RankDeficient { sigma_k }) => assert!(sigma_k < 1e-12),
            other => panic!("expected RankDeficient, got {other:?}"),
        }
        assert!(matches!(
            qr_orthonormalize(&DMatrix::zeros(3, 1)),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn coherence_extremes() {
        let e = OrthonormalBasis::standard(10, 2).unwrap();
        assert!((coherence(&e) - 5.0).abs() < 1e-14);

        let ones = DMatrix::from_element(8, 1, 1.0 / 8f64.sqrt());
        let x = OrthonormalBasis::new(ones).unwrap();
        assert!((coherence(&x) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn coherence_matches_projector_diagonal() {
        let (x, _) = qr_orthonormalize(&gaussian_matrix(8, 2, 1.0, &mut seeded(3))).unwrap();
        // Oracle: diagonal of the projector P_U, i.e. ||P_U e_i||^2.
        let p = x.projector();
        let brute = (0..8).map(|i| p[(i, i)]).fold(0.0, f64::max) * 8.0 / 2.0;
        assert!((coherence(&x) - brute).abs() < 1e-12);
    }

    #[test]
    fn rho_coherence_cases() {
        assert_eq!(rho_coherence(&DMatrix::zeros(6, 2)), 0.0);
        let mut g = DMatrix::zeros(6, 2);
        g[(4, 1)] = 1.0;
        assert!((rho_coherence(&g) - 3.0).abs() < 1e-15);

        let g = gaussian_matrix(7, 3, 1.0, &mut seeded(5));
        let mut best = 0.0_f64;
        for i in 0..7 {
            let mut s = 0.0;
            for j in 0..3 {
                s += g[(i, j)] * g[(i, j)];
            }
            best = best.max(s);
        }
        assert!((rho_coherence(&g) - best * 7.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn principal_angle_identical_subspaces() {
        let (x, _) = qr_orthonormalize(&gaussian_matrix(9, 3, 1.0, &mut seeded(8))).unwrap();
        let a = principal_angle(&x, &x).unwrap();
        assert!(a.sine < 1e-14);
        assert!((a.cosine - 1.0).abs() < 1e-14);
        assert!(a.tangent < 1e-14);
    }

    #[test]
    fn principal_angle_orthogonal_spans() {
        let x = OrthonormalBasis::new(DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0])).unwrap();
        let y = OrthonormalBasis::new(DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0])).unwrap();
        let a = principal_angle(&x, &y).unwrap();
        assert_eq!(a.sine, 1.0);
        assert_eq!(a.cosine, 0.0);
        assert!(a.tangent_is_infinite());
    }

    #[test]
    fn principal_angle_planar_rotation() {
        let phi: f64 = 0.3;
        let x = OrthonormalBasis::new(DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0])).unwrap();
        let y = OrthonormalBasis::new(DMatrix::from_column_slice(
            3,
            1,
            &[phi.cos(), phi.sin(), 0.0],
        ))
        .unwrap();
        let a = principal_angle(&x, &y).unwrap();
        assert!((a.sine - phi.sin()).abs() < 1e-10);
        assert!((a.cosine - phi.cos()).abs() < 1e-10);
        assert!((a.tangent - phi.tan()).abs() < 1e-10);
    }

    #[test]
    fn spectral_summary_diagonal_and_flat() {
        let a = DMatrix::from_diagonal(&nalgebra::dvector![4.0, 2.0, 1.0]);
        let s = spectral_summary(&a, 2).unwrap();
        assert_eq!(s.singular_values, vec![4.0, 2.0, 1.0]);
        assert!((s.gap - 0.5).abs() < 1e-15);

        let s = spectral_summary(&DMatrix::identity(3, 3), 1).unwrap();
        assert!(s.gap.abs() < 1e-15);

        let zero_tail = DMatrix::from_diagonal(&nalgebra::dvector![1.0, 0.0]);
        assert!(matches!(
            spectral_summary(&zero_tail, 2),
            Err(Error::GapUndefined { k: 2 })
        ));
    }

    #[test]
    fn spectral_summary_matches_svd_oracle() {
        let g = gaussian_matrix(6, 6, 1.0, &mut seeded(21));
        let a = &g + g.transpose();
        let s = spectral_summary(&a, 3).unwrap();
        // Oracle: singular values from an SVD of the same matrix.
        let mut oracle: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
        oracle.sort_by(|x, y| y.total_cmp(x));
        for (u, v) in s.singular_values.iter().zip(&oracle) {
            assert!((u - v).abs() < 1e-8);
        }
        assert!((s.gap - (1.0 - oracle[3] / oracle[2])).abs() < 1e-8);
    }

    #[test]
    fn spectral_summary_rejects_asymmetric() {
        let a = dmatrix![1.0, 2.0; 0.0, 1.0];
        assert!(matches!(
            spectral_summary(&a, 1),
            Err(Error::NotSymmetric { .. })
        ));
    }
}
