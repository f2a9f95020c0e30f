//! Least-squares update `Y = argmin ||P_Omega(A - X Y^T)||_F^2` solved row by
//! row in closed form, its median-of-splits robustification, and the
//! error-term decomposition `Y = AX + G^M + G^N` used for diagnostics.
//!
//! Row `i` of the optimum satisfies `e_i^T Y B_i = e_i^T A P_i X` with
//! `B_i = X^T P_i X`, so each row costs one `k x k` solve after an
//! `O(|Omega_i| k^2)` accumulation.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::OrthonormalBasis;
use crate::sampling::{split, ObservedSample};
use crate::truth::GroundTruth;

/// Rows whose `lambda_min(B_i)` falls below this are treated as singular.
pub const SINGULAR_THRESHOLD: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct LsSolveReport {
    pub y: DMatrix<f64>,
    pub singular_rows: Vec<usize>,
    pub min_bi_eigenvalue: f64,
}

struct RowSystem {
    b: DMatrix<f64>,
    rhs: DVector<f64>,
}

/// Row-major copy of `X` so that row `j` is a contiguous slice.
fn row_major(x: &DMatrix<f64>) -> Vec<f64> {
    x.transpose().as_slice().to_vec()
}

fn row_system(cols: &[usize], vals: &[f64], xr: &[f64], k: usize, scale: f64) -> RowSystem {
    let mut b = DMatrix::zeros(k, k);
    let mut rhs = DVector::zeros(k);
    for (&j, &v) in cols.iter().zip(vals) {
        let xj = &xr[j * k..(j + 1) * k];
        for c in 0..k {
            rhs[c] += v * xj[c];
            for r in c..k {
                b[(r, c)] += xj[r] * xj[c];
            }
        }
    }
    for c in 0..k {
        for r in c + 1..k {
            b[(c, r)] = b[(r, c)];
        }
    }
    b *= scale;
    rhs *= scale;
    RowSystem { b, rhs }
}

fn lambda_min(b: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(b.clone()).eigenvalues.min()
}

/// Solves `B w = v` for the symmetric positive definite `B` of a nonsingular row.
fn solve_spd(b: &DMatrix<f64>, v: &DVector<f64>) -> Option<DVector<f64>> {
    b.clone().cholesky().map(|c| c.solve(v))
}

struct RowSolve {
    y: DVector<f64>,
    lambda_min: f64,
    singular: bool,
}

fn solve_row(sample: &ObservedSample, xr: &[f64], k: usize, i: usize) -> RowSolve {
    let (cols, vals) = sample.row(i);
    let sys = row_system(cols, vals, xr, k, 1.0 / sample.p());
    let lmin = if cols.is_empty() { 0.0 } else { lambda_min(&sys.b) };
    if lmin >= SINGULAR_THRESHOLD {
        if let Some(y) = solve_spd(&sys.b, &sys.rhs) {
            return RowSolve {
                y,
                lambda_min: lmin,
                singular: false,
            };
        }
    }
    // Fallback: e_i^T P_Omega(A) X, which is exactly the accumulated rhs.
    RowSolve {
        y: sys.rhs,
        lambda_min: lmin,
        singular: true,
    }
}

/// Closed-form least-squares update. Rows with a singular `B_i` fall back
/// to `e_i^T P_Omega(A) X` and are listed in `singular_rows`.
pub fn ls_update(sample: &ObservedSample, x: &OrthonormalBasis) -> Result<LsSolveReport> {
    let (n, k) = (x.n(), x.k());
    if sample.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "sample of dimension {} with a basis of {n} rows",
            sample.n()
        )));
    }
    let xr = row_major(x.matrix());
    let rows: Vec<RowSolve> = (0..n)
        .into_par_iter()
        .map(|i| solve_row(sample, &xr, k, i))
        .collect();

    let mut y = DMatrix::zeros(n, k);
    let mut singular_rows = Vec::new();
    let mut min_bi_eigenvalue = f64::INFINITY;
    for (i, row) in rows.into_iter().enumerate() {
        y.set_row(i, &row.y.transpose());
        if row.singular {
            singular_rows.push(i);
        }
        min_bi_eigenvalue = min_bi_eigenvalue.min(row.lambda_min);
    }
    Ok(LsSolveReport {
        y,
        singular_rows,
        min_bi_eigenvalue,
    })
}

/// `ceil(3 ln n)` copies, at least one.
pub fn default_median_copies(n: usize) -> usize {
    ((3.0 * (n.max(1) as f64).ln()).ceil() as usize).max(1)
}

/// Entrywise lower median: element `floor((t-1)/2)` of each sorted list.
pub fn entrywise_median(mats: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let first = mats
        .first()
        .ok_or_else(|| Error::InvalidArgument("median of zero matrices".into()))?;
    let shape = first.shape();
    if mats.iter().any(|m| m.shape() != shape) {
        return Err(Error::DimensionMismatch("median over mixed shapes".into()));
    }
    let mid = (mats.len() - 1) / 2;
    let mut buf = vec![0.0; mats.len()];
    Ok(DMatrix::from_fn(shape.0, shape.1, |r, c| {
        for (slot, m) in buf.iter_mut().zip(mats) {
            *slot = m[(r, c)];
        }
        buf.sort_by(f64::total_cmp);
        buf[mid]
    }))
}

/// Splits the sample into `t` independent pieces, solves the update on each
/// and returns the entrywise median of the `t` solutions.
pub fn median_ls<R: Rng + ?Sized>(
    sample: &ObservedSample,
    x: &OrthonormalBasis,
    t: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let pieces = split(sample, t, rng)?;
    let solves = pieces
        .iter()
        .map(|piece| ls_update(piece, x).map(|r| r.y))
        .collect::<Result<Vec<_>>>()?;
    entrywise_median(&solves)
}

/// Decomposition of the update error `G = Y - AX` into the part driven by
/// the low-rank signal and the part driven by the residual `N`.
#[derive(Clone, Debug)]
pub struct ErrorDecomposition {
    pub g: DMatrix<f64>,
    pub gm: DMatrix<f64>,
    pub gn: DMatrix<f64>,
    /// `(I - X X^T) U`.
    pub e: DMatrix<f64>,
    pub singular_rows: Vec<usize>,
    /// Max over nonsingular rows of `|Y - (AX + G^M + G^N)|`.
    pub identity_residual: f64,
}

/// Evaluates, for every row with invertible `B_i`,
///
/// `e_i^T G^M = e_i^T U Lambda_U E^T P_i X B_i^{-1}` and
/// `e_i^T G^N = e_i^T (N P_i X B_i^{-1} - N X)`,
///
/// and measures how far `Y` from [`ls_update`] is from `AX + G^M + G^N`.
/// On singular rows `G` is `Y - AX`, attributed entirely to `G^M`, and the
/// row is excluded from the residual.
pub fn error_decomposition(
    sample: &ObservedSample,
    x: &OrthonormalBasis,
    truth: &GroundTruth,
) -> Result<ErrorDecomposition> {
    let (n, k) = (x.n(), x.k());
    if truth.n() != n {
        return Err(Error::DimensionMismatch("truth and basis dimensions differ".into()));
    }
    let report = ls_update(sample, x)?;
    let xm = x.matrix();
    let u = truth.u().matrix();
    let e = u - xm * (xm.transpose() * u);
    let ulam = u * DMatrix::from_diagonal(&DVector::from_column_slice(truth.lambda_u()));
    let ax = truth.a() * xm;
    let nx = truth.noise() * xm;
    let g = &report.y - &ax;

    let xr = row_major(xm);
    let er = row_major(&e);
    let scale = 1.0 / sample.p();
    let r = truth.k();

    let mut gm = DMatrix::zeros(n, k);
    let mut gn = DMatrix::zeros(n, k);
    let mut identity_residual = 0.0_f64;
    for i in 0..n {
        if report.singular_rows.binary_search(&i).is_ok() {
            gm.set_row(i, &g.row(i));
            continue;
        }
        let (cols, vals) = sample.row(i);
        let sys = row_system(cols, vals, &xr, k, scale);
        let ulam_i = ulam.row(i);
        let mut wm = DVector::zeros(k);
        let mut wn = DVector::zeros(k);
        for &j in cols {
            let xj = &xr[j * k..(j + 1) * k];
            let coef_m: f64 = (0..r).map(|c| ulam_i[c] * er[j * r + c]).sum::<f64>() * scale;
            let coef_n = truth.noise()[(i, j)] * scale;
            for c in 0..k {
                wm[c] += coef_m * xj[c];
                wn[c] += coef_n * xj[c];
            }
        }
        let (Some(gm_i), Some(pn_i)) = (solve_spd(&sys.b, &wm), solve_spd(&sys.b, &wn)) else {
            gm.set_row(i, &g.row(i));
            continue;
        };
        gm.set_row(i, &gm_i.transpose());
        gn.set_row(i, &(pn_i.transpose() - nx.row(i)));
        for c in 0..k {
            let predicted = ax[(i, c)] + gm[(i, c)] + gn[(i, c)];
            identity_residual = identity_residual.max((report.y[(i, c)] - predicted).abs());
        }
    }
    Ok(ErrorDecomposition {
        g,
        gm,
        gn,
        e,
        singular_rows: report.singular_rows,
        identity_residual,
    })
}
