//! Dense helpers shared by the synthesis modules: numerical rank, subspace
//! bases, eigenvalues and spectrum comparison.

use nalgebra::{ComplexField, DMatrix, DVector, Schur, SVD};

pub use nalgebra::Complex;

use crate::error::{Error, Result};

pub type Complex64 = Complex<f64>;

/// Default relative rank threshold: `max(rows, cols) * eps`.
pub fn default_rank_tol(rows: usize, cols: usize) -> f64 {
    rows.max(cols).max(1) as f64 * f64::EPSILON
}

/// Row-major construction with shape and finiteness checks.
pub fn matrix_from_rows(name: &'static str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != c {
            return Err(Error::Dimension(format!(
                "{name}: row {i} has {} entries, expected {c}",
                row.len()
            )));
        }
        for (j, v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    name,
                    row: i,
                    col: j,
                });
            }
        }
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Maximum absolute row sum.
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

pub fn vec_inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

pub fn mat_pow(a: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let mut out = DMatrix::identity(a.nrows(), a.ncols());
    for _ in 0..k {
        out = &out * a;
    }
    out
}

/// Sweep limit of one SVD attempt.
const SVD_MAX_ITER: usize = 10_000;
/// Convergence thresholds tried in order.
const SVD_EPS: [f64; 2] = [f64::EPSILON, 16.0 * f64::EPSILON];

pub(crate) fn sorted_svd<T: ComplexField<RealField = f64>>(
    m: DMatrix<T>,
    compute_u: bool,
    compute_v: bool,
) -> Result<SVD<T, nalgebra::Dyn, nalgebra::Dyn>> {
    SVD_EPS
        .iter()
        .find_map(|&eps| SVD::try_new(m.clone(), compute_u, compute_v, eps, SVD_MAX_ITER))
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if m.is_empty() {
        return Ok(Vec::new());
    }
    Ok(sorted_svd(m.clone(), false, false)?
        .singular_values
        .iter()
        .copied()
        .collect())
}

fn rank_threshold(sv: &[f64], rows: usize, cols: usize, rank_tol: Option<f64>) -> f64 {
    let smax = sv.first().copied().unwrap_or(0.0);
    rank_tol.unwrap_or_else(|| default_rank_tol(rows, cols)) * smax
}

/// Number of singular values above `rank_tol * sigma_max`
/// (default `rank_tol = max(rows, cols) * eps`).
pub fn numerical_rank(m: &DMatrix<f64>, rank_tol: Option<f64>) -> Result<usize> {
    let sv = singular_values(m)?;
    let thr = rank_threshold(&sv, m.nrows(), m.ncols(), rank_tol);
    Ok(sv.iter().filter(|&&s| s > thr && s > 0.0).count())
}

/// Orthonormal basis (as columns) of the column space of `m`.
pub fn column_space_basis(m: &DMatrix<f64>, rank_tol: Option<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if m.ncols() == 0 || n == 0 {
        return Ok(DMatrix::zeros(n, 0));
    }
    let svd = sorted_svd(m.clone(), true, false)?;
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let thr = rank_threshold(&sv, m.nrows(), m.ncols(), rank_tol);
    let rank = sv.iter().filter(|&&s| s > thr && s > 0.0).count();
    let u = svd
        .u
        .ok_or_else(|| Error::Numerical("SVD returned no U".into()))?;
    Ok(u.columns(0, rank).into_owned())
}

/// Orthonormal basis (as columns) of the null space of `m`.
pub fn null_space<T: ComplexField<RealField = f64>>(
    m: &DMatrix<T>,
    rank_tol: Option<f64>,
) -> Result<DMatrix<T>> {
    let (rows, cols) = m.shape();
    if cols == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if rows == 0 {
        return Ok(DMatrix::identity(cols, cols));
    }
    // Pad with zero rows so the SVD returns a full V.
    let padded = if rows < cols {
        let mut p = DMatrix::<T>::zeros(cols, cols);
        p.rows_mut(0, rows).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = sorted_svd(padded, false, true)?;
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let thr = rank_threshold(&sv, rows, cols, rank_tol);
    let rank = sv.iter().filter(|&&s| s > thr && s > 0.0).count();
    let v = svd
        .v_t
        .ok_or_else(|| Error::Numerical("SVD returned no V".into()))?
        .adjoint();
    Ok(v.columns(rank, cols - rank).into_owned())
}

/// Largest singular value of `m` and its right singular vector.
pub fn dominant_right_singular_vector<T: ComplexField<RealField = f64>>(
    m: &DMatrix<T>,
) -> Result<(f64, DVector<T>)> {
    let (rows, cols) = m.shape();
    if cols == 0 {
        return Err(Error::Numerical("no columns to choose from".into()));
    }
    let padded = if rows < cols {
        let mut p = DMatrix::<T>::zeros(cols, cols);
        p.rows_mut(0, rows).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = sorted_svd(padded, false, true)?;
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numerical("SVD returned no V".into()))?;
    let v = v_t.row(0).adjoint();
    Ok((svd.singular_values[0], v))
}

/// Re-orthonormalises a set of row vectors, always taking next the candidate
/// with the largest remaining norm (ties go to the lowest index), and keeps
/// `count` of them. The result is returned in original index order, which
/// makes the basis deterministic: for instance a complement spanned by
/// coordinate axes comes back as exactly those axes.
pub fn pivoted_orthonormal_rows(candidates: &DMatrix<f64>, count: usize) -> DMatrix<f64> {
    let n = candidates.ncols();
    let mut residual: Vec<DVector<f64>> = candidates
        .row_iter()
        .map(|r| r.transpose().into_owned())
        .collect();
    let mut used = vec![false; residual.len()];
    let mut chosen: Vec<(usize, DVector<f64>)> = Vec::new();
    for _ in 0..count.min(residual.len()) {
        let mut best: Option<(usize, f64)> = None;
        for (i, r) in residual.iter().enumerate() {
            if used[i] {
                continue;
            }
            let nrm = r.norm();
            match best {
                Some((_, b)) if nrm <= b * (1.0 + 1e-12) => {}
                _ => best = Some((i, nrm)),
            }
        }
        let Some((idx, nrm)) = best else { break };
        if nrm == 0.0 {
            break;
        }
        used[idx] = true;
        let mut v = residual[idx].clone() / nrm;
        // second Gram-Schmidt pass against the accepted rows
        for (_, q) in &chosen {
            let d = q.dot(&v);
            v -= q * d;
        }
        let vn = v.norm();
        v /= vn;
        for (i, r) in residual.iter_mut().enumerate() {
            if !used[i] {
                let d = v.dot(r);
                *r -= &v * d;
            }
        }
        chosen.push((idx, v));
    }
    chosen.sort_by_key(|(i, _)| *i);
    let mut out = DMatrix::zeros(chosen.len(), n);
    for (k, (_, v)) in chosen.iter().enumerate() {
        out.set_row(k, &v.transpose());
    }
    out
}

/// Rows form an orthonormal basis of the orthogonal complement of col(`t`),
/// where `t` has `n` rows (it may have zero columns).
pub fn orthogonal_complement_rows(
    t: &DMatrix<f64>,
    n: usize,
    rank_tol: Option<f64>,
) -> Result<DMatrix<f64>> {
    let basis = column_space_basis(t, rank_tol)?;
    let rank = basis.ncols();
    let proj = DMatrix::identity(n, n) - &basis * basis.transpose();
    Ok(pivoted_orthonormal_rows(&proj, n - rank))
}

/// Eigenvalues of a real square matrix via the real Schur form.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "eigenvalues of a non-square {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("matrix has non-finite entries".into()));
    }
    let schur = Schur::try_new(m.clone(), f64::EPSILON, 100_000)
        .ok_or_else(|| Error::Eigen("Schur iteration did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

pub fn max_real_part(eigs: &[Complex64]) -> f64 {
    eigs.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Pairs every requested value with a distinct achieved value (nearest first)
/// and returns, per requested value, `|achieved - requested| / max(|requested|, 1e-300)`.
pub fn spectrum_relative_errors(achieved: &[Complex64], requested: &[Complex64]) -> Vec<f64> {
    pair_spectra(achieved, requested)
        .into_iter()
        .map(|(a, r)| (a - r).norm() / r.norm().max(1e-300))
        .collect()
}

/// Same pairing as [`spectrum_relative_errors`], absolute distances.
pub fn spectrum_abs_errors(achieved: &[Complex64], requested: &[Complex64]) -> Vec<f64> {
    pair_spectra(achieved, requested)
        .into_iter()
        .map(|(a, r)| (a - r).norm())
        .collect()
}

fn pair_spectra(achieved: &[Complex64], requested: &[Complex64]) -> Vec<(Complex64, Complex64)> {
    // Globally nearest pair first, so one outlier cannot steal a neighbour's match.
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, r) in requested.iter().enumerate() {
        for (j, a) in achieved.iter().enumerate() {
            pairs.push(((a - r).norm(), i, j));
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut req_done = vec![false; requested.len()];
    let mut ach_done = vec![false; achieved.len()];
    let mut out = vec![None; requested.len()];
    for (_, i, j) in pairs {
        if !req_done[i] && !ach_done[j] {
            req_done[i] = true;
            ach_done[j] = true;
            out[i] = Some((achieved[j], requested[i]));
        }
    }
    out.into_iter()
        .enumerate()
        .map(|(i, p)| p.unwrap_or((Complex64::new(f64::INFINITY, 0.0), requested[i])))
        .collect()
}

/// Largest principal angle (radians) between the row spaces of `a` and `b`.
/// Returns pi/2 when the dimensions differ.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let qa = column_space_basis(&a.transpose(), None)?;
    let qb = column_space_basis(&b.transpose(), None)?;
    if qa.ncols() != qb.ncols() || qa.nrows() != qb.nrows() {
        return Ok(std::f64::consts::FRAC_PI_2);
    }
    if qa.ncols() == 0 {
        return Ok(0.0);
    }
    // sin of the largest angle = || (I - Pb) Qa ||_2
    let resid = &qa - &qb * (qb.transpose() * &qa);
    let s = singular_values(&resid)?.first().copied().unwrap_or(0.0);
    Ok(s.min(1.0).asin())
}
