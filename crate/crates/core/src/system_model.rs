//! Plant representations and the structural data (relative degrees, `P`, `N`)
//! shared by both observer constructions.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, Complex64};
use crate::time_expr::SourceExpr;

/// Default relative threshold for "this entry of `C_i A^j B` is zero".
pub const DEFAULT_ZERO_TOL: f64 = 1e-9;

/// Relative threshold on the smallest singular value in the PBH test.
/// Eigenvalues of defective blocks are only accurate to about `eps^(1/k)`,
/// so the plain numerical-rank rule is too strict here.
pub const PBH_TOL: f64 = 1e-8;

/// `x' = A x + B f`, `y = C x` with `f` unknown.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub rank_b: usize,
    /// `B` is numerically zero: the plant has no unknown input.
    pub input_absent: bool,
}

impl LtiSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let sys = LtiSystem { a, b, c };
        validate_lti(&sys)?;
        Ok(sys)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn l(&self) -> usize {
        self.c.nrows()
    }

    pub fn output_row(&self, i: usize) -> DMatrix<f64> {
        self.c.rows(i, 1).into_owned()
    }
}

fn check_finite(name: &'static str, m: &DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if !m[(i, j)].is_finite() {
                return Err(Error::NonFinite {
                    name,
                    row: i,
                    col: j,
                });
            }
        }
    }
    Ok(())
}

pub fn validate_lti(sys: &LtiSystem) -> Result<ValidationReport> {
    let (ar, ac) = sys.a.shape();
    if ar != ac {
        return Err(Error::Dimension(format!("A is {ar}x{ac}, must be square")));
    }
    let n = ar;
    if n == 0 {
        return Err(Error::Dimension(
            "state dimension n must be at least 1".into(),
        ));
    }
    if sys.b.nrows() != n || sys.b.ncols() == 0 {
        return Err(Error::Dimension(format!(
            "B is {}x{}, expected {n}xm with m >= 1",
            sys.b.nrows(),
            sys.b.ncols()
        )));
    }
    if sys.c.ncols() != n || sys.c.nrows() == 0 {
        return Err(Error::Dimension(format!(
            "C is {}x{}, expected lx{n} with l >= 1",
            sys.c.nrows(),
            sys.c.ncols()
        )));
    }
    check_finite("A", &sys.a)?;
    check_finite("B", &sys.b)?;
    check_finite("C", &sys.c)?;
    let rank_b = linalg::numerical_rank(&sys.b, None)?;
    Ok(ValidationReport {
        n,
        m: sys.b.ncols(),
        l: sys.c.nrows(),
        rank_b,
        input_absent: rank_b == 0,
    })
}

/// Per-output relative degrees.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelativeDegreeProfile {
    r: Vec<usize>,
    /// `true` where `r_i` is the structural degree, `false` for a user override.
    exact: Vec<bool>,
}

impl RelativeDegreeProfile {
    /// Profile taken as given (no structural check). Every entry must lie in `1..=n`.
    pub fn from_values(r: Vec<usize>, n: usize) -> Result<Self> {
        if r.is_empty() {
            return Err(Error::InvalidArgument(
                "empty relative-degree vector".into(),
            ));
        }
        if let Some(bad) = r.iter().find(|&&ri| ri == 0 || ri > n) {
            return Err(Error::InvalidArgument(format!(
                "relative degree {bad} outside 1..={n}"
            )));
        }
        let exact = vec![false; r.len()];
        Ok(RelativeDegreeProfile { r, exact })
    }

    pub fn degrees(&self) -> &[usize] {
        &self.r
    }

    pub fn r_max(&self) -> usize {
        self.r.iter().copied().max().unwrap_or(0)
    }

    pub fn is_exact(&self, i: usize) -> bool {
        self.exact[i]
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    /// Replaces the degrees by `values`, each of which must not exceed the
    /// structural degree already stored (otherwise `y_i^(r_i)` would involve
    /// derivatives of the unknown input).
    pub fn with_override(&self, values: &[usize]) -> Result<Self> {
        if values.len() != self.r.len() {
            return Err(Error::InvalidArgument(format!(
                "r_override has {} entries, system has {} outputs",
                values.len(),
                self.r.len()
            )));
        }
        let mut exact = Vec::with_capacity(values.len());
        for (i, (&v, &s)) in values.iter().zip(&self.r).enumerate() {
            if v == 0 || v > s {
                return Err(Error::InvalidArgument(format!(
                    "r_override[{i}] = {v} must lie in 1..={s} (structural degree)"
                )));
            }
            exact.push(v == s && self.exact[i]);
        }
        Ok(RelativeDegreeProfile {
            r: values.to_vec(),
            exact,
        })
    }
}

/// `r_i` = smallest `j >= 1` with some entry of `C_i A^(j-1) B` above
/// `zero_tol * ||C_i A^(j-1)||_1 * max|B|`.
pub fn compute_relative_degrees(sys: &LtiSystem, zero_tol: f64) -> Result<RelativeDegreeProfile> {
    validate_lti(sys)?;
    let n = sys.n();
    let b_scale = linalg::max_abs(&sys.b);
    let mut r = Vec::with_capacity(sys.l());
    for i in 0..sys.l() {
        let mut row = sys.output_row(i);
        let mut found = None;
        for j in 1..=n {
            let row_scale = row.iter().map(|v| v.abs()).sum::<f64>() * b_scale;
            let markov = &row * &sys.b;
            if row_scale > 0.0 && markov.iter().any(|v| v.abs() > zero_tol * row_scale) {
                found = Some(j);
                break;
            }
            row = &row * &sys.a;
        }
        match found {
            Some(j) => r.push(j),
            None => return Err(Error::NoRelativeDegree { output: i, n }),
        }
    }
    let exact = vec![true; r.len()];
    Ok(RelativeDegreeProfile { r, exact })
}

fn check_profile(sys: &LtiSystem, r: &RelativeDegreeProfile) -> Result<()> {
    if r.len() != sys.l() {
        return Err(Error::Dimension(format!(
            "profile has {} entries, system has {} outputs",
            r.len(),
            sys.l()
        )));
    }
    Ok(())
}

/// Row `i` is `C_i A^(r_i)`.
pub fn build_p(sys: &LtiSystem, r: &RelativeDegreeProfile) -> Result<DMatrix<f64>> {
    check_profile(sys, r)?;
    let mut p = DMatrix::zeros(sys.l(), sys.n());
    for (i, &ri) in r.degrees().iter().enumerate() {
        let row = sys.output_row(i) * linalg::mat_pow(&sys.a, ri);
        p.set_row(i, &row.row(0));
    }
    Ok(p)
}

/// Entry `(i, k)` is `C_i A^(r_i - 1) B_k`.
pub fn build_n(sys: &LtiSystem, r: &RelativeDegreeProfile) -> Result<DMatrix<f64>> {
    check_profile(sys, r)?;
    let mut nm = DMatrix::zeros(sys.l(), sys.m());
    for (i, &ri) in r.degrees().iter().enumerate() {
        let row = sys.output_row(i) * linalg::mat_pow(&sys.a, ri - 1) * &sys.b;
        nm.set_row(i, &row.row(0));
    }
    Ok(nm)
}

/// PBH rank test restricted to eigenvalues with `Re >= -stability_margin`.
pub fn check_detectability(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    stability_margin: f64,
) -> Result<bool> {
    Ok(unobservable_modes(a, c, Some(stability_margin))?.is_empty())
}

/// Eigenvalues `lambda` of `a` for which `[lambda I - A; C]` loses rank.
/// With `Some(margin)`, only modes with `Re >= -margin` are examined.
pub fn unobservable_modes(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    margin: Option<f64>,
) -> Result<Vec<Complex64>> {
    let n = a.nrows();
    if !a.is_square() || c.ncols() != n {
        return Err(Error::Dimension(format!(
            "PBH test needs square A and C with {n} columns"
        )));
    }
    let l = c.nrows();
    let eigs = linalg::eigenvalues(a)?;
    let mut out = Vec::new();
    for lam in eigs {
        if let Some(mg) = margin {
            if lam.re < -mg {
                continue;
            }
        }
        let pbh = DMatrix::<Complex64>::from_fn(n + l, n, |i, j| {
            if i < n {
                let d = if i == j {
                    lam
                } else {
                    Complex64::new(0.0, 0.0)
                };
                d - Complex64::new(a[(i, j)], 0.0)
            } else {
                Complex64::new(c[(i - n, j)], 0.0)
            }
        });
        let svd = linalg::sorted_svd(pbh, false, false)?;
        let sv = &svd.singular_values;
        let smax = sv.iter().copied().fold(0.0, f64::max);
        let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
        if smin <= PBH_TOL * smax.max(1.0) {
            out.push(lam);
        }
    }
    Ok(out)
}

/// Integrator-chain plant `x' = A0 x + e_n f`, `y = c(t)^T x`, where `A0` is
/// the upshift matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LtvCanonicalSystem {
    n: usize,
    c: Vec<SourceExpr>,
}

impl LtvCanonicalSystem {
    pub fn new(n: usize, c: Vec<SourceExpr>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Dimension("chain order n must be at least 1".into()));
        }
        if c.len() != n {
            return Err(Error::Dimension(format!(
                "chain of order {n} needs {n} output coefficients, got {}",
                c.len()
            )));
        }
        if c.iter().all(SourceExpr::is_structurally_zero) {
            return Err(Error::ZeroOutput);
        }
        Ok(LtvCanonicalSystem { n, c })
    }

    pub fn parse(n: usize, coeffs: &[&str]) -> Result<Self> {
        let c = coeffs
            .iter()
            .map(|s| SourceExpr::parse(s))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::new(n, c)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn coefficients(&self) -> &[SourceExpr] {
        &self.c
    }

    /// `c(t)` as a row.
    pub fn output_row(&self, t: f64) -> Result<DVector<f64>> {
        let vals = self
            .c
            .iter()
            .map(|e| e.eval(t))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(DVector::from_vec(vals))
    }

    pub fn chain_a(&self) -> DMatrix<f64> {
        upshift(self.n)
    }

    pub fn chain_b(&self) -> DMatrix<f64> {
        unit_column(self.n, self.n - 1)
    }
}

pub fn upshift(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| if j == i + 1 { 1.0 } else { 0.0 })
}

pub fn unit_column(n: usize, k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, 1, |i, _| if i == k { 1.0 } else { 0.0 })
}

/// 1-based index of the last structurally non-zero coefficient. Fails when
/// it is 1, since the reduced system would then be empty.
pub fn beta_index(sys: &LtvCanonicalSystem) -> Result<usize> {
    let beta = sys
        .c
        .iter()
        .rposition(|e| !e.is_structurally_zero())
        .map(|i| i + 1)
        .ok_or(Error::ZeroOutput)?;
    if beta < 2 {
        return Err(Error::NoReducibleDynamics);
    }
    Ok(beta)
}
