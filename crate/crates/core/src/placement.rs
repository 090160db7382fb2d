//! Observer gain by eigenstructure assignment.
//!
//! For `F = M - L C` we work on the dual pair `(M^T, C^T)`: for every
//! requested pole `lambda` a vector `(v, w)` is taken from the kernel of
//! `[M^T - lambda I | C^T]`, so that `M^T v + C^T w = lambda v`. Imposing
//! `L^T v = -w` for all poles makes `v` an eigenvector of `M^T - C^T L^T` with
//! eigenvalue `lambda`. When several kernel directions exist (more than one
//! output) the one whose `v` is farthest from the span of the vectors already
//! chosen is used, which keeps the eigenvector matrix well conditioned.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, Complex64};
use crate::system_model;

pub const DEFAULT_POLE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacementOptions {
    /// Relative tolerance on every achieved eigenvalue.
    pub pole_tol: f64,
    pub rank_tol: Option<f64>,
}

impl Default for PlacementOptions {
    fn default() -> Self {
        PlacementOptions {
            pole_tol: DEFAULT_POLE_TOL,
            rank_tol: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub gain: DMatrix<f64>,
    pub achieved: Vec<Complex64>,
    /// Worst relative deviation between achieved and requested eigenvalues.
    pub max_rel_error: f64,
}

fn same(a: Complex64, b: Complex64) -> bool {
    (a - b).norm() <= 1e-9 * a.norm().max(b.norm()).max(1.0)
}

/// Checks that `poles` has `n` distinct finite entries with negative real
/// part and is closed under conjugation. Returns the poles to process: every
/// real pole plus one representative (positive imaginary part) per pair.
pub fn validate_poles(poles: &[Complex64], n: usize) -> Result<Vec<Complex64>> {
    if poles.len() != n {
        return Err(Error::InvalidPoles(format!(
            "{} poles requested for a system of order {n}",
            poles.len()
        )));
    }
    for p in poles {
        if !p.re.is_finite() || !p.im.is_finite() {
            return Err(Error::InvalidPoles(format!("non-finite pole {p}")));
        }
        if p.re >= 0.0 {
            return Err(Error::InvalidPoles(format!(
                "pole {p} is not in the open left half-plane"
            )));
        }
    }
    for (i, p) in poles.iter().enumerate() {
        for q in &poles[i + 1..] {
            if same(*p, *q) {
                return Err(Error::InvalidPoles(format!(
                    "repeated pole {p}: only distinct poles are supported"
                )));
            }
        }
    }
    let mut reps = Vec::new();
    for p in poles {
        if p.im == 0.0 {
            reps.push(*p);
            continue;
        }
        if !poles.iter().any(|q| same(*q, p.conj())) {
            return Err(Error::InvalidPoles(format!(
                "pole {p} has no conjugate partner"
            )));
        }
        if p.im > 0.0 {
            reps.push(*p);
        }
    }
    Ok(reps)
}

/// Gain `L` such that `eig(M - L C)` equals `poles`.
pub fn place_observer_gain(
    m: &DMatrix<f64>,
    c: &DMatrix<f64>,
    poles: &[Complex64],
    opts: &PlacementOptions,
) -> Result<Placement> {
    let n = m.nrows();
    if !m.is_square() || c.ncols() != n || c.nrows() == 0 {
        return Err(Error::Dimension(format!(
            "pole placement needs square M and C with {n} columns"
        )));
    }
    let l = c.nrows();
    let reps = validate_poles(poles, n)?;

    // Unobservable modes stay in the spectrum whatever L is.
    for mode in system_model::unobservable_modes(m, c, None)? {
        let requested = poles
            .iter()
            .any(|p| (p - mode).norm() <= opts.pole_tol * mode.norm().max(1.0));
        if !requested {
            return Err(Error::FixedMode {
                re: mode.re,
                im: mode.im,
            });
        }
    }

    let mt = m.transpose().map(|v| Complex64::new(v, 0.0));
    let ct = c.transpose().map(|v| Complex64::new(v, 0.0));
    let mut basis: Vec<DVector<Complex64>> = Vec::new();
    let mut v_cols: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut w_cols: Vec<DVector<f64>> = Vec::with_capacity(n);

    for lam in reps {
        let mut s = DMatrix::<Complex64>::zeros(n, n + l);
        s.columns_mut(0, n).copy_from(&mt);
        for i in 0..n {
            s[(i, i)] -= lam;
        }
        s.columns_mut(n, l).copy_from(&ct);
        let kernel = linalg::null_space(&s, opts.rank_tol)?;
        if kernel.ncols() == 0 {
            return Err(Error::Numerical(format!("empty kernel at pole {lam}")));
        }
        let kv = kernel.rows(0, n).into_owned();
        let kw = kernel.rows(n, l).into_owned();
        let mut resid = kv.clone();
        for q in &basis {
            let coeffs = q.adjoint() * &resid;
            resid -= q * coeffs;
        }
        let (gain, coef) = linalg::dominant_right_singular_vector(&resid)?;
        if gain <= 1e-12 {
            return Err(Error::Numerical(format!(
                "eigenvector for pole {lam} is dependent on earlier ones"
            )));
        }
        let v = &kv * &coef;
        let w = &kw * &coef;
        if lam.im == 0.0 {
            // The kernel of a real matrix is spanned by real vectors; keep
            // whichever of Re v / Im v is more independent.
            let (vr, vi) = (v.map(|z| z.re), v.map(|z| z.im));
            let (wr, wi) = (w.map(|z| z.re), w.map(|z| z.im));
            let score = |x: &DVector<f64>| {
                let mut r = x.map(|v| Complex64::new(v, 0.0));
                for q in &basis {
                    let d = q.dotc(&r);
                    r -= q * d;
                }
                r.norm() / x.norm().max(1e-300)
            };
            let (vsel, wsel) = if score(&vr) >= score(&vi) {
                (vr, wr)
            } else {
                (vi, wi)
            };
            let scale = vsel.norm();
            let vsel = vsel / scale;
            let wsel = wsel / scale;
            push_orthonormal(&mut basis, vsel.map(|v| Complex64::new(v, 0.0)));
            v_cols.push(vsel);
            w_cols.push(wsel);
        } else {
            let scale = v.norm();
            let v = v / Complex64::new(scale, 0.0);
            let w = w / Complex64::new(scale, 0.0);
            push_orthonormal(&mut basis, v.clone());
            push_orthonormal(&mut basis, v.map(|z| z.conj()));
            v_cols.push(v.map(|z| z.re));
            v_cols.push(v.map(|z| z.im));
            w_cols.push(w.map(|z| z.re));
            w_cols.push(w.map(|z| z.im));
        }
    }

    let vmat = DMatrix::from_columns(&v_cols);
    let wmat = DMatrix::from_columns(&w_cols);
    // L^T V = -W  <=>  V^T L = -W^T
    let lu = vmat.transpose().full_piv_lu();
    let x = lu
        .solve(&wmat.transpose())
        .ok_or_else(|| Error::Numerical("eigenvector matrix is singular".into()))?;
    let gain = -x;

    let closed = m - &gain * c;
    let achieved = linalg::eigenvalues(&closed)?;
    let max_rel_error = linalg::spectrum_relative_errors(&achieved, poles)
        .into_iter()
        .fold(0.0, f64::max);
    if max_rel_error.is_nan() || max_rel_error > opts.pole_tol {
        return Err(Error::Numerical(format!(
            "achieved spectrum deviates from the request by {max_rel_error:e} (relative)"
        )));
    }
    Ok(Placement {
        gain,
        achieved,
        max_rel_error,
    })
}

fn push_orthonormal(basis: &mut Vec<DVector<Complex64>>, mut v: DVector<Complex64>) {
    for _ in 0..2 {
        for q in basis.iter() {
            let d = q.dotc(&v);
            v -= q * d;
        }
    }
    let nrm = v.norm();
    if nrm > 1e-12 {
        basis.push(v / Complex64::new(nrm, 0.0));
    }
}

/// Parses `"-4"`, `"-1+2i"`, `"-1-2j"`, `"3i"` and similar forms.
pub fn parse_pole(text: &str) -> Result<Complex64> {
    let s: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    let bad = || Error::InvalidPoles(format!("cannot parse pole `{text}`"));
    if s.is_empty() {
        return Err(bad());
    }
    let Some(body) = s.strip_suffix(['i', 'j']) else {
        return s
            .parse::<f64>()
            .map(|re| Complex64::new(re, 0.0))
            .map_err(|_| bad());
    };
    // split at the last sign that is not part of an exponent and not leading
    let bytes = body.as_bytes();
    let mut split = None;
    for k in (1..bytes.len()).rev() {
        if (bytes[k] == b'+' || bytes[k] == b'-') && !matches!(bytes[k - 1], b'e' | b'E') {
            split = Some(k);
            break;
        }
    }
    let imag = |t: &str| -> Result<f64> {
        match t {
            "" | "+" => Ok(1.0),
            "-" => Ok(-1.0),
            _ => t.parse::<f64>().map_err(|_| bad()),
        }
    };
    match split {
        Some(k) => {
            let re = body[..k].parse::<f64>().map_err(|_| bad())?;
            Ok(Complex64::new(re, imag(&body[k..])?))
        }
        None => Ok(Complex64::new(0.0, imag(body)?)),
    }
}

/// Comma-separated list of poles.
pub fn parse_pole_list(text: &str) -> Result<Vec<Complex64>> {
    text.split(',').map(parse_pole).collect()
}
