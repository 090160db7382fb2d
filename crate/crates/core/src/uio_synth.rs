//! Unknown-input observer synthesis for MIMO LTI plants.
//!
//! The observer `x_hat' = F x_hat + L y + G y^(r)` is rewritten without output
//! derivatives by a chain of auxiliary variables. Collapsed, the realization
//! reads
//!
//! ```text
//! z'    = F z + sum_i Gamma_i y_i + L y,    Gamma_i = F^(r_i) G e_i
//! x_bar = Q z + sum_i Theta_i y_i,          Theta_i = Q F^(r_i - 1) G e_i
//! ```
//!
//! which is exact as long as `Q F^k G e_i = 0` for `k <= r_i - 2`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Complex64};
use crate::placement::{self, PlacementOptions};
use crate::system_model::{self, LtiSystem, RelativeDegreeProfile};

/// Relative tolerance of the decoupling and annihilation checks.
pub const CONDITION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct UioGains {
    pub g: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub poles: Vec<Complex64>,
    pub achieved: Vec<Complex64>,
    pub max_pole_error: f64,
}

/// `G = B (N^T N)^-1 N^T`, the unique solution of `B - G N = 0` in the row
/// space of `N^T`.
pub fn compute_g(
    b: &DMatrix<f64>,
    n: &DMatrix<f64>,
    rank_tol: Option<f64>,
) -> Result<DMatrix<f64>> {
    if b.ncols() != n.ncols() {
        return Err(Error::Dimension(format!(
            "B has {} columns but N has {}",
            b.ncols(),
            n.ncols()
        )));
    }
    let rank_n = linalg::numerical_rank(n, rank_tol)?;
    if rank_n < n.ncols() {
        return Err(Error::SingularN {
            rows: n.nrows(),
            cols: n.ncols(),
            rank: rank_n,
        });
    }
    let rank_b = linalg::numerical_rank(b, rank_tol)?;
    if rank_b != rank_n {
        return Err(Error::RankMismatch { rank_n, rank_b });
    }
    let ntn = n.transpose() * n;
    let inv = ntn
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| ntn.try_inverse())
        .ok_or(Error::SingularN {
            rows: n.nrows(),
            cols: n.ncols(),
            rank: rank_n,
        })?;
    let g = b * inv * n.transpose();
    let residual = linalg::inf_norm(&(b - &g * n));
    let tol = CONDITION_TOL * linalg::inf_norm(b).max(1.0);
    if residual > tol {
        return Err(Error::Infeasible(format!(
            "B - G N residual {residual:e} exceeds {tol:e}"
        )));
    }
    Ok(g)
}

/// `M = A - G P`.
pub fn compute_m(a: &DMatrix<f64>, g: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if g.nrows() != a.nrows() || g.ncols() != p.nrows() || p.ncols() != a.ncols() {
        return Err(Error::Dimension(format!(
            "A {}x{}, G {}x{}, P {}x{} do not chain",
            a.nrows(),
            a.ncols(),
            g.nrows(),
            g.ncols(),
            p.nrows(),
            p.ncols()
        )));
    }
    Ok(a - g * p)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisOptions {
    pub pole_tol: f64,
    pub rank_tol: Option<f64>,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            pole_tol: placement::DEFAULT_POLE_TOL,
            rank_tol: None,
        }
    }
}

/// Computes `G`, `M`, and places the spectrum of `F = M - L C` at `poles`.
pub fn synthesize_gains(
    sys: &LtiSystem,
    r: &RelativeDegreeProfile,
    poles: &[Complex64],
    opts: &SynthesisOptions,
) -> Result<UioGains> {
    let p = system_model::build_p(sys, r)?;
    let n = system_model::build_n(sys, r)?;
    let g = compute_g(&sys.b, &n, opts.rank_tol)?;
    let m = compute_m(&sys.a, &g, &p)?;
    let placed = placement::place_observer_gain(
        &m,
        &sys.c,
        poles,
        &PlacementOptions {
            pole_tol: opts.pole_tol,
            rank_tol: opts.rank_tol,
        },
    )?;
    let f = &m - &placed.gain * &sys.c;
    Ok(UioGains {
        g,
        m,
        l: placed.gain,
        f,
        poles: poles.to_vec(),
        achieved: placed.achieved,
        max_pole_error: placed.max_rel_error,
    })
}

/// `T = [B, A B, ..., A^(r_max - 2) B]`; no columns when `r_max <= 1`.
pub fn build_t(a: &DMatrix<f64>, b: &DMatrix<f64>, r_max: usize) -> DMatrix<f64> {
    let n = a.nrows();
    let m = b.ncols();
    let blocks = r_max.saturating_sub(1);
    let mut t = DMatrix::zeros(n, m * blocks);
    let mut power = b.clone();
    for k in 0..blocks {
        t.columns_mut(k * m, m).copy_from(&power);
        power = a * power;
    }
    t
}

/// How many rows the functional matrix keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QMode {
    /// Whole orthogonal complement of col(T).
    #[default]
    Full,
    /// Complement with the highest-degree output row projected out.
    Reduced,
}

impl fmt::Display for QMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QMode::Full => "full",
            QMode::Reduced => "reduced",
        })
    }
}

impl FromStr for QMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(QMode::Full),
            "reduced" => Ok(QMode::Reduced),
            other => Err(Error::InvalidArgument(format!(
                "unknown Q mode `{other}` (expected full or reduced)"
            ))),
        }
    }
}

/// Rows of `Q` are orthonormal and orthogonal to every column of `t`.
///
/// In reduced mode the row `C_i` of the first output with maximal `r_i` is
/// removed from the row space as well.
pub fn functional_matrix(
    t: &DMatrix<f64>,
    c: &DMatrix<f64>,
    r: &RelativeDegreeProfile,
    rank_tol: Option<f64>,
    mode: QMode,
) -> Result<DMatrix<f64>> {
    let n = t.nrows();
    if c.ncols() != n || r.len() != c.nrows() {
        return Err(Error::Dimension(format!(
            "T has {n} rows, C is {}x{}, profile has {} entries",
            c.nrows(),
            c.ncols(),
            r.len()
        )));
    }
    let rank = linalg::numerical_rank(t, rank_tol)?;
    if rank >= n {
        return Err(Error::EmptyComplement { rank });
    }
    let q_full = linalg::orthogonal_complement_rows(t, n, rank_tol)?;
    match mode {
        QMode::Full => Ok(q_full),
        QMode::Reduced => {
            let r_max = r.r_max();
            let idx = r
                .degrees()
                .iter()
                .position(|&ri| ri == r_max)
                .expect("profile is non-empty");
            let row = c.row(idx).transpose();
            let nrm = row.norm();
            if nrm == 0.0 {
                return Err(Error::InvalidArgument(format!("output row {idx} is zero")));
            }
            let u = row / nrm;
            let projected = &q_full - (&q_full * &u) * u.transpose();
            let keep = q_full.nrows() - 1;
            if keep == 0 {
                return Err(Error::EmptyComplement { rank: rank + 1 });
            }
            let q = linalg::pivoted_orthonormal_rows(&projected, keep);
            if q.nrows() < keep {
                return Err(Error::Numerical(
                    "reduced functional matrix lost rank".into(),
                ));
            }
            Ok(q)
        }
    }
}

/// Residual of `Q A^i B = 0` for `i = 0..r_max - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub residuals: Vec<f64>,
    pub tolerances: Vec<f64>,
}

impl ConditionReport {
    pub fn holds(&self) -> bool {
        self.residuals
            .iter()
            .zip(&self.tolerances)
            .all(|(r, t)| r <= t)
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }

    fn first_violation(&self) -> Option<Error> {
        self.residuals
            .iter()
            .zip(&self.tolerances)
            .enumerate()
            .find(|(_, (r, t))| r > t)
            .map(|(power, (&residual, &tol))| Error::FunctionalCondition {
                power,
                residual,
                tol,
            })
    }
}

pub fn verify_functional_condition(
    q: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    r_max: usize,
) -> ConditionReport {
    let qn = linalg::inf_norm(q);
    let an = linalg::inf_norm(a);
    let bn = linalg::inf_norm(b);
    let mut residuals = Vec::new();
    let mut tolerances = Vec::new();
    let mut power = b.clone();
    for i in 0..r_max.saturating_sub(1) {
        residuals.push(linalg::inf_norm(&(q * &power)));
        tolerances.push(CONDITION_TOL * (qn * an.powi(i as i32) * bn).max(1.0));
        power = a * power;
    }
    ConditionReport {
        residuals,
        tolerances,
    }
}

/// Derivative-free observer in collapsed auxiliary-variable form.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalObserverRealization {
    pub f: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: RelativeDegreeProfile,
    /// Column `i` is `F^(r_i) G e_i`.
    pub gamma: DMatrix<f64>,
    /// Column `i` is `Q F^(r_i - 1) G e_i`.
    pub theta: DMatrix<f64>,
}

impl FunctionalObserverRealization {
    /// Builds the injection columns without checking any design condition.
    pub fn assemble(
        f: DMatrix<f64>,
        l: DMatrix<f64>,
        g: DMatrix<f64>,
        q: DMatrix<f64>,
        r: RelativeDegreeProfile,
    ) -> Result<Self> {
        let n = f.nrows();
        let outputs = r.len();
        if !f.is_square()
            || l.shape() != (n, outputs)
            || g.shape() != (n, outputs)
            || q.ncols() != n
            || q.nrows() == 0
        {
            return Err(Error::Dimension(format!(
                "realization shapes: F {:?}, L {:?}, G {:?}, Q {:?}, {} outputs",
                f.shape(),
                l.shape(),
                g.shape(),
                q.shape(),
                outputs
            )));
        }
        let mut gamma = DMatrix::zeros(n, outputs);
        let mut theta = DMatrix::zeros(q.nrows(), outputs);
        for (i, &ri) in r.degrees().iter().enumerate() {
            let mut col = g.column(i).into_owned();
            for _ in 0..ri - 1 {
                col = &f * col;
            }
            theta.set_column(i, &(&q * &col));
            gamma.set_column(i, &(&f * col));
        }
        Ok(FunctionalObserverRealization {
            f,
            l,
            g,
            q,
            r,
            gamma,
            theta,
        })
    }

    pub fn n(&self) -> usize {
        self.f.nrows()
    }

    pub fn q_rows(&self) -> usize {
        self.q.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.r.len()
    }

    /// `z' = F z + (Gamma + L) y`.
    pub fn z_dot(&self, z: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        &self.f * z + &self.gamma * y + &self.l * y
    }

    /// `x_bar = Q z + Theta y`.
    pub fn estimate(&self, z: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        &self.q * z + &self.theta * y
    }

    /// Largest `|Q F^k G e_i|` over the derivative terms `k <= r_i - 2`,
    /// together with its location.
    pub fn derivative_term_residuals(&self) -> Vec<(usize, usize, f64, f64)> {
        let qn = linalg::inf_norm(&self.q);
        let fnorm = linalg::inf_norm(&self.f);
        let gn = linalg::inf_norm(&self.g);
        let mut out = Vec::new();
        for (i, &ri) in self.r.degrees().iter().enumerate() {
            let mut col = self.g.column(i).into_owned();
            for k in 0..ri.saturating_sub(1) {
                let res = linalg::vec_inf_norm(&(&self.q * &col));
                let tol = CONDITION_TOL * (qn * fnorm.powi(k as i32) * gn).max(1.0);
                out.push((i, k, res, tol));
                col = &self.f * col;
            }
        }
        out
    }
}

/// Checked construction: `Q A^i B = 0`, every derivative term annihilated,
/// and `F` Hurwitz.
pub fn build_realization(
    sys: &LtiSystem,
    gains: &UioGains,
    q: &DMatrix<f64>,
    r: &RelativeDegreeProfile,
) -> Result<FunctionalObserverRealization> {
    let report = verify_functional_condition(q, &sys.a, &sys.b, r.r_max());
    if let Some(err) = report.first_violation() {
        return Err(err);
    }
    let real = FunctionalObserverRealization::assemble(
        gains.f.clone(),
        gains.l.clone(),
        gains.g.clone(),
        q.clone(),
        r.clone(),
    )?;
    for (output, power, residual, tol) in real.derivative_term_residuals() {
        if residual > tol {
            return Err(Error::DerivativeTerm {
                output,
                power,
                residual,
            });
        }
    }
    let max_re = linalg::max_real_part(&linalg::eigenvalues(&real.f)?);
    if max_re >= 0.0 {
        return Err(Error::Unstable { max_re });
    }
    Ok(real)
}

/// `(z', x_bar)` at `(z, y)`.
pub fn realization_rhs(
    real: &FunctionalObserverRealization,
    z: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if z.len() != real.n() || y.len() != real.outputs() {
        return Err(Error::Dimension(format!(
            "z has {} entries (expected {}), y has {} (expected {})",
            z.len(),
            real.n(),
            y.len(),
            real.outputs()
        )));
    }
    Ok((real.z_dot(z, y), real.estimate(z, y)))
}

/// Everything produced by a full MIMO design.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub gains: UioGains,
    pub t: DMatrix<f64>,
    pub realization: FunctionalObserverRealization,
    pub mode: QMode,
    /// Detectability of `(A, C)` and of `(M, C)`.
    pub detectable_ac: bool,
    pub detectable_mc: bool,
}

/// Runs the whole pipeline: gains, `T`, `Q`, and the checked realization.
pub fn design_observer(
    sys: &LtiSystem,
    r: &RelativeDegreeProfile,
    poles: &[Complex64],
    mode: QMode,
    opts: &SynthesisOptions,
) -> Result<Design> {
    let gains = synthesize_gains(sys, r, poles, opts)?;
    let t = build_t(&sys.a, &sys.b, r.r_max());
    let q = functional_matrix(&t, &sys.c, r, opts.rank_tol, mode)?;
    let realization = build_realization(sys, &gains, &q, r)?;
    let detectable_ac = system_model::check_detectability(&sys.a, &sys.c, 0.0)?;
    let detectable_mc = system_model::check_detectability(&gains.m, &sys.c, 0.0)?;
    Ok(Design {
        gains,
        t,
        realization,
        mode,
        detectable_ac,
        detectable_mc,
    })
}
