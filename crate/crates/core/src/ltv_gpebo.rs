//! Copy observer with fundamental matrix for time-varying integrator chains.
//!
//! The chain output `y = sum_i c_i(t) x_i` is solved for `x_beta`, where
//! `beta` is the last coefficient that is not structurally zero. With
//! `w = (x_1, ..., x_{beta-1})` this gives the measured-input system
//!
//! ```text
//! w' = R(t) w + D(t) y
//! ```
//!
//! and the observer runs an exact copy of it, `xi' = R xi + D y`, together
//! with `Phi' = R Phi`, `Phi(0) = I`. The error then satisfies
//! `w - xi = Phi(t) (w(0) - xi(0))` for any `R`, so it vanishes whenever `Phi`
//! decays.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::system_model::{beta_index, LtvCanonicalSystem};
use crate::time_expr::SourceExpr;

/// The `w`-system: `R(t)` is an upshift block with last row
/// `-c_i(t) / c_beta(t)`, and `D(t) = e_last / c_beta(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedLtvSystem {
    beta: usize,
    coeffs: Vec<SourceExpr>,
}

impl ReducedLtvSystem {
    pub fn beta(&self) -> usize {
        self.beta
    }

    /// Dimension of `w`, i.e. `beta - 1`.
    pub fn dim(&self) -> usize {
        self.beta - 1
    }

    fn leading(&self, t: f64) -> Result<f64> {
        let cb = self.coeffs[self.beta - 1].eval(t)?;
        if cb == 0.0 || !cb.is_finite() {
            return Err(Error::LeadingCoefficientZero { t });
        }
        Ok(cb)
    }

    pub fn r_at(&self, t: f64) -> Result<DMatrix<f64>> {
        let k = self.dim();
        let cb = self.leading(t)?;
        let mut r = DMatrix::zeros(k, k);
        for i in 0..k.saturating_sub(1) {
            r[(i, i + 1)] = 1.0;
        }
        for j in 0..k {
            r[(k - 1, j)] = -self.coeffs[j].eval(t)? / cb;
        }
        Ok(r)
    }

    pub fn d_at(&self, t: f64) -> Result<DVector<f64>> {
        let k = self.dim();
        let cb = self.leading(t)?;
        let mut d = DVector::zeros(k);
        d[k - 1] = 1.0 / cb;
        Ok(d)
    }
}

pub fn reduce_to_w(sys: &LtvCanonicalSystem) -> Result<ReducedLtvSystem> {
    let beta = beta_index(sys)?;
    Ok(ReducedLtvSystem {
        beta,
        coeffs: sys.coefficients()[..beta].to_vec(),
    })
}

/// Observer state `(xi, Phi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GpeboState {
    pub xi: DVector<f64>,
    pub phi: DMatrix<f64>,
}

impl GpeboState {
    /// `Phi(0) = I`.
    pub fn new(xi0: DVector<f64>) -> Self {
        let k = xi0.len();
        GpeboState {
            xi: xi0,
            phi: DMatrix::identity(k, k),
        }
    }
}

/// `(R xi + D y, R Phi)`.
pub fn gpebo_rhs(
    state: &GpeboState,
    r_t: &DMatrix<f64>,
    d_t: &DVector<f64>,
    y: f64,
) -> Result<GpeboState> {
    let k = state.xi.len();
    if r_t.shape() != (k, k) || d_t.len() != k || state.phi.shape() != (k, k) {
        return Err(Error::Dimension(format!(
            "copy observer of dimension {k} got R {}x{}, D {}, Phi {}x{}",
            r_t.nrows(),
            r_t.ncols(),
            d_t.len(),
            state.phi.nrows(),
            state.phi.ncols()
        )));
    }
    Ok(GpeboState {
        xi: r_t * &state.xi + d_t * y,
        phi: r_t * &state.phi,
    })
}

/// `[I_{beta-1} 0]`, of size `(beta-1) x n`.
pub fn functional_matrix_ltv(n: usize, beta: usize) -> Result<DMatrix<f64>> {
    if beta < 2 || beta > n {
        return Err(Error::InvalidArgument(format!(
            "beta = {beta} outside 2..={n}"
        )));
    }
    Ok(DMatrix::identity(beta - 1, n))
}

/// `x_beta = (y - sum_{i<beta} c_i(t) xhat_i) / c_beta(t)`.
pub fn reconstruct_x_beta(xhat: &[f64], y: f64, sys: &LtvCanonicalSystem, t: f64) -> Result<f64> {
    let beta = beta_index(sys)?;
    if xhat.len() != beta - 1 {
        return Err(Error::Dimension(format!(
            "expected {} estimates, got {}",
            beta - 1,
            xhat.len()
        )));
    }
    let c = sys.coefficients();
    let cb = c[beta - 1].eval(t)?;
    if cb == 0.0 {
        return Err(Error::LeadingCoefficientZero { t });
    }
    let mut acc = y;
    for (ci, xi) in c.iter().zip(xhat) {
        acc -= ci.eval(t)? * xi;
    }
    Ok(acc / cb)
}

pub const FROZEN_SCAN_NOTE: &str =
    "frozen-time eigenvalues: a necessary-style heuristic for time-varying R(t), not a sufficient stability test";

#[derive(Debug, Clone, PartialEq)]
pub struct FrozenScan {
    /// `min_t -max Re eig R(t)`; positive means every frozen `R(t)` is Hurwitz.
    pub margin: f64,
    pub argmin_t: f64,
    pub frozen_hurwitz: bool,
    pub note: &'static str,
}

pub fn frozen_stability_scan(red: &ReducedLtvSystem, t_grid: &[f64]) -> Result<FrozenScan> {
    if t_grid.is_empty() {
        return Err(Error::InvalidArgument("empty time grid".into()));
    }
    let mut margin = f64::INFINITY;
    let mut argmin_t = t_grid[0];
    for &t in t_grid {
        let eigs = linalg::eigenvalues(&red.r_at(t)?)?;
        let m = -linalg::max_real_part(&eigs);
        if m < margin {
            margin = m;
            argmin_t = t;
        }
    }
    Ok(FrozenScan {
        margin,
        argmin_t,
        frozen_hurwitz: margin > 0.0,
        note: FROZEN_SCAN_NOTE,
    })
}

/// Uniform grid `t0, t0 + step, ..., t1` (inclusive).
pub fn uniform_grid(t0: f64, t1: f64, step: f64) -> Vec<f64> {
    let n = ((t1 - t0) / step).round().max(0.0) as usize;
    (0..=n).map(|k| t0 + k as f64 * step).collect()
}
