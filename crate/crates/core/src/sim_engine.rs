//! Fixed-step simulation of plants, observers and reference oracles.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, Complex64};
use crate::ltv_gpebo::{self, GpeboState};
use crate::placement::{self, PlacementOptions};
use crate::presets;
use crate::system_model::{self, LtiSystem, LtvCanonicalSystem, RelativeDegreeProfile};
use crate::time_expr::SourceExpr;
use crate::uio_synth::{self, FunctionalObserverRealization, QMode, SynthesisOptions, UioGains};

pub const DEFAULT_DT: f64 = 1e-3;
/// Upper limit on the number of integration steps of a single run.
pub const MAX_STEPS: usize = 200_000_000;
/// State bound of the bilinear demo.
pub const BILINEAR_BOUND: f64 = 1e3;

/// States sampled on a uniform grid; the last step may be shorter.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> &DVector<f64> {
        self.states
            .last()
            .expect("trajectory has at least one sample")
    }
}

fn step_count(t0: f64, t_final: f64, dt: f64) -> Result<usize> {
    if !dt.is_finite() || dt <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "dt must be positive, got {dt}"
        )));
    }
    if !t0.is_finite() || !t_final.is_finite() || t_final < t0 {
        return Err(Error::InvalidArgument(format!(
            "bad time interval [{t0}, {t_final}]"
        )));
    }
    let ratio = (t_final - t0) / dt;
    if ratio > MAX_STEPS as f64 {
        return Err(Error::InvalidArgument(format!(
            "{ratio:.0} steps exceed the budget of {MAX_STEPS}"
        )));
    }
    // tolerate representation error so that 1/1e-3 gives 1000 steps
    let steps = (ratio - 1e-9).ceil().max(0.0) as usize;
    Ok(steps)
}

/// Classic fourth-order Runge-Kutta.
pub fn rk4_integrate<F>(
    field: F,
    x0: &DVector<f64>,
    t0: f64,
    t_final: f64,
    dt: f64,
) -> Result<Trajectory>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    rk4_integrate_bounded(field, x0, t0, t_final, dt, None)
}

/// As [`rk4_integrate`], additionally aborting once `|x|_inf` exceeds `bound`.
pub fn rk4_integrate_bounded<F>(
    mut field: F,
    x0: &DVector<f64>,
    t0: f64,
    t_final: f64,
    dt: f64,
    bound: Option<f64>,
) -> Result<Trajectory>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let steps = step_count(t0, t_final, dt)?;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut x = x0.clone();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            step: 0,
            last_finite_t: t0,
        });
    }
    times.push(t0);
    states.push(x.clone());
    let mut t = t0;
    for k in 1..=steps {
        let t_next = if k == steps {
            t_final
        } else {
            t0 + k as f64 * dt
        };
        let h = t_next - t;
        let k1 = field(t, &x)?;
        let k2 = field(t + 0.5 * h, &(&x + &k1 * (0.5 * h)))?;
        let k3 = field(t + 0.5 * h, &(&x + &k2 * (0.5 * h)))?;
        let k4 = field(t_next, &(&x + &k3 * h))?;
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        let escaped = bound.is_some_and(|b| linalg::vec_inf_norm(&x) > b);
        if escaped || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: k,
                last_finite_t: t,
            });
        }
        t = t_next;
        times.push(t);
        states.push(x.clone());
    }
    Ok(Trajectory { times, states })
}

/// Exponential decay estimate of an error channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecayRate {
    /// The error is identically zero.
    Exact,
    Rate(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorMetrics {
    pub final_norm: f64,
    pub max_norm: f64,
    pub decay_rate: DecayRate,
    pub threshold: f64,
    /// Earliest time after which the error norm stays at or below `threshold`.
    pub time_to_threshold: Option<f64>,
}

pub const DEFAULT_THRESHOLD: f64 = 1e-3;

/// Samples below this fraction of the peak error are treated as round-off.
const FIT_FLOOR: f64 = 1e-12;

/// Final and peak infinity norms, a least-squares fit of `ln |e|_inf` against
/// time over the second half of the run, and the settling time for `threshold`.
///
/// Samples under `1e-12` of the peak are left out of the fit; if fewer than two
/// remain in the second half, all such samples of the run are used.
pub fn error_metrics(
    times: &[f64],
    errors: &[DVector<f64>],
    threshold: f64,
) -> Result<ErrorMetrics> {
    if times.is_empty() || times.len() != errors.len() {
        return Err(Error::InvalidArgument(
            "error metrics need a non-empty run".into(),
        ));
    }
    let norms: Vec<f64> = errors.iter().map(linalg::vec_inf_norm).collect();
    let max_norm = norms.iter().copied().fold(0.0, f64::max);
    let final_norm = *norms.last().expect("non-empty");

    let mut time_to_threshold = None;
    for (t, n) in times.iter().zip(&norms).rev() {
        if *n > threshold {
            break;
        }
        time_to_threshold = Some(*t);
    }

    let decay_rate = if max_norm == 0.0 {
        DecayRate::Exact
    } else {
        let floor = FIT_FLOOR * max_norm;
        let t_mid = times[0] + 0.5 * (times[times.len() - 1] - times[0]);
        let pick = |from: f64| -> Vec<(f64, f64)> {
            times
                .iter()
                .zip(&norms)
                .filter(|(t, n)| **t >= from && **n > floor)
                .map(|(t, n)| (*t, n.ln()))
                .collect()
        };
        let mut pts = pick(t_mid);
        if pts.len() < 2 {
            pts = pick(times[0]);
        }
        if pts.len() < 2 {
            DecayRate::Rate(0.0)
        } else {
            DecayRate::Rate(ls_slope(&pts))
        }
    };
    Ok(ErrorMetrics {
        final_norm,
        max_norm,
        decay_rate,
        threshold,
        time_to_threshold,
    })
}

fn ls_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Extra diagnostics of a time-varying run.
#[derive(Debug, Clone, PartialEq)]
pub struct LtvDiagnostics {
    pub beta: usize,
    /// `max_t |(w - xi) - Phi (w(0) - xi(0))|_inf`.
    pub identity_residual: f64,
    pub phi_final_norm: f64,
    /// `|Phi(t_final)|_inf < 1`.
    pub phi_decays: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub times: Vec<f64>,
    /// Plant state.
    pub x: Vec<DVector<f64>>,
    /// Estimated functional.
    pub xbar: Vec<DVector<f64>>,
    /// True functional minus its estimate.
    pub err: Vec<DVector<f64>>,
    pub metrics: ErrorMetrics,
    pub ltv: Option<LtvDiagnostics>,
}

impl ScenarioResult {
    fn build(
        times: Vec<f64>,
        x: Vec<DVector<f64>>,
        xbar: Vec<DVector<f64>>,
        err: Vec<DVector<f64>>,
        threshold: f64,
    ) -> Result<Self> {
        let metrics = error_metrics(&times, &err, threshold)?;
        Ok(ScenarioResult {
            times,
            x,
            xbar,
            err,
            metrics,
            ltv: None,
        })
    }

    pub fn n(&self) -> usize {
        self.x.first().map_or(0, |v| v.len())
    }

    pub fn q(&self) -> usize {
        self.xbar.first().map_or(0, |v| v.len())
    }

    /// Largest error magnitude per channel over the samples with `t >= from`.
    pub fn channel_max_after(&self, from: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.q()];
        for (t, e) in self.times.iter().zip(&self.err) {
            if *t >= from {
                for (o, v) in out.iter_mut().zip(e.iter()) {
                    *o = f64::max(*o, v.abs());
                }
            }
        }
        out
    }
}

/// Initial condition of the auxiliary state `z`.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ZInit {
    #[default]
    Zero,
    Explicit(DVector<f64>),
    /// Chooses `z(0)` so that the full-chain estimate at `t = 0` equals the
    /// given `x_hat(0)`.
    MatchEstimate(DVector<f64>),
}

/// `z(0) = x_hat(0) - sum_i sum_{k < r_i} F^k G e_i * C_i A^(r_i - 1 - k) x(0)`,
/// using the exact output derivatives of the plant at `t = 0`.
pub fn z0_for_estimate(
    real: &FunctionalObserverRealization,
    sys: &LtiSystem,
    x0: &DVector<f64>,
    xhat0: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = real.n();
    if x0.len() != n || xhat0.len() != n || sys.n() != n {
        return Err(Error::Dimension(format!(
            "x0 and x_hat0 need {n} entries, got {} and {}",
            x0.len(),
            xhat0.len()
        )));
    }
    let mut z = xhat0.clone();
    for (i, &ri) in real.r.degrees().iter().enumerate() {
        let mut fkg = real.g.column(i).into_owned();
        for k in 0..ri {
            let power = ri - 1 - k;
            let y_der = (sys.output_row(i) * linalg::mat_pow(&sys.a, power) * x0)[(0, 0)];
            z -= &fkg * y_der;
            fkg = &real.f * fkg;
        }
    }
    Ok(z)
}

fn check_len(name: &str, v: &DVector<f64>, n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::Dimension(format!(
            "{name} has {} entries, expected {n}",
            v.len()
        )));
    }
    Ok(())
}

fn eval_inputs(f: &[SourceExpr], t: f64) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(f.len());
    for (o, e) in out.iter_mut().zip(f) {
        *o = e.eval(t)?;
    }
    Ok(out)
}

/// Plant `x' = A x + B f(t)` together with the derivative-free observer.
pub fn run_mimo_scenario(
    plant: &LtiSystem,
    real: &FunctionalObserverRealization,
    f: &[SourceExpr],
    x0: &DVector<f64>,
    z0: &ZInit,
    t_final: f64,
    dt: f64,
) -> Result<ScenarioResult> {
    let n = plant.n();
    if real.n() != n || real.outputs() != plant.l() || f.len() != plant.m() {
        return Err(Error::Dimension(format!(
            "plant n={n}, m={}, l={}; observer n={}, l={}; {} input expressions",
            plant.m(),
            plant.l(),
            real.n(),
            real.outputs(),
            f.len()
        )));
    }
    check_len("x0", x0, n)?;
    let z0 = match z0 {
        ZInit::Zero => DVector::zeros(n),
        ZInit::Explicit(z) => {
            check_len("z0", z, n)?;
            z.clone()
        }
        ZInit::MatchEstimate(xhat0) => z0_for_estimate(real, plant, x0, xhat0)?,
    };
    let mut s0 = DVector::zeros(2 * n);
    s0.rows_mut(0, n).copy_from(x0);
    s0.rows_mut(n, n).copy_from(&z0);
    let traj = rk4_integrate(
        |t, s| {
            let x = s.rows(0, n).into_owned();
            let z = s.rows(n, n).into_owned();
            let y = &plant.c * &x;
            let mut ds = DVector::zeros(2 * n);
            ds.rows_mut(0, n)
                .copy_from(&(&plant.a * &x + &plant.b * eval_inputs(f, t)?));
            ds.rows_mut(n, n).copy_from(&real.z_dot(&z, &y));
            Ok(ds)
        },
        &s0,
        0.0,
        t_final,
        dt,
    )?;
    let mut xs = Vec::with_capacity(traj.len());
    let mut xbars = Vec::with_capacity(traj.len());
    let mut errs = Vec::with_capacity(traj.len());
    for s in &traj.states {
        let x = s.rows(0, n).into_owned();
        let z = s.rows(n, n).into_owned();
        let xbar = real.estimate(&z, &(&plant.c * &x));
        errs.push(&real.q * &x - &xbar);
        xbars.push(xbar);
        xs.push(x);
    }
    ScenarioResult::build(traj.times, xs, xbars, errs, DEFAULT_THRESHOLD)
}

/// Plant and ideal observer `x_hat' = F x_hat + L y + G y^(r)`, with the
/// output derivatives computed exactly as `P x + N f`.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleRun {
    pub times: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    pub xhat: Vec<DVector<f64>>,
}

/// Derivatives of the plant state and of the oracle estimate.
type StatePair = (DVector<f64>, DVector<f64>);

fn oracle_field<'a>(
    plant: &'a LtiSystem,
    gains: &'a UioGains,
    p: &'a DMatrix<f64>,
    nm: &'a DMatrix<f64>,
    f: &'a [SourceExpr],
) -> impl Fn(f64, &DVector<f64>, &DVector<f64>) -> Result<StatePair> + 'a {
    move |t, x, xhat| {
        let fv = eval_inputs(f, t)?;
        let dx = &plant.a * x + &plant.b * &fv;
        let y = &plant.c * x;
        let y_r = p * x + nm * &fv;
        let dxhat = &gains.f * xhat + &gains.l * y + &gains.g * y_r;
        Ok((dx, dxhat))
    }
}

#[allow(clippy::too_many_arguments)]
pub fn derivative_feed_oracle(
    plant: &LtiSystem,
    gains: &UioGains,
    r: &RelativeDegreeProfile,
    f: &[SourceExpr],
    x0: &DVector<f64>,
    xhat0: &DVector<f64>,
    t_final: f64,
    dt: f64,
) -> Result<OracleRun> {
    let n = plant.n();
    check_len("x0", x0, n)?;
    check_len("x_hat0", xhat0, n)?;
    if f.len() != plant.m() {
        return Err(Error::Dimension(format!(
            "{} input expressions for {} inputs",
            f.len(),
            plant.m()
        )));
    }
    let p = system_model::build_p(plant, r)?;
    let nm = system_model::build_n(plant, r)?;
    let field = oracle_field(plant, gains, &p, &nm, f);
    let mut s0 = DVector::zeros(2 * n);
    s0.rows_mut(0, n).copy_from(x0);
    s0.rows_mut(n, n).copy_from(xhat0);
    let traj = rk4_integrate(
        |t, s| {
            let (dx, dxhat) = field(t, &s.rows(0, n).into_owned(), &s.rows(n, n).into_owned())?;
            let mut ds = DVector::zeros(2 * n);
            ds.rows_mut(0, n).copy_from(&dx);
            ds.rows_mut(n, n).copy_from(&dxhat);
            Ok(ds)
        },
        &s0,
        0.0,
        t_final,
        dt,
    )?;
    let x = traj
        .states
        .iter()
        .map(|s| s.rows(0, n).into_owned())
        .collect();
    let xhat = traj
        .states
        .iter()
        .map(|s| s.rows(n, n).into_owned())
        .collect();
    Ok(OracleRun {
        times: traj.times,
        x,
        xhat,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleComparison {
    /// `max_t |Q x_hat_oracle - x_bar_realization|_inf`.
    pub max_deviation: f64,
    pub at_time: f64,
    /// Same quantity at `t = 0`.
    pub initial_deviation: f64,
}

/// Integrates plant, oracle and realization in one state vector, with the
/// realization started from the `z(0)` matching `x_hat0`.
#[allow(clippy::too_many_arguments)]
pub fn oracle_deviation(
    plant: &LtiSystem,
    gains: &UioGains,
    real: &FunctionalObserverRealization,
    f: &[SourceExpr],
    x0: &DVector<f64>,
    xhat0: &DVector<f64>,
    t_final: f64,
    dt: f64,
) -> Result<OracleComparison> {
    let n = plant.n();
    check_len("x0", x0, n)?;
    check_len("x_hat0", xhat0, n)?;
    if real.n() != n || real.outputs() != plant.l() || f.len() != plant.m() {
        return Err(Error::Dimension("observer does not fit the plant".into()));
    }
    let p = system_model::build_p(plant, &real.r)?;
    let nm = system_model::build_n(plant, &real.r)?;
    let field = oracle_field(plant, gains, &p, &nm, f);
    let z0 = z0_for_estimate(real, plant, x0, xhat0)?;
    let mut s0 = DVector::zeros(3 * n);
    s0.rows_mut(0, n).copy_from(x0);
    s0.rows_mut(n, n).copy_from(xhat0);
    s0.rows_mut(2 * n, n).copy_from(&z0);
    let traj = rk4_integrate(
        |t, s| {
            let x = s.rows(0, n).into_owned();
            let (dx, dxhat) = field(t, &x, &s.rows(n, n).into_owned())?;
            let dz = real.z_dot(&s.rows(2 * n, n).into_owned(), &(&plant.c * &x));
            let mut ds = DVector::zeros(3 * n);
            ds.rows_mut(0, n).copy_from(&dx);
            ds.rows_mut(n, n).copy_from(&dxhat);
            ds.rows_mut(2 * n, n).copy_from(&dz);
            Ok(ds)
        },
        &s0,
        0.0,
        t_final,
        dt,
    )?;
    let mut out = OracleComparison {
        max_deviation: 0.0,
        at_time: 0.0,
        initial_deviation: 0.0,
    };
    for (k, (t, s)) in traj.times.iter().zip(&traj.states).enumerate() {
        let x = s.rows(0, n).into_owned();
        let oracle = &real.q * s.rows(n, n);
        let est = real.estimate(&s.rows(2 * n, n).into_owned(), &(&plant.c * &x));
        let dev = linalg::vec_inf_norm(&(oracle - est));
        if k == 0 {
            out.initial_deviation = dev;
        }
        if dev > out.max_deviation {
            out.max_deviation = dev;
            out.at_time = *t;
        }
    }
    Ok(out)
}

/// Checks that the plant is the integrator chain closed through its last row,
/// driven through the last state.
fn check_chain_plant(a: &DMatrix<f64>, b: &DMatrix<f64>, n: usize) -> Result<()> {
    if a.shape() != (n, n) || b.shape() != (n, 1) {
        return Err(Error::Dimension(format!(
            "plant A {:?} and B {:?} do not match n = {n}",
            a.shape(),
            b.shape()
        )));
    }
    let shift = system_model::upshift(n);
    let top_ok = (0..n - 1).all(|i| (0..n).all(|j| a[(i, j)] == shift[(i, j)]));
    if !top_ok || *b != system_model::unit_column(n, n - 1) {
        return Err(Error::InvalidArgument(
            "time-varying scenario needs an integrator-chain plant (upshift rows, B = e_n)".into(),
        ));
    }
    Ok(())
}

/// True plant `x' = A x + B u(t)` with output `y = C(t) x`, observed by the
/// copy observer of the reduced `w`-system. Channels are `x_1 .. x_(beta-1)`
/// and the reconstructed `x_beta`.
#[allow(clippy::too_many_arguments)]
pub fn run_ltv_scenario(
    plant_a: &DMatrix<f64>,
    plant_b: &DMatrix<f64>,
    sys: &LtvCanonicalSystem,
    u: &SourceExpr,
    x0: &DVector<f64>,
    xi0: Option<&DVector<f64>>,
    t_final: f64,
    dt: f64,
) -> Result<ScenarioResult> {
    let n = sys.n();
    check_chain_plant(plant_a, plant_b, n)?;
    check_len("x0", x0, n)?;
    let red = ltv_gpebo::reduce_to_w(sys)?;
    let beta = red.beta();
    let d = red.dim();
    let xi0 = match xi0 {
        Some(v) => {
            check_len("xi0", v, d)?;
            v.clone()
        }
        None => DVector::zeros(d),
    };
    let dim = n + d + d * d;
    let mut s0 = DVector::zeros(dim);
    s0.rows_mut(0, n).copy_from(x0);
    s0.rows_mut(n, d).copy_from(&xi0);
    let eye = DMatrix::<f64>::identity(d, d);
    s0.rows_mut(n + d, d * d).copy_from_slice(eye.as_slice());

    let traj = rk4_integrate(
        |t, s| {
            let x = s.rows(0, n).into_owned();
            let state = GpeboState {
                xi: s.rows(n, d).into_owned(),
                phi: DMatrix::from_column_slice(d, d, s.rows(n + d, d * d).as_slice()),
            };
            let y = sys.output_row(t)?.dot(&x);
            let dx = plant_a * &x + plant_b * u.eval(t)?;
            let ds = ltv_gpebo::gpebo_rhs(&state, &red.r_at(t)?, &red.d_at(t)?, y)?;
            let mut out = DVector::zeros(dim);
            out.rows_mut(0, n).copy_from(&dx);
            out.rows_mut(n, d).copy_from(&ds.xi);
            out.rows_mut(n + d, d * d)
                .copy_from_slice(ds.phi.as_slice());
            Ok(out)
        },
        &s0,
        0.0,
        t_final,
        dt,
    )?;

    let e0 = x0.rows(0, d) - &xi0;
    let mut identity_residual: f64 = 0.0;
    let mut xs = Vec::with_capacity(traj.len());
    let mut xbars = Vec::with_capacity(traj.len());
    let mut errs = Vec::with_capacity(traj.len());
    let mut phi_final_norm = 1.0;
    for (t, s) in traj.times.iter().zip(&traj.states) {
        let x = s.rows(0, n).into_owned();
        let xi = s.rows(n, d).into_owned();
        let phi = DMatrix::from_column_slice(d, d, s.rows(n + d, d * d).as_slice());
        let w = x.rows(0, d);
        let res = (w - &xi) - &phi * &e0;
        identity_residual = identity_residual.max(linalg::vec_inf_norm(&res));
        phi_final_norm = linalg::inf_norm(&phi);

        let y = sys.output_row(*t)?.dot(&x);
        let x_beta = ltv_gpebo::reconstruct_x_beta(xi.as_slice(), y, sys, *t)?;
        let mut xbar = DVector::zeros(beta);
        xbar.rows_mut(0, d).copy_from(&xi);
        xbar[d] = x_beta;
        errs.push(x.rows(0, beta) - &xbar);
        xbars.push(xbar);
        xs.push(x);
    }
    let mut result = ScenarioResult::build(traj.times, xs, xbars, errs, DEFAULT_THRESHOLD)?;
    result.ltv = Some(LtvDiagnostics {
        beta,
        identity_residual,
        phi_final_norm,
        phi_decays: phi_final_norm < 1.0,
    });
    Ok(result)
}

fn reals(v: &[f64]) -> Vec<Complex64> {
    v.iter().map(|&p| Complex64::new(p, 0.0)).collect()
}

/// Settings of the bilinear cascade demo on the four-integrator chain with
/// `C = [1 1 0 0]` and nonlinearity `x_1 x_3` entering through `B = e_4`.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearDemo {
    /// Gain of the full-state observer; placed at `k_poles` when absent.
    pub k: Option<DMatrix<f64>>,
    pub k_poles: Vec<Complex64>,
    /// Spectrum of the functional observer. The plant zero at `-1` is a
    /// fixed mode of `(M, C)` and has to be included.
    pub uio_poles: Vec<Complex64>,
    pub x0: DVector<f64>,
    pub t_final: f64,
    pub dt: f64,
    /// Start every observer from the true state.
    pub exact_init: bool,
}

impl Default for BilinearDemo {
    fn default() -> Self {
        BilinearDemo {
            k: None,
            k_poles: reals(&[-2.0, -3.0, -4.0, -5.0]),
            uio_poles: reals(&[-1.0, -2.0, -3.0, -4.0]),
            x0: DVector::from_vec(vec![-0.1, 0.05, -0.05, 0.0]),
            t_final: 10.0,
            dt: DEFAULT_DT,
            exact_init: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BilinearResult {
    /// Channels are the full-state estimate `zeta` and `x - zeta`.
    pub full: ScenarioResult,
    /// `x_1 - x_hat_1`, `x_2 - x_hat_2` of the functional observer.
    pub functional_err: Vec<DVector<f64>>,
    pub k: DMatrix<f64>,
    pub realization: FunctionalObserverRealization,
}

pub fn run_bilinear_demo(cfg: &BilinearDemo) -> Result<BilinearResult> {
    let sys = presets::kernel_example();
    let n = sys.n();
    check_len("x0", &cfg.x0, n)?;
    let k = match &cfg.k {
        Some(k) => {
            if k.shape() != (n, 1) {
                return Err(Error::Dimension(format!("K must be {n}x1")));
            }
            k.clone()
        }
        None => {
            placement::place_observer_gain(
                &sys.a,
                &sys.c,
                &cfg.k_poles,
                &PlacementOptions::default(),
            )?
            .gain
        }
    };
    let akc = &sys.a - &k * &sys.c;
    let max_re = linalg::max_real_part(&linalg::eigenvalues(&akc)?);
    if max_re >= 0.0 {
        return Err(Error::Unstable { max_re });
    }
    let r = system_model::compute_relative_degrees(&sys, system_model::DEFAULT_ZERO_TOL)?;
    let design = uio_synth::design_observer(
        &sys,
        &r,
        &cfg.uio_poles,
        QMode::Full,
        &SynthesisOptions::default(),
    )?;
    let real = design.realization;
    if real.q_rows() < 2 || real.theta[(0, 0)].abs() > 1e-9 * linalg::inf_norm(&real.theta).max(1.0)
    {
        return Err(Error::Infeasible(
            "x_hat_1 must be a function of z alone for the cascade".into(),
        ));
    }
    let b = sys.b.column(0).into_owned();
    let c = sys.c.row(0).transpose();
    let kc = k.column(0).into_owned();

    let (z0, xi0) = if cfg.exact_init {
        let z0 = z0_for_estimate(&real, &sys, &cfg.x0, &cfg.x0)?;
        let y0 = c.dot(&cfg.x0);
        (z0, &cfg.x0 - &b * (cfg.x0[0] * y0))
    } else {
        (DVector::zeros(n), DVector::zeros(n))
    };

    let estimate = |z: &DVector<f64>, y: f64| real.estimate(z, &DVector::from_element(1, y));
    let mut s0 = DVector::zeros(3 * n);
    s0.rows_mut(0, n).copy_from(&cfg.x0);
    s0.rows_mut(n, n).copy_from(&z0);
    s0.rows_mut(2 * n, n).copy_from(&xi0);
    let traj = rk4_integrate_bounded(
        |_t, s| {
            let x = s.rows(0, n).into_owned();
            let z = s.rows(n, n).into_owned();
            let xi = s.rows(2 * n, n).into_owned();
            let y = c.dot(&x);
            let yv = DVector::from_element(1, y);
            let dx = &sys.a * &x + &b * (x[0] * x[2]);
            let dz = real.z_dot(&z, &yv);
            let xh = real.estimate(&z, &yv);
            // d/dt x_hat_1 = (Q z')_1 because Theta_1 = 0
            let dxh1 = (&real.q * &dz)[0];
            let zeta = &xi + &b * (xh[0] * y);
            let dxi =
                &sys.a * &zeta + &kc * (y - c.dot(&zeta)) - &b * (dxh1 * y) - &b * (xh[0] * xh[1]);
            let mut ds = DVector::zeros(3 * n);
            ds.rows_mut(0, n).copy_from(&dx);
            ds.rows_mut(n, n).copy_from(&dz);
            ds.rows_mut(2 * n, n).copy_from(&dxi);
            Ok(ds)
        },
        &s0,
        0.0,
        cfg.t_final,
        cfg.dt,
        Some(BILINEAR_BOUND),
    )?;

    let mut xs = Vec::with_capacity(traj.len());
    let mut zetas = Vec::with_capacity(traj.len());
    let mut errs = Vec::with_capacity(traj.len());
    let mut ferr = Vec::with_capacity(traj.len());
    for s in &traj.states {
        let x = s.rows(0, n).into_owned();
        let y = c.dot(&x);
        let xh = estimate(&s.rows(n, n).into_owned(), y);
        let zeta = s.rows(2 * n, n) + &b * (xh[0] * y);
        ferr.push(&real.q * &x - &xh);
        errs.push(&x - &zeta);
        zetas.push(zeta);
        xs.push(x);
    }
    let full = ScenarioResult::build(traj.times, xs, zetas, errs, DEFAULT_THRESHOLD)?;
    Ok(BilinearResult {
        full,
        functional_err: ferr,
        k,
        realization: real,
    })
}

/// CSV with header `t,x1..xn,xbar1..xbarq,err1..errq`, keeping every
/// `decimation`-th sample and always the last one.
pub fn write_csv<W: Write>(out: W, res: &ScenarioResult, decimation: usize) -> Result<()> {
    if decimation == 0 {
        return Err(Error::InvalidArgument(
            "decimation must be at least 1".into(),
        ));
    }
    let io = |e: csv::Error| Error::Numerical(format!("CSV output failed: {e}"));
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((1..=res.n()).map(|i| format!("x{i}")));
    header.extend((1..=res.q()).map(|i| format!("xbar{i}")));
    header.extend((1..=res.q()).map(|i| format!("err{i}")));
    w.write_record(&header).map_err(io)?;
    let last = res.times.len().saturating_sub(1);
    for k in 0..res.times.len() {
        if k % decimation != 0 && k != last {
            continue;
        }
        let mut row = Vec::with_capacity(header.len());
        row.push(format!("{:.14e}", res.times[k]));
        for v in res.x[k]
            .iter()
            .chain(res.xbar[k].iter())
            .chain(res.err[k].iter())
        {
            row.push(format!("{v:.14e}"));
        }
        w.write_record(&row).map_err(io)?;
    }
    w.flush()
        .map_err(|e| Error::Numerical(format!("CSV output failed: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn decay(_t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(-x)
    }

    #[test]
    fn rk4_exponential() {
        let tr = rk4_integrate(decay, &dvector![1.0], 0.0, 1.0, 1e-3).unwrap();
        assert_eq!(tr.len(), 1001);
        assert!((tr.last()[0] - (-1.0f64).exp()).abs() < 1e-10);
        assert_eq!(*tr.times.last().unwrap(), 1.0);
    }

    #[test]
    fn rk4_constant_field() {
        let tr = rk4_integrate(|_, x| Ok(x * 0.0), &dvector![2.5, -1.0], 0.0, 3.0, 0.1).unwrap();
        assert!(tr.states.iter().all(|s| *s == dvector![2.5, -1.0]));
    }

    #[test]
    fn rk4_order_four() {
        let err = |dt: f64| {
            let tr = rk4_integrate(decay, &dvector![1.0], 0.0, 1.0, dt).unwrap();
            (tr.last()[0] - (-1.0f64).exp()).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((ratio - 16.0).abs() < 2.0, "ratio {ratio}");
    }

    #[test]
    fn rk4_partial_last_step() {
        let tr = rk4_integrate(decay, &dvector![1.0], 0.0, 1.05, 0.1).unwrap();
        assert_eq!(tr.len(), 12);
        assert_eq!(*tr.times.last().unwrap(), 1.05);
        assert!((tr.times[10] - 1.0).abs() < 1e-15);
        assert!((tr.last()[0] - (-1.05f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn rk4_divergence_reported() {
        let err =
            rk4_integrate(|_, x| Ok(x.map(|v| v * v)), &dvector![1.0], 0.0, 2.0, 0.01).unwrap_err();
        match err {
            Error::Divergence {
                step,
                last_finite_t,
            } => {
                // blow-up of x' = x^2, x(0) = 1 happens at t = 1
                assert!(step > 90 && step < 200, "{step}");
                assert!(
                    last_finite_t > 0.9 && last_finite_t < 2.0,
                    "{last_finite_t}"
                );
            }
            other => panic!("{other}"),
        }
        let err = rk4_integrate_bounded(
            |_, x| Ok(x.clone()),
            &dvector![1.0],
            0.0,
            10.0,
            0.01,
            Some(10.0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
        assert!(rk4_integrate(decay, &dvector![1.0], 0.0, 1.0, 0.0).is_err());
        assert!(rk4_integrate(decay, &dvector![1.0], 1.0, 0.0, 0.1).is_err());
    }

    #[test]
    fn metrics_of_synthetic_errors() {
        let times: Vec<f64> = (0..=1000).map(|k| k as f64 * 1e-3 * 3.0).collect();
        let errs: Vec<_> = times.iter().map(|t| dvector![(-4.0 * t).exp()]).collect();
        let m = error_metrics(&times, &errs, 1e-3).unwrap();
        let DecayRate::Rate(rate) = m.decay_rate else {
            panic!()
        };
        assert!((rate + 4.0).abs() < 0.08, "{rate}");
        let expected = (1e-3f64).ln() / -4.0;
        assert!((m.time_to_threshold.unwrap() - expected).abs() < 4e-3);

        let constant: Vec<_> = times.iter().map(|_| dvector![0.2, -0.1]).collect();
        let m = error_metrics(&times, &constant, 1e-3).unwrap();
        let DecayRate::Rate(flat) = m.decay_rate else {
            panic!()
        };
        assert!(flat.abs() < 1e-12);
        assert_eq!(m.time_to_threshold, None);

        let zero: Vec<_> = times.iter().map(|_| dvector![0.0]).collect();
        let m = error_metrics(&times, &zero, 1e-3).unwrap();
        assert_eq!(m.decay_rate, DecayRate::Exact);
        assert_eq!(m.time_to_threshold, Some(0.0));
    }

    fn mimo_realization() -> (LtiSystem, UioGains, FunctionalObserverRealization) {
        let sys = presets::mimo_plant();
        let r = system_model::compute_relative_degrees(&sys, system_model::DEFAULT_ZERO_TOL)
            .unwrap()
            .with_override(&presets::MIMO_R_OVERRIDE)
            .unwrap();
        let d = uio_synth::design_observer(
            &sys,
            &r,
            &presets::mimo_poles(),
            QMode::Full,
            &Default::default(),
        )
        .unwrap();
        (sys, d.gains, d.realization)
    }

    fn sin_input() -> Vec<SourceExpr> {
        vec![SourceExpr::parse("sin(2*t)").unwrap()]
    }

    #[test]
    fn mimo_transient_decays() {
        let (sys, _, real) = mimo_realization();
        let x0 = DVector::from_row_slice(&presets::MIMO_X0);
        let res =
            run_mimo_scenario(&sys, &real, &sin_input(), &x0, &ZInit::Zero, 3.0, 1e-3).unwrap();
        assert!(res.metrics.final_norm <= 1e-3, "{}", res.metrics.final_norm);
        let DecayRate::Rate(rate) = res.metrics.decay_rate else {
            panic!()
        };
        assert!(rate <= -3.8, "{rate}");
    }

    #[test]
    fn mimo_zero_everything() {
        let (sys, _, real) = mimo_realization();
        let zero = vec![SourceExpr::parse("0").unwrap()];
        let res = run_mimo_scenario(
            &sys,
            &real,
            &zero,
            &DVector::zeros(5),
            &ZInit::Zero,
            1.0,
            1e-2,
        )
        .unwrap();
        assert!(res.err.iter().all(|e| e.iter().all(|v| *v == 0.0)));
        assert_eq!(res.metrics.decay_rate, DecayRate::Exact);
    }

    #[test]
    fn mimo_matched_start_stays_exact() {
        let (sys, _, real) = mimo_realization();
        let x0 = DVector::from_row_slice(&presets::MIMO_X0);
        let res = run_mimo_scenario(
            &sys,
            &real,
            &sin_input(),
            &x0,
            &ZInit::MatchEstimate(x0.clone()),
            5.0,
            1e-3,
        )
        .unwrap();
        assert!(res.metrics.max_norm < 1e-9, "{}", res.metrics.max_norm);
    }

    #[test]
    fn oracle_exact_start() {
        let (sys, gains, _) = mimo_realization();
        let r = RelativeDegreeProfile::from_values(vec![3, 3], 5).unwrap();
        let x0 = DVector::from_row_slice(&presets::MIMO_X0);
        let run =
            derivative_feed_oracle(&sys, &gains, &r, &sin_input(), &x0, &x0, 5.0, 1e-3).unwrap();
        for (x, xh) in run.x.iter().zip(&run.xhat) {
            assert!(linalg::vec_inf_norm(&(x - xh)) < 1e-9);
        }
    }

    #[test]
    fn oracle_error_follows_matrix_exponential() {
        let (sys, gains, _) = mimo_realization();
        let r = RelativeDegreeProfile::from_values(vec![3, 3], 5).unwrap();
        let x0 = DVector::from_row_slice(&presets::MIMO_X0);
        let run = derivative_feed_oracle(
            &sys,
            &gains,
            &r,
            &sin_input(),
            &x0,
            &DVector::zeros(5),
            2.0,
            1e-3,
        )
        .unwrap();
        for target in [0.5, 1.0, 2.0] {
            let k = run
                .times
                .iter()
                .position(|t| (t - target).abs() < 1e-9)
                .unwrap();
            let predicted = (&gains.f * target).exp() * &x0;
            let actual = &run.x[k] - &run.xhat[k];
            assert!(linalg::vec_inf_norm(&(actual - predicted)) < 1e-6);
        }
    }

    #[test]
    fn oracle_matches_realization() {
        let (sys, gains, real) = mimo_realization();
        let x0 = DVector::from_row_slice(&presets::MIMO_X0);
        let cmp = oracle_deviation(
            &sys,
            &gains,
            &real,
            &sin_input(),
            &x0,
            &DVector::zeros(5),
            10.0,
            1e-3,
        )
        .unwrap();
        assert!(cmp.max_deviation < 1e-6, "{cmp:?}");
        assert!(cmp.initial_deviation < 1e-12);
    }

    #[test]
    fn ltv_scenario_converges() {
        let sys = presets::ltv_system();
        let x0 = DVector::from_row_slice(&presets::LTV_X0);
        let u = SourceExpr::parse("0").unwrap();
        let res = run_ltv_scenario(
            &presets::ltv_plant_a(),
            &presets::ltv_plant_b(),
            &sys,
            &u,
            &x0,
            None,
            20.0,
            1e-3,
        )
        .unwrap();
        let diag = res.ltv.as_ref().unwrap();
        assert_eq!(diag.beta, 3);
        assert_eq!(res.q(), 3);
        assert!(res.metrics.final_norm <= 1e-2, "{}", res.metrics.final_norm);
        assert!(diag.identity_residual <= 1e-6, "{}", diag.identity_residual);
        assert!(diag.phi_decays);
    }

    #[test]
    fn ltv_exact_start() {
        let sys = presets::ltv_system();
        let x0 = DVector::from_row_slice(&presets::LTV_X0);
        let u = SourceExpr::parse("0").unwrap();
        let xi0 = x0.rows(0, 2).into_owned();
        let res = run_ltv_scenario(
            &presets::ltv_plant_a(),
            &presets::ltv_plant_b(),
            &sys,
            &u,
            &x0,
            Some(&xi0),
            5.0,
            1e-3,
        )
        .unwrap();
        assert!(res.metrics.max_norm < 1e-9, "{}", res.metrics.max_norm);
    }

    #[test]
    fn ltv_rejects_non_chain_plant() {
        let sys = presets::ltv_system();
        let mut a = presets::ltv_plant_a();
        a[(0, 2)] = 1.0;
        let u = SourceExpr::parse("0").unwrap();
        let x0 = DVector::from_row_slice(&presets::LTV_X0);
        assert!(
            run_ltv_scenario(&a, &presets::ltv_plant_b(), &sys, &u, &x0, None, 1.0, 1e-2).is_err()
        );
    }

    #[test]
    fn bilinear_demo_default() {
        let res = run_bilinear_demo(&BilinearDemo::default()).unwrap();
        let e0 = linalg::vec_inf_norm(&res.full.err[0]);
        assert!(
            res.full.metrics.final_norm * 1e3 <= e0,
            "{} vs {e0}",
            res.full.metrics.final_norm
        );
    }

    #[test]
    fn bilinear_demo_trivial_cases() {
        let cfg = BilinearDemo {
            x0: DVector::zeros(4),
            t_final: 2.0,
            ..Default::default()
        };
        let res = run_bilinear_demo(&cfg).unwrap();
        assert!(res.full.x.iter().all(|x| x.iter().all(|v| *v == 0.0)));
        assert_eq!(res.full.metrics.decay_rate, DecayRate::Exact);

        let cfg = BilinearDemo {
            exact_init: true,
            t_final: 5.0,
            ..Default::default()
        };
        let res = run_bilinear_demo(&cfg).unwrap();
        assert!(
            res.full.metrics.max_norm < 1e-9,
            "{}",
            res.full.metrics.max_norm
        );
    }

    #[test]
    fn bilinear_rejects_unstable_gain() {
        let cfg = BilinearDemo {
            k: Some(DMatrix::zeros(4, 1)),
            ..Default::default()
        };
        assert!(matches!(
            run_bilinear_demo(&cfg),
            Err(Error::Unstable { .. })
        ));
    }

    #[test]
    fn csv_layout() {
        let times = vec![0.0, 0.5, 1.0];
        let x = vec![dvector![1.0, 2.0]; 3];
        let xbar = vec![dvector![0.5]; 3];
        let err = vec![dvector![0.5]; 3];
        let res = ScenarioResult::build(times, x, xbar, err, 1e-3).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &res, 2).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x1,x2,xbar1,err1");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("1.00000000000000e0,"));
        assert!(write_csv(Vec::new(), &res, 0).is_err());
    }
}
