//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{random_case_with_degrees, random_vector, RandomCase};
use fuio_core::linalg;
use fuio_core::ltv_gpebo;
use fuio_core::presets;
use fuio_core::sim_engine::{self, BilinearDemo, DecayRate, ZInit};
use fuio_core::system_model::{compute_relative_degrees, DEFAULT_ZERO_TOL};
use fuio_core::uio_synth::{self, Design, QMode, SynthesisOptions};
use fuio_core::{Complex64, LtiSystem, RelativeDegreeProfile, SourceExpr};
use nalgebra::{dmatrix, DMatrix, DVector};

const RANDOM_SYSTEMS: usize = 20;
const RANDOM_SEED: u64 = 0x5eed;

// Pinned tolerances, in criterion order.
const GOLDEN_ENTRY_TOL: f64 = 1e-12;
const GOLDEN_ANGLE_TOL: f64 = 1e-9;
const GOLDEN_RUNTIME: Duration = Duration::from_secs(1);
const REFERENCE_GAIN_TOL: f64 = 0.05;
const OWN_GAIN_REL_TOL: f64 = 1e-6;
const MIMO_ERR_AT_3_TOL: f64 = 1e-3;
const MIMO_RATE_BOUND: f64 = -3.8;
const MIMO_RUNTIME: Duration = Duration::from_secs(5);
const MIMO_DT: f64 = 1e-3;
const MIMO_T_FINAL: f64 = 5.0;
const ORACLE_TOL: f64 = 1e-6;
const ORACLE_DT: f64 = 1e-4;
const ORACLE_T_FINAL: f64 = 10.0;
const CONDITION_F_TOL: f64 = 1e-8;
const GPEBO_IDENTITY_TOL: f64 = 1e-6;
const LTV_FINAL_TOL: f64 = 1e-2;
const LTV_WINDOW: f64 = 2.0;
const LTV_T_FINAL: f64 = 20.0;
const FROZEN_MARGIN: f64 = 0.382;
const FROZEN_MARGIN_TOL: f64 = 0.01;
const BILINEAR_X0_BOUND: f64 = 0.1;
const BILINEAR_ORDERS: f64 = 3.0;
const KERNEL_COLLINEAR_TOL: f64 = 1e-9;
const RK4_RATIO: f64 = 16.0;
const RK4_RATIO_TOL: f64 = 2.0;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Outcome { pass, detail }
    }
}

type Check = fn() -> Outcome;

fn mimo_profile(sys: &LtiSystem) -> RelativeDegreeProfile {
    compute_relative_degrees(sys, DEFAULT_ZERO_TOL)
        .unwrap()
        .with_override(&presets::MIMO_R_OVERRIDE)
        .unwrap()
}

fn mimo_design() -> (LtiSystem, RelativeDegreeProfile, Design) {
    let sys = presets::mimo_plant();
    let r = mimo_profile(&sys);
    let design = uio_synth::design_observer(
        &sys,
        &r,
        &presets::mimo_poles(),
        QMode::Full,
        &SynthesisOptions::default(),
    )
    .unwrap();
    (sys, r, design)
}

fn randoms() -> Vec<RandomCase> {
    common::random_cases(RANDOM_SYSTEMS, RANDOM_SEED)
}

fn max_rel_pole_error(f: &DMatrix<f64>, poles: &[Complex64]) -> f64 {
    let achieved = linalg::eigenvalues(f).unwrap();
    linalg::spectrum_relative_errors(&achieved, poles)
        .into_iter()
        .fold(0.0, f64::max)
}

fn golden_synthesis() -> Outcome {
    let start = Instant::now();
    let (_, _, design) = mimo_design();
    let elapsed = start.elapsed();
    let g_err = linalg::max_abs(&(&design.gains.g - presets::mimo_reference_g()));
    let m_err = linalg::max_abs(&(&design.gains.m - presets::mimo_reference_m()));
    let angle = linalg::max_principal_angle(
        &design.realization.q.transpose(),
        &presets::mimo_reference_q().transpose(),
    )
    .unwrap();
    let pass = g_err <= GOLDEN_ENTRY_TOL
        && m_err <= GOLDEN_ENTRY_TOL
        && design.realization.q.nrows() == 3
        && angle <= GOLDEN_ANGLE_TOL
        && elapsed < GOLDEN_RUNTIME;
    Outcome::new(
        pass,
        format!(
            "|G - G*| = {g_err:.1e}, |M - M*| = {m_err:.1e} (tol {GOLDEN_ENTRY_TOL:e}); \
             angle(Q, e1..e3) = {angle:.1e} (tol {GOLDEN_ANGLE_TOL:e}); {:.1} ms (< {} ms)",
            elapsed.as_secs_f64() * 1e3,
            GOLDEN_RUNTIME.as_millis()
        ),
    )
}

fn reference_gain() -> Outcome {
    let sys = presets::mimo_plant();
    let f = presets::mimo_reference_m() - presets::mimo_reference_l() * &sys.c;
    let eigs = linalg::eigenvalues(&f).unwrap();
    let worst = linalg::spectrum_abs_errors(&eigs, &presets::mimo_poles())
        .into_iter()
        .fold(0.0, f64::max);
    Outcome::new(
        worst <= REFERENCE_GAIN_TOL,
        format!("max |eig - requested| = {worst:.4} (tol {REFERENCE_GAIN_TOL})"),
    )
}

fn own_gain() -> Outcome {
    let (_, _, design) = mimo_design();
    let mimo = max_rel_pole_error(&design.gains.f, &presets::mimo_poles());
    let worst_random = randoms()
        .iter()
        .map(|c| max_rel_pole_error(&c.design.gains.f, &c.poles))
        .fold(0.0, f64::max);
    Outcome::new(
        mimo <= OWN_GAIN_REL_TOL && worst_random <= OWN_GAIN_REL_TOL,
        format!(
            "study system {mimo:.1e}, worst of {RANDOM_SYSTEMS} random {worst_random:.1e} (tol {OWN_GAIN_REL_TOL:e})"
        ),
    )
}

fn mimo_transient() -> Outcome {
    let start = Instant::now();
    let (sys, _, design) = mimo_design();
    let f = vec![SourceExpr::parse("sin(2*t)").unwrap()];
    let x0 = DVector::from_row_slice(&presets::MIMO_X0);
    let res = sim_engine::run_mimo_scenario(
        &sys,
        &design.realization,
        &f,
        &x0,
        &ZInit::Zero,
        MIMO_T_FINAL,
        MIMO_DT,
    )
    .unwrap();
    let elapsed = start.elapsed();
    let idx = res
        .times
        .iter()
        .position(|&t| (t - 3.0).abs() < MIMO_DT / 2.0)
        .unwrap();
    let at3 = linalg::vec_inf_norm(&res.err[idx]);
    let rate = match res.metrics.decay_rate {
        DecayRate::Exact => f64::NEG_INFINITY,
        DecayRate::Rate(r) => r,
    };
    let pass = res.q() == 3
        && at3 <= MIMO_ERR_AT_3_TOL
        && rate <= MIMO_RATE_BOUND
        && elapsed < MIMO_RUNTIME;
    Outcome::new(
        pass,
        format!(
            "|e(3)| = {at3:.2e} (tol {MIMO_ERR_AT_3_TOL:e}); rate {rate:.3} (<= {MIMO_RATE_BOUND}); {:.2} s (< {} s)",
            elapsed.as_secs_f64(),
            MIMO_RUNTIME.as_secs()
        ),
    )
}

fn inputs_for(m: usize) -> Vec<SourceExpr> {
    ["sin(t)", "cos(1.7*t)+0.5"]
        .iter()
        .cycle()
        .take(m)
        .map(|s| SourceExpr::parse(s).unwrap())
        .collect()
}

fn oracle_equivalence() -> Outcome {
    let (sys, _, design) = mimo_design();
    let f = vec![SourceExpr::parse("sin(2*t)").unwrap()];
    let x0 = DVector::from_row_slice(&presets::MIMO_X0);
    let xhat0 = DVector::zeros(sys.n());
    let mimo = sim_engine::oracle_deviation(
        &sys,
        &design.gains,
        &design.realization,
        &f,
        &x0,
        &xhat0,
        ORACLE_T_FINAL,
        ORACLE_DT,
    )
    .unwrap()
    .max_deviation;
    let mut worst: f64 = 0.0;
    for c in randoms() {
        let n = c.sys.n();
        let x0 = random_vector(c.seed ^ 0xa5a5, n);
        let xhat0 = random_vector(c.seed ^ 0x5a5a, n);
        let dev = sim_engine::oracle_deviation(
            &c.sys,
            &c.design.gains,
            &c.design.realization,
            &inputs_for(c.sys.m()),
            &x0,
            &xhat0,
            ORACLE_T_FINAL,
            ORACLE_DT,
        )
        .unwrap()
        .max_deviation;
        worst = worst.max(dev);
    }
    Outcome::new(
        mimo <= ORACLE_TOL && worst <= ORACLE_TOL,
        format!(
            "study system {mimo:.1e}, worst of {RANDOM_SYSTEMS} random {worst:.1e} (tol {ORACLE_TOL:e}, dt {ORACLE_DT:e}, horizon {ORACLE_T_FINAL})"
        ),
    )
}

/// `(QA^iB ok, rank ok, [max QF^kG residual / tol for k = 1, 2 when applicable])`.
fn condition_suite_case(
    sys: &LtiSystem,
    r: &RelativeDegreeProfile,
    design: &Design,
) -> (bool, bool, [Option<f64>; 2]) {
    let q = &design.realization.q;
    let cond = uio_synth::verify_functional_condition(q, &sys.a, &sys.b, r.r_max());
    let rank_t = linalg::numerical_rank(&design.t, None).unwrap();
    let rank_ok =
        q.nrows() == sys.n() - rank_t && linalg::numerical_rank(q, None).unwrap() == q.nrows();
    let r_min = r.degrees().iter().copied().min().unwrap();
    let g = &design.gains.g;
    let f = &design.gains.f;
    let mut ratios = [None, None];
    for (slot, k) in ratios.iter_mut().zip(1..=2usize) {
        if r_min > k {
            let res = linalg::max_abs(
                &(q * linalg::mat_pow(f, k) * g - q * linalg::mat_pow(&sys.a, k) * g),
            );
            let norm = linalg::inf_norm(&sys.a).max(linalg::inf_norm(f));
            let scale = (linalg::inf_norm(q) * norm.powi(k as i32) * linalg::inf_norm(g)).max(1.0);
            *slot = Some(res / (CONDITION_F_TOL * scale));
        }
    }
    (cond.holds(), rank_ok, ratios)
}

fn condition_suite() -> Outcome {
    let (sys, r, design) = mimo_design();
    let mut cases = vec![(sys, r, design)];
    let mut seed = RANDOM_SEED + 1000;
    let mut push = |c: RandomCase| cases.push((c.sys, c.r, c.design));
    for c in randoms() {
        push(c);
    }
    for degrees in [2..=3, 3..=3] {
        for _ in 0..RANDOM_SYSTEMS / 2 {
            push(random_case_with_degrees(seed, degrees.clone()));
            seed += 1;
        }
    }
    let mut cond_ok = true;
    let mut rank_ok = true;
    let mut counts = [0usize; 2];
    let mut worst = [0.0f64; 2];
    for (sys, r, design) in &cases {
        let (c, rk, ratios) = condition_suite_case(sys, r, design);
        cond_ok &= c;
        rank_ok &= rk;
        for k in 0..2 {
            if let Some(v) = ratios[k] {
                counts[k] += 1;
                worst[k] = worst[k].max(v);
            }
        }
    }
    let pass =
        cond_ok && rank_ok && counts.iter().all(|&c| c > 0) && worst.iter().all(|&w| w <= 1.0);
    Outcome::new(
        pass,
        format!(
            "{} systems: QA^iB = 0 {}, rank(Q) = n - rank(T) {}; \
             QFG = QAG on {} (worst {:.1e} of tol), QF^2G = QA^2G on {} (worst {:.1e} of tol); tol {CONDITION_F_TOL:e} x scale",
            cases.len(),
            if cond_ok { "holds" } else { "violated" },
            if rank_ok { "holds" } else { "violated" },
            counts[0],
            worst[0],
            counts[1],
            worst[1],
        ),
    )
}

fn ltv_run(xi0: Option<&DVector<f64>>) -> sim_engine::ScenarioResult {
    let sys = presets::ltv_system();
    let u = SourceExpr::parse("0").unwrap();
    let x0 = DVector::from_row_slice(&presets::LTV_X0);
    sim_engine::run_ltv_scenario(
        &presets::ltv_plant_a(),
        &presets::ltv_plant_b(),
        &sys,
        &u,
        &x0,
        xi0,
        LTV_T_FINAL,
        sim_engine::DEFAULT_DT,
    )
    .unwrap()
}

fn gpebo_identity() -> Outcome {
    let d = ltv_gpebo::reduce_to_w(&presets::ltv_system())
        .unwrap()
        .dim();
    let inits = [
        DVector::zeros(d),
        DVector::from_element(d, 5.0),
        random_vector(RANDOM_SEED, d) * 10.0,
    ];
    let worst = inits
        .iter()
        .map(|xi0| {
            ltv_run(Some(xi0))
                .ltv
                .expect("LTV diagnostics")
                .identity_residual
        })
        .fold(0.0, f64::max);
    Outcome::new(
        worst <= GPEBO_IDENTITY_TOL,
        format!(
            "max residual over {} initializations = {worst:.1e} (tol {GPEBO_IDENTITY_TOL:e})",
            inits.len()
        ),
    )
}

/// Maxima of `|e_j|` over consecutive windows of width `LTV_WINDOW`.
fn window_maxima(res: &sim_engine::ScenarioResult, channel: usize) -> Vec<f64> {
    let windows = (LTV_T_FINAL / LTV_WINDOW).round() as usize;
    let mut out = vec![0.0f64; windows];
    for (t, e) in res.times.iter().zip(&res.err) {
        let w = ((t / LTV_WINDOW) as usize).min(windows - 1);
        out[w] = out[w].max(e[channel].abs());
    }
    out
}

fn ltv_transient() -> Outcome {
    let res = ltv_run(None);
    let mut monotone = true;
    for j in 0..res.q() {
        let maxima = window_maxima(&res, j);
        monotone &= maxima.windows(2).all(|w| w[1] <= w[0]);
    }
    let final_err = linalg::vec_inf_norm(res.err.last().unwrap());
    let red = ltv_gpebo::reduce_to_w(&presets::ltv_system()).unwrap();
    let grid = ltv_gpebo::uniform_grid(0.0, 50.0, 0.01);
    let margin = ltv_gpebo::frozen_stability_scan(&red, &grid)
        .unwrap()
        .margin;
    let pass = res.q() == 3
        && monotone
        && final_err <= LTV_FINAL_TOL
        && (margin - FROZEN_MARGIN).abs() <= FROZEN_MARGIN_TOL;
    Outcome::new(
        pass,
        format!(
            "window maxima ({LTV_WINDOW} s) non-increasing: {monotone}; |e(20)| = {final_err:.2e} (tol {LTV_FINAL_TOL:e}); \
             frozen margin {margin:.4} ({FROZEN_MARGIN} +/- {FROZEN_MARGIN_TOL})"
        ),
    )
}

fn bilinear() -> Outcome {
    let cfg = BilinearDemo::default();
    let run = sim_engine::run_bilinear_demo(&cfg).unwrap();
    let sys = presets::kernel_example();
    let k_err = max_rel_pole_error(&(&sys.a - &run.k * &sys.c), &cfg.k_poles);
    let x0_norm = linalg::vec_inf_norm(&cfg.x0);
    let first = linalg::vec_inf_norm(&run.full.err[0]);
    let last = run.full.metrics.final_norm;
    let orders = if last > 0.0 {
        (first / last).log10()
    } else {
        f64::INFINITY
    };
    let pass =
        x0_norm <= BILINEAR_X0_BOUND && k_err <= OWN_GAIN_REL_TOL && orders >= BILINEAR_ORDERS;
    Outcome::new(
        pass,
        format!(
            "|x0| = {x0_norm} (<= {BILINEAR_X0_BOUND}); eig(A - KC) error {k_err:.1e}; \
             error drop {orders:.2} orders (>= {BILINEAR_ORDERS}) over {} s",
            cfg.t_final
        ),
    )
}

fn kernel_example() -> Outcome {
    let sys = presets::kernel_example();
    let r = compute_relative_degrees(&sys, DEFAULT_ZERO_TOL).unwrap();
    let t = uio_synth::build_t(&sys.a, &sys.b, r.r_max());
    let expected_t = dmatrix![0.0, 0.0; 0.0, 0.0; 0.0, 1.0; 1.0, 0.0];
    let t_ok = r.degrees() == [3] && t == expected_t;
    let q = uio_synth::functional_matrix(&t, &sys.c, &r, None, QMode::Reduced).unwrap();
    let expected = dmatrix![1.0, -1.0, 0.0, 0.0];
    let angle = linalg::max_principal_angle(&q.transpose(), &expected.transpose()).unwrap();
    Outcome::new(
        t_ok && q.nrows() == 1 && angle <= KERNEL_COLLINEAR_TOL,
        format!("T matches reference: {t_ok}; angle(Q, [1 -1 0 0]) = {angle:.1e} (tol {KERNEL_COLLINEAR_TOL:e})"),
    )
}

fn rk4_order() -> Outcome {
    let err = |dt: f64| {
        let traj =
            sim_engine::rk4_integrate(|_, x| Ok(-x), &DVector::from_element(1, 1.0), 0.0, 1.0, dt)
                .unwrap();
        (traj.last()[0] - (-1.0f64).exp()).abs()
    };
    let ratios: Vec<f64> = [0.1, 0.05, 0.025]
        .iter()
        .map(|&dt| err(dt) / err(dt / 2.0))
        .collect();
    let pass = ratios
        .iter()
        .all(|r| (r - RK4_RATIO).abs() <= RK4_RATIO_TOL);
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.3}")).collect();
    Outcome::new(
        pass,
        format!(
            "error ratios under halving [{}] ({RK4_RATIO} +/- {RK4_RATIO_TOL})",
            shown.join(", ")
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, Check); 11] = [
        ("golden synthesis", golden_synthesis),
        ("reference gain spectrum", reference_gain),
        ("own gain spectrum", own_gain),
        ("MIMO transient", mimo_transient),
        ("oracle equivalence", oracle_equivalence),
        ("functional condition suite", condition_suite),
        ("fundamental-matrix identity", gpebo_identity),
        ("LTV transient", ltv_transient),
        ("bilinear cascade", bilinear),
        ("kernel example", kernel_example),
        ("RK4 order", rk4_order),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = check();
        let tag = if outcome.pass { "PASS" } else { "FAIL" };
        println!("{tag} {:>2} {name}: {}", i + 1, outcome.detail);
        if !outcome.pass {
            failures += 1;
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failures,
        criteria.len()
    );
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
