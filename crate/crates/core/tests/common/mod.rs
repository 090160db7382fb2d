#![allow(dead_code)]

use std::ops::RangeInclusive;

use fuio_core::linalg;
use fuio_core::system_model::{compute_relative_degrees, DEFAULT_ZERO_TOL};
use fuio_core::uio_synth::{self, Design, QMode, SynthesisOptions};
use fuio_core::{Complex64, LtiSystem, RelativeDegreeProfile};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

pub const MAX_STATES: usize = 6;
const MAX_ATTEMPTS: usize = 1000;
/// Smallest accepted `|C_i A^(r_i - 1) B|` relative to `|C_i|`.
const MIN_LEADING: f64 = 0.05;
/// Smallest distance of the plant spectrum from the imaginary axis.
const MIN_STABILITY: f64 = 0.1;
/// Largest accepted `|F|_inf`.
const MAX_F_NORM: f64 = 1e3;
/// Smallest gap between requested poles.
const MIN_POLE_GAP: f64 = 0.3;

/// A feasible Hurwitz plant with its prescribed relative degrees, poles and design.
pub struct RandomCase {
    pub seed: u64,
    pub sys: LtiSystem,
    pub r: RelativeDegreeProfile,
    pub poles: Vec<Complex64>,
    pub design: Design,
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let d = Uniform::new(-1.0, 1.0).expect("valid range");
    DMatrix::from_fn(rows, cols, |_, _| d.sample(rng))
}

/// Columns `B, AB, ..., A^(k-1) B`.
fn krylov(a: &DMatrix<f64>, b: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let (n, m) = b.shape();
    let mut out = DMatrix::zeros(n, m * k);
    let mut blk = b.clone();
    for j in 0..k {
        out.columns_mut(j * m, m).copy_from(&blk);
        blk = a * blk;
    }
    out
}

/// Random row orthogonal to the columns of `t`.
fn row_in_complement(rng: &mut ChaCha8Rng, t: &DMatrix<f64>) -> DMatrix<f64> {
    let n = t.nrows();
    let v = uniform_matrix(rng, n, 1);
    if t.ncols() == 0 {
        return v.transpose();
    }
    let basis = linalg::column_space_basis(t, None).expect("finite matrix");
    let c = &v - &basis * (basis.transpose() * &v);
    c.transpose()
}

/// `n` distinct stable poles, closed under conjugation, at least `MIN_POLE_GAP` apart.
pub fn random_poles(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
    loop {
        let mut poles = Vec::with_capacity(n);
        if n >= 2 && rng.random_bool(0.5) {
            let re = rng.random_range(-4.0..-1.0);
            let im = rng.random_range(0.5..2.0);
            poles.push(Complex64::new(re, im));
            poles.push(Complex64::new(re, -im));
        }
        while poles.len() < n {
            poles.push(Complex64::new(rng.random_range(-6.0..-0.5), 0.0));
        }
        let separated = poles.iter().enumerate().all(|(i, p)| {
            poles[i + 1..]
                .iter()
                .all(|q| (p - q).norm() >= MIN_POLE_GAP)
        });
        if separated {
            return poles;
        }
    }
}

fn try_case(
    rng: &mut ChaCha8Rng,
    degrees: RangeInclusive<usize>,
) -> Option<(LtiSystem, RelativeDegreeProfile, Vec<Complex64>)> {
    let n = rng.random_range(3..=MAX_STATES);
    let m = if n >= 5 && rng.random_bool(0.5) { 2 } else { 1 };
    let l = m + rng.random_range(1..=2);
    let mut a = uniform_matrix(rng, n, n);
    let shift = linalg::max_real_part(&linalg::eigenvalues(&a).ok()?)
        + rng.random_range(MIN_STABILITY..1.0);
    for i in 0..n {
        a[(i, i)] -= shift;
    }
    let b = uniform_matrix(rng, n, m);

    let mut c = DMatrix::zeros(l, n);
    let mut r = Vec::with_capacity(l);
    for i in 0..l {
        let ri = rng.random_range(degrees.clone());
        if m * (ri - 1) >= n {
            return None;
        }
        let row = row_in_complement(rng, &krylov(&a, &b, ri - 1));
        let lead = &row * linalg::mat_pow(&a, ri - 1) * &b;
        if linalg::max_abs(&lead) < MIN_LEADING * linalg::max_abs(&row) {
            return None;
        }
        c.row_mut(i).copy_from(&row);
        r.push(ri);
    }
    let sys = LtiSystem::new(a, b, c).ok()?;
    let profile = compute_relative_degrees(&sys, DEFAULT_ZERO_TOL).ok()?;
    if profile.degrees() != r.as_slice() {
        return None;
    }
    let poles = random_poles(rng, n);
    Some((sys, profile, poles))
}

/// Draws systems from `seed` until one admits a detectable, well-conditioned design
/// with the drawn poles.
pub fn random_case(seed: u64) -> RandomCase {
    random_case_with_degrees(seed, 1..=3)
}

/// As [`random_case`], with every relative degree drawn from `degrees`.
pub fn random_case_with_degrees(seed: u64, degrees: RangeInclusive<usize>) -> RandomCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ATTEMPTS {
        let Some((sys, r, poles)) = try_case(&mut rng, degrees.clone()) else {
            continue;
        };
        let Ok(design) =
            uio_synth::design_observer(&sys, &r, &poles, QMode::Full, &SynthesisOptions::default())
        else {
            continue;
        };
        if !design.detectable_mc || linalg::inf_norm(&design.gains.f) > MAX_F_NORM {
            continue;
        }
        return RandomCase {
            seed,
            sys,
            r,
            poles,
            design,
        };
    }
    panic!("no feasible system found for seed {seed}");
}

pub fn random_cases(count: usize, base_seed: u64) -> Vec<RandomCase> {
    (0..count as u64)
        .map(|k| random_case(base_seed + k))
        .collect()
}

pub fn random_vector(seed: u64, n: usize) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Uniform::new(-1.0, 1.0).expect("valid range");
    DVector::from_fn(n, |_, _| d.sample(&mut rng))
}

/// `max(1, |A|_inf, |B|_inf)`, the scale used by relative residual checks.
pub fn scale(sys: &LtiSystem) -> f64 {
    1.0_f64
        .max(linalg::inf_norm(&sys.a))
        .max(linalg::inf_norm(&sys.b))
}
