//! Built-in example plants and reference design matrices.

use nalgebra::{dmatrix, DMatrix};

use crate::linalg::Complex64;
use crate::system_model::{unit_column, upshift, LtiSystem, LtvCanonicalSystem};

/// Four-integrator chain with `C = [1 1 0 0]` (relative degree 3).
pub fn kernel_example() -> LtiSystem {
    LtiSystem::new(upshift(4), unit_column(4, 3), dmatrix![1.0, 1.0, 0.0, 0.0])
        .expect("static example is well formed")
}

/// Two-output, five-state plant of the MIMO study.
///
/// Row 4 of `A` is `[0 0 0 0 1]`: with this row, `M = A - G P` reproduces the
/// reference `M` exactly. The alternative row `[0 0 0 1 1]` is available as
/// [`mimo_plant_alt_row4`].
pub fn mimo_plant() -> LtiSystem {
    mimo_with_row4([0.0, 0.0, 0.0, 0.0, 1.0])
}

pub fn mimo_plant_alt_row4() -> LtiSystem {
    mimo_with_row4([0.0, 0.0, 0.0, 1.0, 1.0])
}

fn mimo_with_row4(row4: [f64; 5]) -> LtiSystem {
    let mut a = dmatrix![
        0.0, 1.0, 0.0, 0.0, 0.0;
        0.0, 0.0, 1.0, 0.0, 0.0;
        0.0, 0.0, 0.0, 1.0, 0.0;
        0.0, 0.0, 0.0, 0.0, 1.0;
        -1.0, -2.0, -3.0, -5.0, -5.0
    ];
    for (j, v) in row4.iter().enumerate() {
        a[(3, j)] = *v;
    }
    let c = dmatrix![
        1.0, 1.0, 0.0, 0.0, 0.0;
        1.0, 0.0, 1.0, 0.0, 0.0
    ];
    LtiSystem::new(a, unit_column(5, 4), c).expect("static example is well formed")
}

pub const MIMO_R_OVERRIDE: [usize; 2] = [3, 3];
pub const MIMO_POLES: [f64; 5] = [-4.0, -5.0, -6.0, -7.0, -8.0];
pub const MIMO_X0: [f64; 5] = [1.0, -1.0, 0.3, -0.5, 0.0];

pub fn mimo_poles() -> Vec<Complex64> {
    MIMO_POLES.iter().map(|&p| Complex64::new(p, 0.0)).collect()
}

pub fn mimo_reference_g() -> DMatrix<f64> {
    let mut g = DMatrix::zeros(5, 2);
    g[(4, 1)] = 1.0;
    g
}

pub fn mimo_reference_m() -> DMatrix<f64> {
    dmatrix![
        0.0, 1.0, 0.0, 0.0, 0.0;
        0.0, 0.0, 1.0, 0.0, 0.0;
        0.0, 0.0, 0.0, 1.0, 0.0;
        0.0, 0.0, 0.0, 0.0, 1.0;
        0.0, 0.0, 0.0, -1.0, 0.0
    ]
}

/// Reference gain, rounded to two decimals.
pub fn mimo_reference_l() -> DMatrix<f64> {
    dmatrix![
        -11.20, 0.30;
        23.28, 0.58;
        7.42, 17.62;
        -66.96, 102.93;
        -129.54, 174.26
    ]
}

pub fn mimo_reference_q() -> DMatrix<f64> {
    DMatrix::identity(3, 5)
}

/// Reference basis of span{B, AB}.
pub fn mimo_reference_nu() -> DMatrix<f64> {
    dmatrix![
        0.0, 0.0;
        0.0, 0.0;
        0.0, 0.0;
        0.0, 1.0;
        1.0, -5.0
    ]
}

/// Output coefficients of the time-varying study.
pub const LTV_COEFFS: [&str; 4] = ["1", "2+sin(0.3*t)", "1", "0"];
pub const LTV_X0: [f64; 4] = [1.0, 0.5, -0.5, 0.0];

pub fn ltv_system() -> LtvCanonicalSystem {
    LtvCanonicalSystem::parse(4, &LTV_COEFFS).expect("static example is well formed")
}

/// True plant of the time-varying study: the chain closed with
/// `f = u - [1 4 6 4] x`.
pub fn ltv_plant_a() -> DMatrix<f64> {
    let mut a = upshift(4);
    for (j, v) in [-1.0, -4.0, -6.0, -4.0].iter().enumerate() {
        a[(3, j)] = *v;
    }
    a
}

pub fn ltv_plant_b() -> DMatrix<f64> {
    unit_column(4, 3)
}
