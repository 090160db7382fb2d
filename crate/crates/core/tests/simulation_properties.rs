mod common;

use common::{random_case, random_vector};
use fuio_core::linalg;
use fuio_core::presets;
use fuio_core::sim_engine::{self, ZInit};
use fuio_core::SourceExpr;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn inputs(m: usize, texts: &[&str]) -> Vec<SourceExpr> {
    texts
        .iter()
        .cycle()
        .take(m)
        .map(|s| SourceExpr::parse(s).unwrap())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn oracle_error_follows_matrix_exponential(seed in any::<u64>()) {
        let case = random_case(seed);
        let n = case.sys.n();
        let x0 = random_vector(seed ^ 1, n);
        let xhat0 = random_vector(seed ^ 2, n);
        let run = sim_engine::derivative_feed_oracle(
            &case.sys,
            &case.design.gains,
            &case.r,
            &inputs(case.sys.m(), &["sin(3*t)", "1"]),
            &x0,
            &xhat0,
            2.0,
            1e-3,
        )
        .unwrap();
        let e0 = &x0 - &xhat0;
        for k in (0..run.times.len()).step_by(100) {
            let expected = (&case.design.gains.f * run.times[k]).exp() * &e0;
            let got = &run.x[k] - &run.xhat[k];
            let dev = linalg::vec_inf_norm(&(got - expected));
            prop_assert!(dev <= 1e-6, "seed {seed}, t = {}: {dev:e}", run.times[k]);
        }
    }

    #[test]
    fn functional_error_does_not_see_the_unknown_input(seed in any::<u64>()) {
        let case = random_case(seed);
        let n = case.sys.n();
        let x0 = random_vector(seed ^ 3, n);
        let run = |texts: &[&str]| {
            sim_engine::run_mimo_scenario(
                &case.sys,
                &case.design.realization,
                &inputs(case.sys.m(), texts),
                &x0,
                &ZInit::Zero,
                2.0,
                1e-3,
            )
            .unwrap()
        };
        let quiet = run(&["0"]);
        let loud = run(&["5*sin(4*t)+2", "3*cos(t)"]);
        for (a, b) in quiet.err.iter().zip(&loud.err) {
            let scale = linalg::vec_inf_norm(a).max(1.0);
            prop_assert!(linalg::vec_inf_norm(&(a - b)) <= 1e-8 * scale);
        }
    }

    #[test]
    fn scenario_grid_and_channels(seed in any::<u64>(), steps in 1usize..400, dt in 1e-3f64..1e-2) {
        let case = random_case(seed);
        let n = case.sys.n();
        let t_final = steps as f64 * dt;
        let res = sim_engine::run_mimo_scenario(
            &case.sys,
            &case.design.realization,
            &inputs(case.sys.m(), &["sin(t)"]),
            &DVector::zeros(n),
            &ZInit::Zero,
            t_final,
            dt,
        )
        .unwrap();
        prop_assert_eq!(res.times.len(), steps + 1);
        prop_assert!(res.times.windows(2).all(|w| w[1] > w[0]));
        prop_assert!((res.times[steps] - t_final).abs() <= 1e-9 * t_final.max(1.0));
        prop_assert_eq!(res.q(), case.design.realization.q.nrows());
        prop_assert!(res.err.iter().all(|e| e.len() == res.q() && e.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn matched_start_gives_zero_error(seed in any::<u64>()) {
        let case = random_case(seed);
        let x0 = random_vector(seed ^ 4, case.sys.n());
        let res = sim_engine::run_mimo_scenario(
            &case.sys,
            &case.design.realization,
            &inputs(case.sys.m(), &["sin(2*t)", "cos(t)"]),
            &x0,
            &ZInit::MatchEstimate(x0.clone()),
            1.0,
            1e-3,
        )
        .unwrap();
        let scale = res.x.iter().map(linalg::vec_inf_norm).fold(1.0, f64::max);
        prop_assert!(res.metrics.max_norm <= 1e-9 * scale, "seed {seed}: {:e}", res.metrics.max_norm);
    }

    #[test]
    fn identity_holds_on_unstable_chain(last in proptest::collection::vec(-2.0f64..2.0, 4), xi_scale in 0.0f64..10.0) {
        let sys = presets::ltv_system();
        let mut a = sys.chain_a();
        for (j, v) in last.iter().enumerate() {
            a[(3, j)] = *v;
        }
        let d = fuio_core::ltv_gpebo::reduce_to_w(&sys).unwrap().dim();
        let xi0 = DVector::from_element(d, xi_scale);
        let res = sim_engine::run_ltv_scenario(
            &a,
            &DMatrix::from_column_slice(4, 1, &[0.0, 0.0, 0.0, 1.0]),
            &sys,
            &SourceExpr::parse("sin(t)").unwrap(),
            &DVector::from_row_slice(&presets::LTV_X0),
            Some(&xi0),
            3.0,
            1e-3,
        )
        .unwrap();
        let diag = res.ltv.unwrap();
        let scale = res.x.iter().map(linalg::vec_inf_norm).fold(1.0, f64::max);
        prop_assert!(diag.identity_residual <= 1e-6 * scale, "{:e}", diag.identity_residual);
    }
}
