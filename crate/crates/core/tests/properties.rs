use std::collections::BTreeSet;

use koopfreq::bode::{csv_string, read_csv, BodeRow, BodeTable, LogGrid, RowStatus};
use koopfreq::expr::{eval, eval_grad, parse, Exponent, Expr, Func, Params, Phasor};
use koopfreq::lti::LtiPlant;
use koopfreq::response::{cross_check, harmonic_average, FreqResponse, Method, OrderTag};
use koopfreq::sim::{detect_periodicity, integrate};
use koopfreq::system::SkewSystem;
use koopfreq::Complex64;
use proptest::prelude::*;

const DIM: usize = 3;

fn param_names() -> BTreeSet<String> {
    ["k", "gain"].iter().map(|s| s.to_string()).collect()
}

fn leaf() -> impl Strategy<Value = Expr> {
    prop_oneof![
        (0.0f64..1e3).prop_map(Expr::Num),
        (0usize..DIM).prop_map(Expr::State),
        Just(Expr::Input),
        Just(Expr::Imag),
        prop_oneof![Just("k"), Just("gain")].prop_map(Expr::param),
    ]
}

/// Trees in the shape the parser produces: non-negative literals, integer
/// exponents on anything, negative or fractional exponents only on `u`.
fn expr_tree() -> impl Strategy<Value = Expr> {
    leaf().prop_recursive(5, 48, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(|e| -e),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a + b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a - b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a * b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a / b),
            (inner.clone(), 0i64..5).prop_map(|(a, n)| a.powi(n)),
            (-3i64..4, 1i64..4).prop_map(|(p, q)| Expr::Input.pow(Exponent::rational(p, q).unwrap())),
            (prop_oneof![Just(Func::Sin), Just(Func::Cos), Just(Func::Exp), Just(Func::Sqrt)], inner)
                .prop_map(|(f, a)| Expr::call(f, a)),
        ]
    })
}

/// Entire expressions (no division, no square root) for derivative checks.
fn smooth_tree() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (-2.0f64..2.0).prop_map(Expr::real),
        (0usize..DIM).prop_map(Expr::State),
        Just(Expr::Input),
        Just(Expr::param("k")),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(|e| -e),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a + b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a * b),
            (inner.clone(), 0i64..4).prop_map(|(a, n)| a.powi(n)),
            (prop_oneof![Just(Func::Sin), Just(Func::Cos), Just(Func::Exp)], inner)
                .prop_map(|(f, a)| Expr::call(f, a)),
        ]
    })
}

fn complex(range: f64) -> impl Strategy<Value = Complex64> {
    (-range..range, -range..range).prop_map(|(re, im)| Complex64::new(re, im))
}

fn response(value: Complex64) -> FreqResponse {
    FreqResponse {
        omega: 1.0,
        order: OrderTag::fundamental(),
        value,
        method: Method::HarmonicAverage,
        err_estimate: 0.0,
        u0: Complex64::new(1.0, 0.0),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn printing_then_parsing_is_identity(e in expr_tree()) {
        let text = e.to_string();
        let back = parse(&text, DIM, &param_names());
        prop_assert_eq!(back, Ok(e), "text: {}", text);
    }

    #[test]
    fn gradient_matches_central_differences(
        e in smooth_tree(),
        x in prop::collection::vec(complex(1.0), DIM),
        u in complex(1.0),
    ) {
        let params: Params = [("k".to_string(), 0.7)].into();
        let g = eval_grad(&e, &x, u, &params).unwrap();
        let value = eval(&e, &x, u, &params).unwrap();
        prop_assert!((g.value - value).norm() <= 1e-12 * (1.0 + value.norm()));
        let h = 1e-5;
        let scale = 1.0 + value.norm() + g.dx.iter().map(|d| d.norm()).sum::<f64>() + g.du.norm();
        for j in 0..DIM {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let fd = (eval(&e, &xp, u, &params).unwrap() - eval(&e, &xm, u, &params).unwrap()) / (2.0 * h);
            prop_assert!((fd - g.dx[j]).norm() <= 1e-5 * scale, "d/dx{}: {} vs {}", j + 1, fd, g.dx[j]);
        }
        // u appears only through integer powers here, so it is holomorphic in u
        let fd = (eval(&e, &x, u + h, &params).unwrap() - eval(&e, &x, u - h, &params).unwrap()) / (2.0 * h);
        prop_assert!((fd - g.du).norm() <= 1e-5 * scale, "d/du: {} vs {}", fd, g.du);
    }

    #[test]
    fn fractional_input_powers_follow_the_tracked_phase(
        modulus in 0.1f64..3.0,
        phase in -20.0f64..20.0,
        p in -3i64..4,
        q in 1i64..5,
    ) {
        let r = Exponent::rational(p, q).unwrap();
        let u = Phasor::new(modulus, phase);
        let v = eval(&Expr::Input.pow(r), &[], u, &Params::new()).unwrap();
        let want = Complex64::from_polar(modulus.powf(r.as_f64()), phase * r.as_f64());
        prop_assert!((v - want).norm() <= 1e-12 * want.norm().max(1.0));
    }

    #[test]
    fn cross_check_is_symmetric(a in complex(10.0), b in complex(10.0), tol in 1e-6f64..1.0) {
        let ab = cross_check(&response(a), &response(b), tol).unwrap();
        let ba = cross_check(&response(b), &response(a), tol).unwrap();
        prop_assert_eq!(ab.passed, ba.passed);
        prop_assert_eq!(ab.gap, ba.gap);
        prop_assert!(cross_check(&response(a), &response(a), tol).unwrap().passed);
    }

    #[test]
    fn unwrapped_phase_never_jumps(phases in prop::collection::vec(-180.0f64..180.0, 2..40), zeros in prop::collection::vec(any::<bool>(), 40)) {
        let n = phases.len();
        let grid = LogGrid::new(0.1, 10.0, n).unwrap();
        let rows = grid
            .values()
            .into_iter()
            .zip(&phases)
            .zip(&zeros)
            .map(|((w, p), z)| {
                let h = if *z { Complex64::new(0.0, 0.0) } else { Complex64::from_polar(1.0, p.to_radians()) };
                BodeRow::new(w, h, Method::ClosedForm, 0.0, RowStatus::Ok)
            })
            .collect();
        let t = BodeTable::new("p", "y", OrderTag::fundamental(), grid, rows);
        let defined: Vec<f64> = t.rows.iter().filter_map(|r| r.phase_deg).collect();
        for pair in defined.windows(2) {
            prop_assert!((pair[1] - pair[0]).abs() <= 180.0 + 1e-9);
        }
        for (r, p) in t.rows.iter().zip(&phases) {
            if let Some(q) = r.phase_deg {
                let turns = (q - p) / 360.0;
                prop_assert!((turns - turns.round()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn csv_round_trip_preserves_fifteen_digits(
        values in prop::collection::vec((complex(1e3), 0.0f64..1.0, 0u8..4), 2..30),
    ) {
        let n = values.len();
        let grid = LogGrid::new(0.01, 100.0, n).unwrap();
        let rows = grid
            .values()
            .into_iter()
            .zip(&values)
            .map(|(w, (h, err, kind))| match kind {
                0 => BodeRow::failed(w, RowStatus::Diverged),
                1 => BodeRow::new(w, Complex64::new(0.0, 0.0), Method::Dmd, *err, RowStatus::Ok),
                _ => BodeRow::new(w, *h, Method::AbelResidue, *err, RowStatus::CrossCheckFailed),
            })
            .collect();
        let t = BodeTable::new("p", "y", OrderTag::harmonic(2), grid, rows);
        let text = csv_string(&t);
        let back = read_csv(text.as_bytes()).unwrap();
        prop_assert_eq!(back.len(), n);
        for (a, b) in back.iter().zip(&t.rows) {
            prop_assert_eq!(&a.status, &b.status);
            prop_assert_eq!(a.h.is_some(), b.h.is_some());
            if let (Some(x), Some(y)) = (a.h, b.h) {
                prop_assert!((x - y).norm() <= 1e-14 * y.norm());
            }
            prop_assert!((a.omega - b.omega).abs() <= 1e-14 * b.omega);
        }
        let again = BodeTable { rows: back, ..t.clone() };
        prop_assert_eq!(csv_string(&again), text);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn harmonic_average_reproduces_first_order_lag(a in -3.0f64..-0.3, b in -2.0f64..2.0, omega in 0.3f64..5.0) {
        let plant = LtiPlant::scalar(a, b).unwrap().plant_spec("lin");
        let sys = SkewSystem::new(plant, omega, Complex64::new(1.0, 0.0)).unwrap();
        let dt = (sys.period() / 256.0).min(0.01);
        let horizon = 60.0 / a.abs() + 10.0 * sys.period();
        let traj = integrate(&sys, &[Complex64::new(0.0, 0.0)], horizon, dt).unwrap();
        let h = harmonic_average(&traj, OrderTag::fundamental(), 4).unwrap();
        let want = b / Complex64::new(-a, omega);
        prop_assert!((h.value - want).norm() < 1e-6, "{} vs {}", h.value, want);
    }

    #[test]
    fn looser_tolerance_never_delays_steady_state(a in -3.0f64..-0.3, omega in 0.5f64..5.0, x0 in complex(2.0)) {
        let plant = LtiPlant::scalar(a, 1.0).unwrap().plant_spec("lin");
        let sys = SkewSystem::new(plant, omega, Complex64::new(1.0, 0.0)).unwrap();
        let traj = integrate(&sys, &[x0], 40.0 / a.abs() + 6.0 * sys.period(), sys.period() / 128.0).unwrap();
        let mut last: Option<f64> = None;
        for tol in [1e-9, 1e-7, 1e-5, 1e-3] {
            let r = detect_periodicity(&traj, sys.period(), tol).unwrap();
            if let Some(prev) = last {
                prop_assert!(r.periodic);
                prop_assert!(r.transient_end.unwrap() <= prev + 1e-12);
            }
            if r.periodic {
                last = r.transient_end;
            }
        }
        prop_assert!(last.is_some());
    }
}
