//! `validate`: estimators against the closed-form two-state example.

use std::io::Write;

use koopfreq::analysis::{analyze, Settings};
use koopfreq::oracle::{Observable, TwoDExample};
use koopfreq::response::{Method, OrderTag};
use koopfreq::sim::integrate;
use koopfreq::system::SkewSystem;
use koopfreq::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Failure, ValidateArgs, EXIT_CROSS_CHECK, EXIT_OK};

struct Check {
    name: String,
    err: f64,
    tol: f64,
}

impl Check {
    fn passed(&self) -> bool {
        self.err <= self.tol
    }
}

fn rel(a: Complex64, b: Complex64) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

fn random_complex(rng: &mut ChaCha8Rng, r: f64) -> Complex64 {
    Complex64::new(rng.gen_range(-r..r), rng.gen_range(-r..r))
}

fn eigenfunction_checks(ex: &TwoDExample, rng: &mut ChaCha8Rng) -> Result<Vec<Check>, Failure> {
    let u0 = Complex64::new(1.0, 0.0);
    let sys = SkewSystem::new(ex.plant(), ex.omega, u0).map_err(|e| Failure::config(e.to_string()))?;
    let eigs = [
        Complex64::new(ex.a1, 0.0),
        Complex64::new(ex.a2, 0.0),
        Complex64::new(0.0, ex.omega),
    ];
    let phis = ex.eigenfunctions();
    let names = ["phi_a1", "phi_a2", "phi_iw"];
    let mut out = Vec::new();
    for ((phi, lambda), name) in phis.iter().zip(eigs).zip(names) {
        let mut worst: f64 = 0.0;
        for _ in 0..32 {
            let x = [random_complex(rng, 2.0), random_complex(rng, 2.0)];
            let u = Complex64::from_polar(rng.gen_range(0.5..2.0), rng.gen_range(-3.1..3.1));
            let lhs = sys
                .apply_generator(phi, &x, u)
                .map_err(|e| Failure::config(e.to_string()))?;
            let rhs = lambda * ex.eigenfunction_values(x, u)[names.iter().position(|n| *n == name).unwrap()];
            worst = worst.max((lhs - rhs).norm() / (1.0 + rhs.norm()));
        }
        out.push(Check {
            name: format!("generator eigenfunction {name}"),
            err: worst,
            tol: 1e-12,
        });
    }
    Ok(out)
}

fn kmd_check(ex: &TwoDExample, rng: &mut ChaCha8Rng) -> Result<Check, Failure> {
    let x0 = [random_complex(rng, 1.0), random_complex(rng, 1.0)];
    let u0 = Complex64::from_polar(rng.gen_range(0.5..2.0), rng.gen_range(-3.1..3.1));
    let sys = SkewSystem::new(ex.plant(), ex.omega, u0).map_err(|e| Failure::config(e.to_string()))?;
    let dt = (sys.period() / 256.0).min(0.01);
    let traj = integrate(&sys, &x0, 10.0, dt).map_err(|e| Failure::config(e.to_string()))?;
    let mut worst: f64 = 0.0;
    for k in (0..traj.len()).step_by(16) {
        let want = ex.kmd_reconstruct(x0, u0, traj.time(k));
        let got = traj.state(k);
        for j in 0..2 {
            worst = worst.max((got[j] - want[j]).norm() / (1.0 + want[j].norm()));
        }
    }
    Ok(Check {
        name: "mode expansion vs simulation".into(),
        err: worst,
        tol: 1e-8,
    })
}

fn estimator_checks(ex: &TwoDExample) -> Result<Vec<Check>, Failure> {
    let settings = Settings::default().with_methods(&[Method::HarmonicAverage, Method::AbelResidue, Method::Dmd]);
    let tol = |m: Method| match m {
        Method::AbelResidue => 1e-4,
        _ => 1e-6,
    };
    let mut out = Vec::new();
    let cases = [
        (Observable::X1, OrderTag::harmonic(2)),
        (Observable::X2, OrderTag::fundamental()),
    ];
    let zero = [Complex64::new(0.0, 0.0); 2];
    for (obs, order) in cases {
        let plant = ex
            .plant()
            .with_observable(obs.expr())
            .map_err(|e| Failure::config(e.to_string()))?;
        let a = analyze(&plant, ex.omega, Complex64::new(1.0, 0.0), &zero, &[order], &settings)?;
        let want = ex.closed_form_h(obs, order);
        for e in &a.estimates {
            let name = format!("H{order}({}) {}", obs.label(), e.method.label());
            let err = match &e.result {
                Ok(r) => rel(r.value, want),
                Err(_) => f64::INFINITY,
            };
            out.push(Check {
                name,
                err,
                tol: tol(e.method),
            });
        }
    }
    let s = Complex64::new(0.0, 2.0 * ex.omega);
    out.push(Check {
        name: "lifted transfer at 2 i omega vs H2(x1)".into(),
        err: rel(ex.lifted_transfer(s, 5, 0), ex.h2_x1()),
        tol: 1e-12,
    });
    Ok(out)
}

pub fn run(a: &ValidateArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let ex = TwoDExample::new(a.a1, a.a2, a.omega).map_err(|e| Failure::config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut checks = eigenfunction_checks(&ex, &mut rng)?;
    checks.push(kmd_check(&ex, &mut rng)?);
    checks.extend(estimator_checks(&ex)?);

    writeln!(out, "two-state example a1 = {} a2 = {} omega = {} seed = {}", ex.a1, ex.a2, ex.omega, a.seed).ok();
    for c in &checks {
        let verdict = if c.passed() { "PASS" } else { "FAIL" };
        writeln!(out, "{verdict} {:<40} err {:.3e} tol {:.0e}", c.name, c.err, c.tol).ok();
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    writeln!(out, "{} of {} checks passed", checks.len() - failed, checks.len()).ok();
    Ok(if failed == 0 { EXIT_OK } else { EXIT_CROSS_CHECK })
}
