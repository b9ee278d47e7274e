//! End-to-end estimation at one forcing frequency: simulate once, run every
//! requested estimator for every requested order, cross-check the results.

use num_complex::Complex64;
use thiserror::Error;

use crate::dmd::{hankel_dmd_at, mode_to_response, DmdError, DmdResult, DEFAULT_RANK_TOL};
use crate::expr::Phasor;
use crate::response::{
    abel_residue, cross_check, default_schedule, harmonic_average_with, CrossCheck, FreqResponse,
    Method, OrderKind, OrderTag, ResponseError,
};
use crate::sim::{
    find_steady_state, integrate, snap_step, PeriodicityReport, SimError, Trajectory,
    DEFAULT_PERIODICITY_TOL,
};
use crate::system::{PlantSpec, SkewSystem, SystemError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Response(#[from] ResponseError),
    #[error(transparent)]
    Dmd(#[from] DmdError),
    #[error("no estimation method requested")]
    NoMethods,
    #[error("no order requested")]
    NoOrders,
}

impl AnalysisError {
    pub fn is_divergence(&self) -> bool {
        matches!(self, AnalysisError::Sim(SimError::NonFiniteState(_)))
    }

    pub fn is_not_steady(&self) -> bool {
        matches!(self, AnalysisError::Response(ResponseError::NotSteady { .. }))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    /// Integration step; defaults to `min(T / 256, 0.01)`, snapped to the period.
    pub dt: Option<f64>,
    /// Fixed horizon in forcing periods; `None` sizes it from the orders.
    pub horizon_periods: Option<f64>,
    /// Time allowed for transients to die out when the horizon is automatic.
    pub transient: f64,
    /// Horizon resolution for the Abel estimator: at least this long, and this
    /// many multiples of `1 / spacing` where `spacing` is the finest
    /// frequency separation among the requested orders.
    pub abel_horizon: f64,
    pub periodicity_tol: f64,
    /// Averaging window, in periods of the slowest requested order.
    pub window_periods: usize,
    pub eps_schedule: Option<Vec<f64>>,
    pub dmd_delay: usize,
    pub rank_tol: f64,
    pub cross_tol: f64,
    pub methods: Vec<Method>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            dt: None,
            horizon_periods: None,
            transient: 40.0,
            abel_horizon: 1000.0,
            periodicity_tol: DEFAULT_PERIODICITY_TOL,
            window_periods: 8,
            eps_schedule: None,
            dmd_delay: 16,
            rank_tol: DEFAULT_RANK_TOL,
            cross_tol: 1e-2,
            methods: vec![Method::HarmonicAverage, Method::AbelResidue],
        }
    }
}

impl Settings {
    pub fn with_methods(mut self, methods: &[Method]) -> Self {
        self.methods = methods.to_vec();
        self
    }

    pub fn wants(&self, m: Method) -> bool {
        self.methods.contains(&m)
    }

    pub fn step(&self, omega: f64) -> f64 {
        let period = std::f64::consts::TAU / omega;
        let dt = self.dt.unwrap_or((period / 256.0).min(0.01));
        snap_step(period, dt)
    }

    pub fn horizon(&self, omega: f64, orders: &[OrderTag]) -> f64 {
        let period = std::f64::consts::TAU / omega;
        if let Some(p) = self.horizon_periods {
            return p * period;
        }
        let slowest = orders
            .iter()
            .map(|o| o.base_period(omega))
            .fold(period, f64::max);
        let mut h = (self.transient + (self.window_periods + 2) as f64 * slowest).max(12.0 * period);
        if self.wants(Method::AbelResidue) {
            let sub = orders
                .iter()
                .filter(|o| o.kind == OrderKind::Subharmonic)
                .map(|o| o.n)
                .max()
                .unwrap_or(1) as f64;
            let spacing = omega / sub;
            h = h.max(self.abel_horizon * (1.0f64).max(1.0 / spacing));
        }
        h
    }
}

/// One estimator's answer for one order.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub order: OrderTag,
    pub method: Method,
    pub result: Result<FreqResponse, AnalysisError>,
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub omega: f64,
    pub u0: Complex64,
    pub dt: f64,
    pub horizon: f64,
    pub periodicity: Option<PeriodicityReport>,
    pub dmd: Option<Result<DmdResult, DmdError>>,
    pub estimates: Vec<Estimate>,
    pub cross_checks: Vec<CrossCheck>,
}

impl Analysis {
    pub fn get(&self, order: OrderTag, method: Method) -> Option<&Result<FreqResponse, AnalysisError>> {
        self.estimates
            .iter()
            .find(|e| e.order == order && e.method == method)
            .map(|e| &e.result)
    }

    /// First successful estimate for `order`, in the order methods were requested.
    pub fn best(&self, order: OrderTag) -> Option<&FreqResponse> {
        self.estimates
            .iter()
            .filter(|e| e.order == order)
            .find_map(|e| e.result.as_ref().ok())
    }

    pub fn all_checks_pass(&self) -> bool {
        self.cross_checks.iter().all(|c| c.passed)
    }

    pub fn checks_for(&self, order: OrderTag) -> impl Iterator<Item = &CrossCheck> {
        self.cross_checks.iter().filter(move |c| c.a.order == order)
    }
}

/// Simulates the skew-product system with the horizon and step implied by
/// `settings`.
pub fn simulate(
    plant: &PlantSpec,
    omega: f64,
    u0: Complex64,
    x0: &[Complex64],
    orders: &[OrderTag],
    settings: &Settings,
) -> Result<Trajectory, AnalysisError> {
    let sys = SkewSystem::new(plant.clone(), omega, u0)?;
    let dt = settings.step(omega);
    let horizon = settings.horizon(omega, orders);
    Ok(integrate(&sys, x0, horizon, dt)?)
}

/// Runs every requested method for every order on a single trajectory.
/// Trajectory-level failures (bad configuration, divergence) are returned as
/// errors; estimator failures are recorded per estimate.
pub fn analyze(
    plant: &PlantSpec,
    omega: f64,
    u0: Complex64,
    x0: &[Complex64],
    orders: &[OrderTag],
    settings: &Settings,
) -> Result<Analysis, AnalysisError> {
    if settings.methods.is_empty() {
        return Err(AnalysisError::NoMethods);
    }
    if orders.is_empty() {
        return Err(AnalysisError::NoOrders);
    }
    let traj = simulate(plant, omega, u0, x0, orders, settings)?;
    analyze_trajectory(&traj, orders, settings)
}

pub fn analyze_trajectory(
    traj: &Trajectory,
    orders: &[OrderTag],
    settings: &Settings,
) -> Result<Analysis, AnalysisError> {
    let sys = traj.system();
    let omega = sys.omega();
    let u0 = sys.u0();

    let needs_steady = settings.wants(Method::HarmonicAverage) || settings.wants(Method::Dmd);
    let periodicity = if needs_steady {
        Some(find_steady_state(traj, settings.periodicity_tol)?)
    } else {
        None
    };
    let not_steady = |p: &PeriodicityReport| AnalysisError::Response(ResponseError::NotSteady {
        residual: p.residual,
    });

    let dmd = if settings.wants(Method::Dmd) {
        let p = periodicity.as_ref().unwrap();
        Some(steady_dmd(traj, p, orders, settings))
    } else {
        None
    };

    let mut estimates = Vec::new();
    for &order in orders {
        for &method in &settings.methods {
            let result = match method {
                Method::HarmonicAverage => {
                    let p = periodicity.as_ref().unwrap();
                    harmonic_average_with(traj, p, order, settings.window_periods)
                        .map_err(AnalysisError::from)
                }
                Method::AbelResidue => {
                    let span = traj.end_time() - traj.t0;
                    let schedule = settings
                        .eps_schedule
                        .clone()
                        .unwrap_or_else(|| default_schedule(span));
                    abel_residue(traj, order, &schedule).map_err(AnalysisError::from)
                }
                Method::Dmd => match dmd.as_ref().unwrap() {
                    Ok(r) => dmd_estimate(r, omega, order, u0),
                    Err(DmdError::NotSteady) => Err(not_steady(periodicity.as_ref().unwrap())),
                    Err(e) => Err(e.clone().into()),
                },
                Method::ClosedForm => continue,
            };
            estimates.push(Estimate {
                order,
                method,
                result,
            });
        }
    }

    let mut cross_checks = Vec::new();
    for &order in orders {
        let ok: Vec<&FreqResponse> = estimates
            .iter()
            .filter(|e| e.order == order)
            .filter_map(|e| e.result.as_ref().ok())
            .collect();
        for i in 0..ok.len() {
            for j in i + 1..ok.len() {
                cross_checks.push(cross_check(ok[i], ok[j], settings.cross_tol)?);
            }
        }
    }

    Ok(Analysis {
        omega,
        u0,
        dt: traj.dt,
        horizon: traj.end_time() - traj.t0,
        periodicity,
        dmd,
        estimates,
        cross_checks,
    })
}

/// A missing eigenvalue means the signal carries no content at that
/// frequency, so the response is zero; the error estimate is the fit
/// residual scaled by the largest amplitude.
fn dmd_estimate(
    r: &DmdResult,
    omega: f64,
    order: OrderTag,
    u0: Complex64,
) -> Result<FreqResponse, AnalysisError> {
    match mode_to_response(r, omega, order, u0) {
        Ok(resp) => Ok(resp),
        Err(DmdError::EigenvalueNotFound { .. }) => {
            let norm = order.normalizer(Phasor::from_complex(u0)).norm();
            let scale = r.amplitudes.iter().map(|b| b.norm()).fold(0.0, f64::max);
            Ok(FreqResponse {
                omega,
                order,
                value: Complex64::new(0.0, 0.0),
                method: Method::Dmd,
                err_estimate: r.residual * scale / norm,
                u0,
            })
        }
        Err(e) => Err(e.into()),
    }
}

/// Hankel DMD over the last averaging window, decimated so that
/// `dt <= pi / (8 n omega)` with `n` the highest requested harmonic (at
/// least 4, so that harmonics above the queried ones do not alias).
fn steady_dmd(
    traj: &Trajectory,
    report: &PeriodicityReport,
    orders: &[OrderTag],
    settings: &Settings,
) -> Result<DmdResult, DmdError> {
    let Some(t_steady) = report.transient_end else {
        return Err(DmdError::NotSteady);
    };
    let omega = traj.system().omega();
    let n_max = orders
        .iter()
        .filter(|o| o.kind == OrderKind::Harmonic)
        .map(|o| o.n)
        .max()
        .unwrap_or(1)
        .max(4) as f64;
    let max_dt = std::f64::consts::PI / (8.0 * n_max * omega);
    let stride = ((max_dt / traj.dt).floor() as usize).max(1);

    let slowest = orders
        .iter()
        .map(|o| o.base_period(omega))
        .fold(traj.system().period(), f64::max);
    let want = settings.window_periods as f64 * slowest;
    let start_time = (traj.end_time() - want).max(t_steady);
    let first = ((start_time - traj.t0) / traj.dt).ceil() as usize;
    let y: Vec<Complex64> = traj.outputs()[first..].iter().step_by(stride).copied().collect();
    hankel_dmd_at(
        &y,
        traj.time(first),
        traj.dt * stride as f64,
        settings.dmd_delay,
        settings.rank_tol,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::LtiPlant;
    use crate::oracle::{Observable, TwoDExample};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn all_methods() -> Settings {
        Settings::default().with_methods(&[Method::HarmonicAverage, Method::AbelResidue, Method::Dmd])
    }

    #[test]
    fn scalar_linear_plant_all_methods() {
        let plant = LtiPlant::scalar(-1.0, 1.0).unwrap().plant_spec("lin");
        let a = analyze(&plant, 1.0, c(1.0, 0.0), &[c(0.0, 0.0)], &[OrderTag::fundamental()], &all_methods())
            .unwrap();
        for m in [Method::HarmonicAverage, Method::AbelResidue, Method::Dmd] {
            let r = a.get(OrderTag::fundamental(), m).unwrap().as_ref().unwrap();
            assert!((r.value - c(0.5, -0.5)).norm() < 1e-3, "{m}: {}", r.value);
        }
        assert_eq!(a.cross_checks.len(), 3);
        assert!(a.all_checks_pass());
    }

    #[test]
    fn two_d_plant_second_harmonic() {
        let ex = TwoDExample::default_at(1.0);
        let orders = [OrderTag::harmonic(1), OrderTag::harmonic(2)];
        let a = analyze(&ex.plant(), 1.0, c(1.0, 0.0), &[c(0.0, 0.0); 2], &orders, &all_methods()).unwrap();
        let want = ex.closed_form_h(Observable::X1, OrderTag::harmonic(2));
        for m in [Method::HarmonicAverage, Method::AbelResidue, Method::Dmd] {
            let h2 = a.get(OrderTag::harmonic(2), m).unwrap().as_ref().unwrap();
            assert!((h2.value - want).norm() < 1e-3 * want.norm(), "{m}");
            let h1 = a.get(OrderTag::harmonic(1), m).unwrap().as_ref().unwrap();
            assert!(h1.value.norm() < 1e-3, "{m}");
        }
        assert!(a.all_checks_pass());
    }

    #[test]
    fn divergence_is_a_trajectory_error() {
        let plant = crate::plantfile::parse_plant("[plant]\ndim = 1\n[dynamics]\nx1' = x1^2 + u\n[observable]\ny = x1\n")
            .unwrap();
        let err = analyze(&plant, 1.0, c(1.0, 0.0), &[c(2.0, 0.0)], &[OrderTag::fundamental()], &Settings::default())
            .unwrap_err();
        assert!(err.is_divergence(), "{err}");
    }

    #[test]
    fn horizon_grows_for_abel_at_low_frequency() {
        let s = Settings::default();
        let orders = [OrderTag::fundamental()];
        assert_eq!(s.horizon(1.0, &orders), 1000.0);
        assert_eq!(s.horizon(0.1, &orders), 10000.0);
        let harm = Settings::default().with_methods(&[Method::HarmonicAverage]);
        let h = harm.horizon(1.0, &orders);
        assert!((h - (40.0 + 10.0 * std::f64::consts::TAU)).abs() < 1e-9);
        let fixed = Settings {
            horizon_periods: Some(5.0),
            ..Settings::default()
        };
        assert!((fixed.horizon(2.0, &orders) - 5.0 * std::f64::consts::PI).abs() < 1e-12);
    }
}
