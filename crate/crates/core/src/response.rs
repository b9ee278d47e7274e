//! Frequency-response extraction from trajectories.
//!
//! Two independent estimators of the coefficient `H` in
//! `y_n(t) = H (u0 e^{i omega t})^n`:
//!
//! * [`harmonic_average`]: Fourier coefficient of the steady-state output at
//!   `Omega = n omega` (or `omega / n`), i.e. the eigenprojection of `g` onto
//!   the eigenfunction `u^n` realised as a time average;
//! * [`abel_residue`]: residue of the Laplace transform at `i Omega`, taken as
//!   `lim eps -> 0 of eps * y_hat(i Omega + eps)` and extrapolated over a
//!   schedule of `eps` values.
//!
//! Both divide by `u0^n` (or `u0^{1/n}` on the principal branch of `arg u0`).

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use thiserror::Error;

use crate::expr::{Exponent, Phasor};
use crate::sim::{find_steady_state, PeriodicityReport, SimError, Trajectory, DEFAULT_PERIODICITY_TOL};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ResponseError {
    #[error("output is not steady (periodicity residual {residual:e})")]
    NotSteady { residual: f64 },
    #[error("steady window holds {available:.3} periods, {requested} requested")]
    WindowTooShort { available: f64, requested: usize },
    #[error("extrapolation over the eps schedule diverges (spread {spread:e})")]
    ScheduleTooCoarse { spread: f64 },
    #[error("horizon * smallest eps = {0:.3} < 5; truncation dominates")]
    TruncationDominated(f64),
    #[error("eps schedule needs at least two distinct positive values")]
    InvalidSchedule,
    #[error("eps * y_hat grows like 1/eps; pole at i*{0} looks higher than first order")]
    PoleOrderSuspect(f64),
    #[error("responses answer different queries")]
    MismatchedQuery,
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OrderKind {
    Harmonic,
    Subharmonic,
}

/// Response order: `n omega` (harmonic) or `omega / n` (subharmonic).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OrderTag {
    pub kind: OrderKind,
    pub n: u32,
}

impl OrderTag {
    pub fn harmonic(n: u32) -> Self {
        assert!(n >= 1, "order must be at least 1");
        OrderTag {
            kind: OrderKind::Harmonic,
            n,
        }
    }

    pub fn subharmonic(n: u32) -> Self {
        assert!(n >= 1, "order must be at least 1");
        OrderTag {
            kind: OrderKind::Subharmonic,
            n,
        }
    }

    pub fn fundamental() -> Self {
        Self::harmonic(1)
    }

    /// Angular frequency `Omega` of this order under forcing at `omega`.
    pub fn frequency(&self, omega: f64) -> f64 {
        match self.kind {
            OrderKind::Harmonic => self.n as f64 * omega,
            OrderKind::Subharmonic => omega / self.n as f64,
        }
    }

    /// Exponent `n` or `1/n` applied to the input.
    pub fn exponent(&self) -> Exponent {
        match self.kind {
            OrderKind::Harmonic => Exponent::integer(self.n as i64),
            OrderKind::Subharmonic => Exponent { num: 1, den: self.n },
        }
    }

    /// `u^n` or `u^{1/n}` evaluated along the tracked phase of `u`.
    pub fn normalizer(&self, u: Phasor) -> Complex64 {
        u.pow(self.exponent())
    }

    /// Shortest period over which a response of this order completes whole
    /// cycles: `2 pi / omega` for harmonics, `2 pi n / omega` for
    /// subharmonics.
    pub fn base_period(&self, omega: f64) -> f64 {
        let t = std::f64::consts::TAU / omega;
        match self.kind {
            OrderKind::Harmonic => t,
            OrderKind::Subharmonic => t * self.n as f64,
        }
    }
}

impl fmt::Display for OrderTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            OrderKind::Harmonic => write!(f, "{}", self.n),
            OrderKind::Subharmonic => write!(f, "1/{}", self.n),
        }
    }
}

impl FromStr for OrderTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || format!("invalid order `{s}`; expected `n` or `1/n` with n >= 1");
        let (kind, digits) = match s.strip_prefix("1/") {
            Some(rest) => (OrderKind::Subharmonic, rest),
            None => (OrderKind::Harmonic, s),
        };
        let n: u32 = digits.trim().parse().map_err(|_| bad())?;
        if n == 0 {
            return Err(bad());
        }
        Ok(OrderTag { kind, n })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    HarmonicAverage,
    AbelResidue,
    Dmd,
    ClosedForm,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::HarmonicAverage => "harmonic_average",
            Method::AbelResidue => "abel_residue",
            Method::Dmd => "dmd",
            Method::ClosedForm => "closed_form",
        }
    }

    pub fn from_label(s: &str) -> Option<Method> {
        match s {
            "harmonic_average" | "harm" => Some(Method::HarmonicAverage),
            "abel_residue" | "abel" => Some(Method::AbelResidue),
            "dmd" => Some(Method::Dmd),
            "closed_form" | "closed" => Some(Method::ClosedForm),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One frequency-response estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqResponse {
    pub omega: f64,
    pub order: OrderTag,
    pub value: Complex64,
    pub method: Method,
    pub err_estimate: f64,
    pub u0: Complex64,
}

/// Trapezoid-rule mean of `y(t) e^{-i Omega t}` over the last `periods`
/// windows of length `unit`.
fn window_mean(traj: &Trajectory, big_omega: f64, unit: f64, periods: usize) -> Complex64 {
    let y = traj.outputs();
    let w = (periods as f64 * unit / traj.dt).round() as usize;
    let last = y.len() - 1;
    let first = last - w;
    let mut acc = Complex64::new(0.0, 0.0);
    for (k, yk) in y.iter().enumerate().take(last + 1).skip(first) {
        let weight = if k == first || k == last { 0.5 } else { 1.0 };
        acc += yk * Complex64::from_polar(weight, -big_omega * traj.time(k));
    }
    acc / w as f64
}

/// Harmonic average using an already computed steady-state report.
pub fn harmonic_average_with(
    traj: &Trajectory,
    steady: &PeriodicityReport,
    order: OrderTag,
    periods: usize,
) -> Result<FreqResponse, ResponseError> {
    let sys = traj.system();
    let omega = sys.omega();
    let (Some(t_steady), Some(detected)) = (steady.transient_end, steady.detected_period) else {
        return Err(ResponseError::NotSteady {
            residual: steady.residual,
        });
    };
    if periods == 0 {
        return Err(ResponseError::WindowTooShort {
            available: 0.0,
            requested: 0,
        });
    }
    // window unit: whole cycles of both the order and the detected period
    let forcing = sys.period();
    let a = (order.base_period(omega) / forcing).round() as u64;
    let b = (detected / forcing).round().max(1.0) as u64;
    let unit = forcing * lcm(a, b) as f64;

    let available = (traj.end_time() - t_steady) / unit;
    if available + 1e-9 < periods as f64 {
        return Err(ResponseError::WindowTooShort {
            available,
            requested: periods,
        });
    }

    let big_omega = order.frequency(omega);
    let norm = order.normalizer(Phasor::from_complex(sys.u0()));
    let full = window_mean(traj, big_omega, unit, periods) / norm;
    let half = window_mean(traj, big_omega, unit, (periods / 2).max(1)) / norm;
    Ok(FreqResponse {
        omega,
        order,
        value: full,
        method: Method::HarmonicAverage,
        err_estimate: (full - half).norm(),
        u0: sys.u0(),
    })
}

/// `u0^{-n} <y(t), e^{i Omega t}>` over the last `periods` steady periods.
/// Runs the periodicity test with the default tolerance first.
pub fn harmonic_average(
    traj: &Trajectory,
    order: OrderTag,
    periods: usize,
) -> Result<FreqResponse, ResponseError> {
    let steady = find_steady_state(traj, DEFAULT_PERIODICITY_TOL)?;
    harmonic_average_with(traj, &steady, order, periods)
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn lcm(a: u64, b: u64) -> u64 {
    a / gcd(a, b).max(1) * b
}

/// Geometric schedule of four `eps` values, ratio 1/2, with the smallest at
/// `20 / horizon`.
pub fn default_schedule(horizon: f64) -> Vec<f64> {
    let smallest = 20.0 / horizon;
    vec![8.0 * smallest, 4.0 * smallest, 2.0 * smallest, smallest]
}

/// Trapezoid approximation of `int_0^T y(tau) e^{-s tau} d tau` with `tau`
/// measured from the first sample.
pub fn laplace_transform(traj: &Trajectory, s: Complex64) -> Complex64 {
    let y = traj.outputs();
    let n = y.len();
    if n < 2 {
        return Complex64::new(0.0, 0.0);
    }
    // e^{-s tau_k} by recurrence, re-anchored periodically against drift
    let step = (-s * traj.dt).exp();
    let mut kernel = Complex64::new(1.0, 0.0);
    let mut acc = Complex64::new(0.0, 0.0);
    for (k, v) in y.iter().enumerate() {
        if k % 1024 == 0 {
            kernel = (-s * (k as f64 * traj.dt)).exp();
        }
        let w = if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
        acc += v * kernel * w;
        kernel *= step;
    }
    acc * traj.dt
}

/// Neville extrapolation to `eps = 0`; returns the top of the tableau and the
/// extrapolant that omits the first node.
fn neville_at_zero(eps: &[f64], f: &[Complex64]) -> (Complex64, Complex64) {
    let k = eps.len();
    let mut p = f.to_vec();
    let mut without_first = p[k - 1];
    for level in 1..k {
        for i in 0..k - level {
            let j = i + level;
            p[i] = (p[i] * eps[j] - p[i + 1] * eps[i]) / (eps[j] - eps[i]);
        }
        if level == k - 2 {
            without_first = p[1];
        }
    }
    if k == 2 {
        without_first = f[1];
    }
    (p[0], without_first)
}

/// Residue `u0^{-n} lim_{eps -> 0} eps * y_hat(i Omega + eps)` with the limit
/// taken by polynomial extrapolation over `schedule`.
pub fn abel_residue(
    traj: &Trajectory,
    order: OrderTag,
    schedule: &[f64],
) -> Result<FreqResponse, ResponseError> {
    let sys = traj.system();
    let omega = sys.omega();
    let mut eps: Vec<f64> = schedule.iter().copied().filter(|e| *e > 0.0 && e.is_finite()).collect();
    eps.sort_by(|a, b| b.total_cmp(a));
    eps.dedup();
    if eps.len() < 2 || eps.len() != schedule.len() {
        return Err(ResponseError::InvalidSchedule);
    }
    let horizon = traj.end_time() - traj.t0;
    let eps_min = *eps.last().unwrap();
    if horizon * eps_min < 5.0 {
        return Err(ResponseError::TruncationDominated(horizon * eps_min));
    }

    let big_omega = order.frequency(omega);
    let samples: Vec<Complex64> = eps
        .iter()
        .map(|&e| {
            // tau = t - t0 so the phase reference is the first sample
            let s = Complex64::new(e, big_omega);
            e * laplace_transform(traj, s)
        })
        .collect();

    let scale = samples.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let norm = order.normalizer(traj.input(0));
    if scale == 0.0 {
        return Ok(FreqResponse {
            omega,
            order,
            value: Complex64::new(0.0, 0.0),
            method: Method::AbelResidue,
            err_estimate: 0.0,
            u0: sys.u0(),
        });
    }

    // eps * y_hat ~ c / eps near a double pole
    let grows = eps.windows(2).zip(samples.windows(2)).all(|(e, f)| {
        f[1].norm() > 0.75 * (e[0] / e[1]) * f[0].norm()
    });
    if grows {
        return Err(ResponseError::PoleOrderSuspect(big_omega));
    }

    let (top, other) = neville_at_zero(&eps, &samples);
    let spread = (top - other).norm();
    if !top.is_finite() || spread > scale {
        return Err(ResponseError::ScheduleTooCoarse { spread });
    }
    Ok(FreqResponse {
        omega,
        order,
        value: top / norm,
        method: Method::AbelResidue,
        err_estimate: spread / norm.norm(),
        u0: sys.u0(),
    })
}

/// Result of comparing two estimates of the same query.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossCheck {
    pub passed: bool,
    pub a: FreqResponse,
    pub b: FreqResponse,
    pub gap: f64,
    pub rel_tol: f64,
}

impl fmt::Display for CrossCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} vs {}: gap {:.3e} (tol {:.1e} rel) {}",
            self.a.method,
            self.b.method,
            self.gap,
            self.rel_tol,
            if self.passed { "ok" } else { "MISMATCH" }
        )
    }
}

/// `|a - b| <= rel_tol (1 + max(|a|, |b|))`.
pub fn cross_check(
    a: &FreqResponse,
    b: &FreqResponse,
    rel_tol: f64,
) -> Result<CrossCheck, ResponseError> {
    let same_omega = (a.omega - b.omega).abs() <= 1e-12 * a.omega.abs().max(1.0);
    let same_u0 = (a.u0 - b.u0).norm() <= 1e-12 * a.u0.norm().max(1.0);
    if !same_omega || !same_u0 || a.order != b.order {
        return Err(ResponseError::MismatchedQuery);
    }
    let gap = (a.value - b.value).norm();
    let passed = gap <= rel_tol * (1.0 + a.value.norm().max(b.value.norm()));
    Ok(CrossCheck {
        passed,
        a: a.clone(),
        b: b.clone(),
        gap,
        rel_tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resp(value: Complex64) -> FreqResponse {
        FreqResponse {
            omega: 1.0,
            order: OrderTag::fundamental(),
            value,
            method: Method::HarmonicAverage,
            err_estimate: 0.0,
            u0: Complex64::new(1.0, 0.0),
        }
    }

    #[test]
    fn order_parsing_and_display() {
        assert_eq!("2".parse::<OrderTag>().unwrap(), OrderTag::harmonic(2));
        assert_eq!("1/3".parse::<OrderTag>().unwrap(), OrderTag::subharmonic(3));
        assert_eq!("1/1".parse::<OrderTag>().unwrap(), OrderTag::subharmonic(1));
        assert!("0".parse::<OrderTag>().is_err());
        assert!("x".parse::<OrderTag>().is_err());
        assert_eq!(OrderTag::subharmonic(2).to_string(), "1/2");
        assert_eq!(OrderTag::harmonic(3).frequency(2.0), 6.0);
        assert_eq!(OrderTag::subharmonic(4).frequency(2.0), 0.5);
    }

    #[test]
    fn subharmonic_normalizer_uses_principal_branch() {
        let u0 = Complex64::new(-1.0, 0.0);
        let v = OrderTag::subharmonic(2).normalizer(Phasor::from_complex(u0));
        // arg(-1) = pi, so u0^{1/2} = e^{i pi/2}
        assert!((v - Complex64::new(0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn cross_check_cases() {
        let one = resp(Complex64::new(1.0, 0.0));
        let zero = resp(Complex64::new(0.0, 0.0));
        assert!(cross_check(&one, &one, 1e-2).unwrap().passed);
        assert!(!cross_check(&zero, &one, 1e-2).unwrap().passed);
        let mut other = one.clone();
        other.order = OrderTag::harmonic(2);
        assert_eq!(
            cross_check(&one, &other, 1e-2),
            Err(ResponseError::MismatchedQuery)
        );
        let mut other = one.clone();
        other.omega = 2.0;
        assert_eq!(
            cross_check(&one, &other, 1e-2),
            Err(ResponseError::MismatchedQuery)
        );
    }

    #[test]
    fn neville_is_exact_on_cubics() {
        let eps = [0.8, 0.4, 0.2, 0.1];
        let poly = |e: f64| Complex64::new(1.0 - 2.0 * e + 0.5 * e * e * e, e * e);
        let f: Vec<Complex64> = eps.iter().map(|e| poly(*e)).collect();
        let (top, _) = neville_at_zero(&eps, &f);
        assert!((top - Complex64::new(1.0, 0.0)).norm() < 1e-13);
    }

    #[test]
    fn neville_error_matches_divided_difference_bound() {
        // f(eps) = z / (z + eps): extrapolation error at 0 is prod(eps)/prod(z + eps)
        let z = Complex64::new(1.0, 1.0);
        let eps = [0.8, 0.4, 0.2, 0.1];
        let f: Vec<Complex64> = eps.iter().map(|e| z / (z + e)).collect();
        let (top, _) = neville_at_zero(&eps, &f);
        let prod_e: f64 = eps.iter().product();
        let prod_z: Complex64 = eps.iter().map(|e| z + e).product();
        let want_err = (prod_e / prod_z).norm();
        assert!(((top - 1.0).norm() - want_err).abs() < 1e-12);
    }

    #[test]
    fn default_schedule_respects_truncation_rule() {
        let s = default_schedule(400.0);
        assert_eq!(s.len(), 4);
        assert!((s[3] * 400.0 - 20.0).abs() < 1e-12);
        assert!((s[0] / s[1] - 2.0).abs() < 1e-12);
    }
}
