//! Fixed-step integration of the skew-product system and steady-state
//! detection.
//!
//! The input channel is never integrated: at every RK4 stage time the input
//! is `u0 e^{i omega t}` exactly, with its phase tracked continuously so that
//! fractional powers of `u` stay on one branch. The step is snapped so that
//! the forcing period is an integer number of steps.

use std::collections::VecDeque;
use std::io::{self, Write};

use num_complex::Complex64;
use thiserror::Error;

use crate::expr::{self, EvalError, Expr, Params, Phasor};
use crate::fmt_num;
use crate::system::{PlantError, SkewSystem};

/// Minimum number of steps per forcing period.
pub const MIN_STEPS_PER_PERIOD: f64 = 64.0;

/// Default relative tolerance of the periodicity test.
pub const DEFAULT_PERIODICITY_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("step {0} must be positive and finite")]
    BadStep(f64),
    #[error("horizon {horizon} is shorter than one step {dt}")]
    HorizonTooShort { horizon: f64, dt: f64 },
    #[error("step {dt} exceeds the resolution floor {max} (period/64)")]
    StepTooCoarse { dt: f64, max: f64 },
    #[error("initial state has {got} components, plant has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("state became non-finite at t = {0}")]
    NonFiniteState(f64),
    #[error("trajectory spans {span} but at least {needed} is required")]
    TooShort { span: f64, needed: f64 },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Plant(#[from] PlantError),
}

/// Uniformly sampled complex trajectory of the skew-product system.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dt: f64,
    pub t0: f64,
    dim: usize,
    states: Vec<Complex64>,
    inputs: Vec<Phasor>,
    outputs: Vec<Complex64>,
    sys: SkewSystem,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn system(&self) -> &SkewSystem {
        &self.sys
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    /// Time of the last sample.
    pub fn end_time(&self) -> f64 {
        self.time(self.len().saturating_sub(1))
    }

    pub fn state(&self, k: usize) -> &[Complex64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn input(&self, k: usize) -> Phasor {
        self.inputs[k]
    }

    pub fn inputs(&self) -> &[Phasor] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[Complex64] {
        &self.outputs
    }

    /// The same trajectory with outputs recomputed for another observable.
    pub fn with_observable(&self, g: &Expr) -> Result<Trajectory, SimError> {
        self.sys.plant().check_expr(g)?;
        let bound = g.bind(&self.sys.plant().params)?;
        let empty = Params::new();
        let outputs = (0..self.len())
            .map(|k| expr::eval(&bound, self.state(k), self.inputs[k], &empty))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Trajectory {
            outputs,
            ..self.clone()
        })
    }

    /// Trajectory restricted to samples `start..` (time origin kept absolute).
    pub fn tail_from(&self, start: usize) -> Trajectory {
        let start = start.min(self.len().saturating_sub(1));
        Trajectory {
            dt: self.dt,
            t0: self.time(start),
            dim: self.dim,
            states: self.states[start * self.dim..].to_vec(),
            inputs: self.inputs[start..].to_vec(),
            outputs: self.outputs[start..].to_vec(),
            sys: self.sys.clone(),
        }
    }

    /// CSV with columns `t, re_x1, im_x1, ..., re_u, im_u, re_y, im_y`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let mut header = vec!["t".to_string()];
        for i in 1..=self.dim {
            header.push(format!("re_x{i}"));
            header.push(format!("im_x{i}"));
        }
        header.extend(["re_u", "im_u", "re_y", "im_y"].map(String::from));
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.len() {
            let mut row = vec![fmt_num(self.time(k))];
            for x in self.state(k) {
                row.push(fmt_num(x.re));
                row.push(fmt_num(x.im));
            }
            let u = self.inputs[k].value();
            let y = self.outputs[k];
            row.extend([u.re, u.im, y.re, y.im].map(fmt_num));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Step snapped down so that `period` is an integer multiple of it.
pub fn snap_step(period: f64, dt: f64) -> f64 {
    let n = (period / dt - 1e-9).ceil().max(1.0);
    period / n
}

/// Integrates `x' = F(x, u0 e^{i omega t})` from `x0` over `[0, horizon]`
/// with classical RK4.
pub fn integrate(
    sys: &SkewSystem,
    x0: &[Complex64],
    horizon: f64,
    dt: f64,
) -> Result<Trajectory, SimError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SimError::BadStep(dt));
    }
    if !(horizon >= dt) {
        return Err(SimError::HorizonTooShort { horizon, dt });
    }
    let period = sys.period();
    let max = period / MIN_STEPS_PER_PERIOD;
    if dt > max * (1.0 + 1e-12) {
        return Err(SimError::StepTooCoarse { dt, max });
    }
    let d = sys.dim();
    if x0.len() != d {
        return Err(SimError::DimensionMismatch {
            expected: d,
            got: x0.len(),
        });
    }

    let h = snap_step(period, dt);
    let steps = (horizon / h - 1e-9).ceil().max(1.0) as usize;
    let zero = Complex64::new(0.0, 0.0);

    let mut states = Vec::with_capacity((steps + 1) * d);
    let mut inputs = Vec::with_capacity(steps + 1);
    let mut outputs = Vec::with_capacity(steps + 1);

    let mut x = x0.to_vec();
    let mut k1 = vec![zero; d];
    let mut k2 = vec![zero; d];
    let mut k3 = vec![zero; d];
    let mut k4 = vec![zero; d];
    let mut tmp = vec![zero; d];

    for k in 0..=steps {
        let t = k as f64 * h;
        let u = sys.input_at(t);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFiniteState(t));
        }
        states.extend_from_slice(&x);
        inputs.push(u);
        outputs.push(sys.output(&x, u)?);
        if k == steps {
            break;
        }

        let u_half = sys.input_at(t + 0.5 * h);
        let u_next = sys.input_at(t + h);
        sys.plant_field(&x, u, &mut k1)?;
        for i in 0..d {
            tmp[i] = x[i] + k1[i] * (0.5 * h);
        }
        sys.plant_field(&tmp, u_half, &mut k2)?;
        for i in 0..d {
            tmp[i] = x[i] + k2[i] * (0.5 * h);
        }
        sys.plant_field(&tmp, u_half, &mut k3)?;
        for i in 0..d {
            tmp[i] = x[i] + k3[i] * h;
        }
        sys.plant_field(&tmp, u_next, &mut k4)?;
        for i in 0..d {
            x[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (h / 6.0);
        }
    }
    if let Some(t) = outputs
        .iter()
        .position(|y| !y.is_finite())
        .map(|k| k as f64 * h)
    {
        return Err(SimError::NonFiniteState(t));
    }

    Ok(Trajectory {
        dt: h,
        t0: 0.0,
        dim: d,
        states,
        inputs,
        outputs,
        sys: sys.clone(),
    })
}

/// Outcome of the steady-state periodicity test.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicityReport {
    pub periodic: bool,
    pub detected_period: Option<f64>,
    /// Max of `|y(t + Tp) - y(t)|` over one period at `transient_end`, or the
    /// smallest such window residual found when the test fails.
    pub residual: f64,
    pub transient_end: Option<f64>,
}

/// Maxima of every window `v[k..=k + width]`.
fn sliding_max(v: &[f64], width: usize) -> Vec<f64> {
    if v.len() <= width {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(v.len() - width);
    let mut dq: VecDeque<usize> = VecDeque::new();
    for (j, &x) in v.iter().enumerate() {
        while dq.back().is_some_and(|&b| v[b] <= x) {
            dq.pop_back();
        }
        dq.push_back(j);
        if j >= width {
            let start = j - width;
            while dq.front().is_some_and(|&f| f < start) {
                dq.pop_front();
            }
            out.push(v[*dq.front().unwrap()]);
        }
    }
    out
}

/// Finds the first `t0` at which the output repeats with period
/// `candidate_period` to within `tol * (1 + max|y|)` over a whole period.
pub fn detect_periodicity(
    traj: &Trajectory,
    candidate_period: f64,
    tol: f64,
) -> Result<PeriodicityReport, SimError> {
    let n = traj.len();
    let span = traj.end_time() - traj.t0;
    let needed = 4.0 * candidate_period;
    if !(candidate_period > 0.0) || span < needed * (1.0 - 1e-12) || n < 2 {
        return Err(SimError::TooShort { span, needed });
    }
    let y = traj.outputs();
    let shift = candidate_period / traj.dt;
    let whole = shift.round();
    let exact = (shift - whole).abs() <= 1e-9 * shift.max(1.0);
    let lookahead = shift.ceil() as usize;

    // residual r_k = |y(t_k + Tp) - y(t_k)|
    let count = n - lookahead;
    let mut residual = Vec::with_capacity(count);
    for k in 0..count {
        let shifted = if exact {
            y[k + whole as usize]
        } else {
            let pos = k as f64 + shift;
            let j = pos.floor() as usize;
            let frac = pos - j as f64;
            if j + 1 < n {
                y[j] * (1.0 - frac) + y[j + 1] * frac
            } else {
                y[j]
            }
        };
        residual.push((shifted - y[k]).norm());
    }
    let magnitude: Vec<f64> = y.iter().map(|v| v.norm()).collect();

    let window = shift.ceil() as usize;
    let res_max = sliding_max(&residual, window);
    let mag_max = sliding_max(&magnitude, window + lookahead);
    let starts = res_max.len().min(mag_max.len());

    let mut best = f64::INFINITY;
    for k0 in 0..starts {
        let r = res_max[k0];
        if r < tol * (1.0 + mag_max[k0]) {
            return Ok(PeriodicityReport {
                periodic: true,
                detected_period: Some(candidate_period),
                residual: r,
                transient_end: Some(traj.time(k0)),
            });
        }
        best = best.min(r);
    }
    Ok(PeriodicityReport {
        periodic: false,
        detected_period: None,
        residual: if best.is_finite() { best } else { f64::MAX },
        transient_end: None,
    })
}

/// Tries `2 pi / omega`, then `2` and `3` times that, returning the first
/// candidate that passes. When none passes the fundamental's report is
/// returned.
pub fn find_steady_state(traj: &Trajectory, tol: f64) -> Result<PeriodicityReport, SimError> {
    let base = traj.system().period();
    let first = detect_periodicity(traj, base, tol)?;
    if first.periodic {
        return Ok(first);
    }
    for k in 2..=3 {
        match detect_periodicity(traj, k as f64 * base, tol) {
            Ok(r) if r.periodic => return Ok(r),
            Ok(_) | Err(SimError::TooShort { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(first)
}
