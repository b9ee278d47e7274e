//! Plants `x' = F(x, u)`, `y = g(x, u)` and their skew-product form under the
//! excitation `u(t) = u0 e^{i omega t}`.

use num_complex::Complex64;
use thiserror::Error;

use crate::expr::{self, EvalError, Expr, Params, Phasor};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlantError {
    #[error("plant dimension must be at least 1")]
    ZeroDimension,
    #[error("expected {expected} dynamics equations, got {got}")]
    EquationCount { expected: usize, got: usize },
    #[error("`{expr}` references x{index} but the plant has dimension {dim}")]
    StateOutOfRange { expr: String, index: usize, dim: usize },
    #[error("`{expr}` references undeclared parameter `{name}`")]
    UndeclaredParameter { expr: String, name: String },
    #[error("parameter `{0}` must be finite")]
    NonFiniteParameter(String),
    #[error("`{0}` is reserved and cannot name a parameter")]
    ReservedName(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SystemError {
    #[error("omega must be positive and finite, got {0}")]
    BadOmega(f64),
    #[error("excitation amplitude u0 must be non-zero")]
    ZeroAmplitude,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn is_reserved(name: &str) -> bool {
    let state_like = name
        .strip_prefix('x')
        .is_some_and(|d| !d.is_empty() && d.chars().all(|c| c.is_ascii_digit()));
    name == "u" || name == "i" || state_like || crate::expr::Func::from_name(name).is_some()
}

/// Symbolic plant definition.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantSpec {
    pub name: String,
    pub dim: usize,
    pub dynamics: Vec<Expr>,
    pub observable: Expr,
    pub params: Params,
}

impl PlantSpec {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        dynamics: Vec<Expr>,
        observable: Expr,
        params: Params,
    ) -> Result<Self, PlantError> {
        if dim == 0 {
            return Err(PlantError::ZeroDimension);
        }
        if dynamics.len() != dim {
            return Err(PlantError::EquationCount {
                expected: dim,
                got: dynamics.len(),
            });
        }
        for (name, v) in &params {
            if is_reserved(name) {
                return Err(PlantError::ReservedName(name.clone()));
            }
            if !v.is_finite() {
                return Err(PlantError::NonFiniteParameter(name.clone()));
            }
        }
        let plant = PlantSpec {
            name: name.into(),
            dim,
            dynamics,
            observable,
            params,
        };
        for e in plant.dynamics.iter().chain(std::iter::once(&plant.observable)) {
            plant.check_expr(e)?;
        }
        Ok(plant)
    }

    /// Checks that `e` only references this plant's states and parameters.
    pub fn check_expr(&self, e: &Expr) -> Result<(), PlantError> {
        if let Some(k) = e.max_state_index() {
            if k >= self.dim {
                return Err(PlantError::StateOutOfRange {
                    expr: e.to_string(),
                    index: k + 1,
                    dim: self.dim,
                });
            }
        }
        if let Some(name) = e
            .param_names()
            .into_iter()
            .find(|n| !self.params.contains_key(n))
        {
            return Err(PlantError::UndeclaredParameter {
                expr: e.to_string(),
                name,
            });
        }
        Ok(())
    }

    /// Same plant with a different observable.
    pub fn with_observable(&self, observable: Expr) -> Result<Self, PlantError> {
        self.check_expr(&observable)?;
        Ok(PlantSpec {
            observable,
            ..self.clone()
        })
    }
}

/// Skew-product system `x' = F(x, u)`, `u' = i omega u` at fixed `omega`, `u0`.
#[derive(Debug, Clone)]
pub struct SkewSystem {
    plant: PlantSpec,
    omega: f64,
    u0: Complex64,
    bound_dynamics: Vec<Expr>,
    bound_observable: Expr,
}

impl SkewSystem {
    pub fn new(plant: PlantSpec, omega: f64, u0: Complex64) -> Result<Self, SystemError> {
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(SystemError::BadOmega(omega));
        }
        if u0.norm() == 0.0 || !u0.is_finite() {
            return Err(SystemError::ZeroAmplitude);
        }
        let bound_dynamics = plant
            .dynamics
            .iter()
            .map(|e| e.bind(&plant.params))
            .collect::<Result<_, _>>()?;
        let bound_observable = plant.observable.bind(&plant.params)?;
        Ok(SkewSystem {
            plant,
            omega,
            u0,
            bound_dynamics,
            bound_observable,
        })
    }

    pub fn plant(&self) -> &PlantSpec {
        &self.plant
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn u0(&self) -> Complex64 {
        self.u0
    }

    pub fn dim(&self) -> usize {
        self.plant.dim
    }

    /// Forcing period `2 pi / omega`.
    pub fn period(&self) -> f64 {
        std::f64::consts::TAU / self.omega
    }

    /// Input at time `t` with its phase tracked from `arg u0` at `t = 0`.
    pub fn input_at(&self, t: f64) -> Phasor {
        Phasor::from_complex(self.u0).rotated(self.omega * t)
    }

    /// `F(x, u)` written into `out`.
    pub fn plant_field(
        &self,
        x: &[Complex64],
        u: Phasor,
        out: &mut [Complex64],
    ) -> Result<(), EvalError> {
        let empty = Params::new();
        for (o, f) in out.iter_mut().zip(&self.bound_dynamics) {
            *o = expr::eval(f, x, u, &empty)?;
        }
        Ok(())
    }

    /// Default observable `g(x, u)`.
    pub fn output(&self, x: &[Complex64], u: Phasor) -> Result<Complex64, EvalError> {
        expr::eval(&self.bound_observable, x, u, &Params::new())
    }

    /// `(F(x, u), i omega u)`.
    pub fn augmented_field(
        &self,
        x: &[Complex64],
        u: impl Into<Phasor>,
    ) -> Result<Vec<Complex64>, EvalError> {
        let u = u.into();
        let mut out = vec![Complex64::new(0.0, 0.0); self.dim() + 1];
        self.plant_field(x, u, &mut out[..self.dim()])?;
        out[self.dim()] = Complex64::new(0.0, self.omega) * u.value();
        Ok(out)
    }

    /// Koopman generator `F(x,u) . grad_x f + i omega u df/du` applied to `f`
    /// at `(x, u)`. `f` may use the plant's parameters.
    pub fn apply_generator(
        &self,
        f: &Expr,
        x: &[Complex64],
        u: impl Into<Phasor>,
    ) -> Result<Complex64, EvalError> {
        let u = u.into();
        let grad = expr::eval_grad(f, x, u, &self.plant.params)?;
        let field = self.augmented_field(x, u)?;
        let drift: Complex64 = field[..self.dim()]
            .iter()
            .zip(&grad.dx)
            .map(|(a, b)| a * b)
            .sum();
        Ok(drift + field[self.dim()] * grad.du)
    }
}
