//! Closed forms for the two-dimensional example
//!
//! ```text
//! x1' = a1 x1 + x2^2
//! x2' = a2 x2 + u
//! ```
//!
//! with `a1, a2 < 0`, `a1 != a2`, `a1 != 2 a2`: its principal Koopman
//! eigenfunctions, harmonic responses, the six-state lifted linear system over
//! `(x1, x2, u, x2^2, x2 u, u^2)`, and the Koopman mode expansion of the
//! trajectory. These expansions are used verbatim as the reference for the
//! numerical estimators.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::expr::{Expr, Params};
use crate::response::{OrderKind, OrderTag};
use crate::system::PlantSpec;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("degenerate parameters: a1 = {a1} equals 2*a2 = {}", 2.0 * a2)]
    DegenerateParameters { a1: f64, a2: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observable {
    X1,
    X2,
}

impl Observable {
    pub fn expr(&self) -> Expr {
        match self {
            Observable::X1 => Expr::State(0),
            Observable::X2 => Expr::State(1),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Observable::X1 => "x1",
            Observable::X2 => "x2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoDExample {
    pub a1: f64,
    pub a2: f64,
    pub omega: f64,
}

fn ic(im: f64) -> Complex64 {
    Complex64::new(0.0, im)
}

impl TwoDExample {
    pub fn new(a1: f64, a2: f64, omega: f64) -> Result<Self, OracleError> {
        if !(a1 < 0.0 && a2 < 0.0) {
            return Err(OracleError::InvalidParameters(format!(
                "a1 = {a1} and a2 = {a2} must both be negative"
            )));
        }
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(OracleError::InvalidParameters(format!(
                "omega = {omega} must be positive"
            )));
        }
        if (a1 - 2.0 * a2).abs() <= 1e-12 * a1.abs().max(1.0) {
            return Err(OracleError::DegenerateParameters { a1, a2 });
        }
        if (a1 - a2).abs() <= 1e-12 * a1.abs().max(1.0) {
            return Err(OracleError::InvalidParameters(format!(
                "a1 = a2 = {a1} is excluded"
            )));
        }
        Ok(TwoDExample { a1, a2, omega })
    }

    /// Default fixture: `a1 = -1`, `a2 = -2`.
    pub fn default_at(omega: f64) -> Self {
        Self::new(-1.0, -2.0, omega).expect("default parameters are valid")
    }

    pub fn with_omega(&self, omega: f64) -> Result<Self, OracleError> {
        Self::new(self.a1, self.a2, omega)
    }

    pub fn params(&self) -> Params {
        [("a1".to_string(), self.a1), ("a2".to_string(), self.a2)].into()
    }

    /// The plant with observable `x1`.
    pub fn plant(&self) -> PlantSpec {
        let a1 = Expr::param("a1");
        let a2 = Expr::param("a2");
        let x1 = Expr::State(0);
        let x2 = Expr::State(1);
        PlantSpec::new(
            "twod",
            2,
            vec![a1 * x1 + x2.clone().powi(2), a2 * x2 + Expr::Input],
            Expr::State(0),
            self.params(),
        )
        .expect("two-dimensional example is well formed")
    }

    /// Coefficients of `x2^2`, `x2 u`, `u^2` in `phi_{a1}`.
    pub fn phi_a1_coefficients(&self) -> [Complex64; 3] {
        let (a1, a2, w) = (self.a1, self.a2, self.omega);
        let d1 = Complex64::new(a1 - 2.0 * a2, 0.0);
        let d2 = Complex64::new(a1 - a2, -w);
        let d3 = Complex64::new(a1, -2.0 * w);
        [1.0 / d1, 2.0 / (d1 * d2), 2.0 / (d1 * d2 * d3)]
    }

    /// Coefficient of `u` in `phi_{a2}`: `1 / (a2 - i omega)`.
    pub fn phi_a2_coefficient(&self) -> Complex64 {
        1.0 / Complex64::new(self.a2, -self.omega)
    }

    /// `(phi_{a1}, phi_{a2}, phi_{i omega})` as expression trees.
    pub fn eigenfunctions(&self) -> [Expr; 3] {
        let x1 = Expr::State(0);
        let x2 = Expr::State(1);
        let u = Expr::Input;
        let [c1, c2, c3] = self.phi_a1_coefficients();
        let phi_a1 = x1
            + Expr::complex(c1) * x2.clone().powi(2)
            + Expr::complex(c2) * x2.clone() * u.clone()
            + Expr::complex(c3) * u.clone().powi(2);
        let phi_a2 = x2 + Expr::complex(self.phi_a2_coefficient()) * u.clone();
        [phi_a1, phi_a2, u]
    }

    /// Eigenfunctions evaluated at `(x, u)`.
    pub fn eigenfunction_values(&self, x: [Complex64; 2], u: Complex64) -> [Complex64; 3] {
        let [c1, c2, c3] = self.phi_a1_coefficients();
        let phi_a1 = x[0] + c1 * x[1] * x[1] + c2 * x[1] * u + c3 * u * u;
        let phi_a2 = x[1] + self.phi_a2_coefficient() * u;
        [phi_a1, phi_a2, u]
    }

    /// `H_2(omega; x1) = 1 / ((2 i omega - a1)(i omega - a2)^2)`.
    pub fn h2_x1(&self) -> Complex64 {
        let w = self.omega;
        let q = ic(w) - self.a2;
        1.0 / ((ic(2.0 * w) - self.a1) * q * q)
    }

    /// `H_1(omega; x2) = 1 / (i omega - a2)`.
    pub fn h1_x2(&self) -> Complex64 {
        1.0 / (ic(self.omega) - self.a2)
    }

    pub fn closed_form_h(&self, observable: Observable, order: OrderTag) -> Complex64 {
        let zero = Complex64::new(0.0, 0.0);
        match (observable, order.kind, order.n) {
            (Observable::X1, OrderKind::Harmonic, 2) => self.h2_x1(),
            (Observable::X2, OrderKind::Harmonic, 1) => self.h1_x2(),
            _ => zero,
        }
    }

    /// Upper-triangular generator matrix over `(x1, x2, u, x2^2, x2 u, u^2)`.
    pub fn lifted_matrix(&self) -> DMatrix<Complex64> {
        let (a1, a2, w) = (self.a1, self.a2, self.omega);
        let r = |v: f64| Complex64::new(v, 0.0);
        let mut m = DMatrix::from_element(6, 6, r(0.0));
        m[(0, 0)] = r(a1);
        m[(0, 3)] = r(1.0);
        m[(1, 1)] = r(a2);
        m[(1, 2)] = r(1.0);
        m[(2, 2)] = ic(w);
        m[(3, 3)] = r(2.0 * a2);
        m[(3, 4)] = r(2.0);
        m[(4, 4)] = Complex64::new(a2, w);
        m[(4, 5)] = r(1.0);
        m[(5, 5)] = ic(2.0 * w);
        m
    }

    /// `2 / ((s - a1)(s - 2 a2)(s - (a2 + i omega)))`, the transfer from
    /// `u^2` to `y = x1` of the lifted system.
    pub fn transfer_u2_to_y(&self, s: Complex64) -> Complex64 {
        2.0 / ((s - self.a1) * (s - 2.0 * self.a2) * (s - Complex64::new(self.a2, self.omega)))
    }

    /// Transfer from lifted state `input` (treated as an exogenous signal) to
    /// lifted state `output`, computed from the matrix by a linear solve.
    pub fn lifted_transfer(&self, s: Complex64, input: usize, output: usize) -> Complex64 {
        let m = self.lifted_matrix();
        let keep: Vec<usize> = (0..6).filter(|&k| k != input).collect();
        let n = keep.len();
        let sys = DMatrix::from_fn(n, n, |i, j| {
            let diag = if i == j { s } else { Complex64::new(0.0, 0.0) };
            diag - m[(keep[i], keep[j])]
        });
        let rhs = DVector::from_fn(n, |i, _| m[(keep[i], input)]);
        let sol = sys
            .lu()
            .solve(&rhs)
            .expect("s lies outside the lifted spectrum");
        keep.iter()
            .position(|&k| k == output)
            .map_or(Complex64::new(0.0, 0.0), |i| sol[i])
    }

    /// Constants multiplying `e^{a1 t} phi_a1`, `e^{2 a2 t} phi_a2^2`,
    /// `e^{(a2 + i omega) t} phi_a2 phi_iw` and `e^{2 i omega t} phi_iw^2` in
    /// the expansion of `x1(t)`.
    pub fn kmd_x1_coefficients(&self) -> [Complex64; 4] {
        let (a1, a2, w) = (self.a1, self.a2, self.omega);
        [
            Complex64::new(1.0, 0.0),
            Complex64::new(-1.0 / (a1 - 2.0 * a2), 0.0),
            2.0 / ((ic(w) - a1 + a2) * (ic(w) - a2)),
            self.h2_x1(),
        ]
    }

    /// `(x1(t), x2(t))` from the Koopman mode expansion at `(x0, u0)`.
    pub fn kmd_reconstruct(&self, x0: [Complex64; 2], u0: Complex64, t: f64) -> [Complex64; 2] {
        let (a1, a2, w) = (self.a1, self.a2, self.omega);
        let [phi_a1, phi_a2, phi_iw] = self.eigenfunction_values(x0, u0);
        let [k1, k2, k3, k4] = self.kmd_x1_coefficients();
        let e = |z: Complex64| (z * t).exp();
        let x1 = e(Complex64::new(a1, 0.0)) * phi_a1 * k1
            + e(Complex64::new(2.0 * a2, 0.0)) * phi_a2 * phi_a2 * k2
            + e(Complex64::new(a2, w)) * phi_a2 * phi_iw * k3
            + e(ic(2.0 * w)) * phi_iw * phi_iw * k4;
        let x2 = e(Complex64::new(a2, 0.0)) * phi_a2 + e(ic(w)) * phi_iw * self.h1_x2();
        [x1, x2]
    }
}
