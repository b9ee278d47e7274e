//! Closed-form frequency response of LTI plants `x' = Ax + bu`, `y = c^T x`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::expr::{Expr, Params};
use crate::system::PlantSpec;

/// Largest supported state dimension.
pub const MAX_DIM: usize = 16;

const EIGEN_GAP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LtiError {
    #[error("A is {rows}x{cols}, b has {b} entries and c has {c}")]
    Dimension {
        rows: usize,
        cols: usize,
        b: usize,
        c: usize,
    },
    #[error("dimension {0} exceeds the supported maximum of {MAX_DIM}")]
    TooLarge(usize),
    #[error("plant matrices contain non-finite entries")]
    NonFinite,
    #[error("i*{omega} is within {distance:e} of an eigenvalue of A")]
    SingularAtOmega { omega: f64, distance: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LtiPlant {
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
}

/// Numerical check of the distinct-stable-eigenvalue assumption.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumCheck {
    pub eigenvalues: Vec<Complex64>,
    pub min_gap: f64,
    pub max_real: f64,
    pub distinct: bool,
    pub stable: bool,
}

impl SpectrumCheck {
    /// The closed form is still evaluated when the assumption fails, but it is
    /// only advisory as an oracle.
    pub fn advisory(&self) -> bool {
        !(self.distinct && self.stable)
    }
}

/// Residuals of the left and right eigenvectors of `[A b; 0 i omega]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewEigenCheck {
    pub omega: f64,
    /// `r = (i omega I - A)^{-1} b`; empty when `i omega` is an eigenvalue of A.
    pub right_vector: Vec<Complex64>,
    pub left_residual: f64,
    pub right_residual: f64,
}

impl LtiPlant {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, c: DVector<f64>) -> Result<Self, LtiError> {
        let d = a.nrows();
        if d == 0 || a.ncols() != d || b.len() != d || c.len() != d {
            return Err(LtiError::Dimension {
                rows: a.nrows(),
                cols: a.ncols(),
                b: b.len(),
                c: c.len(),
            });
        }
        if d > MAX_DIM {
            return Err(LtiError::TooLarge(d));
        }
        if a.iter().chain(b.iter()).chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(LtiError::NonFinite);
        }
        Ok(LtiPlant { a, b, c })
    }

    /// Scalar plant `x' = a x + b u`, `y = x`.
    pub fn scalar(a: f64, b: f64) -> Result<Self, LtiError> {
        Self::new(
            DMatrix::from_element(1, 1, a),
            DVector::from_element(1, b),
            DVector::from_element(1, 1.0),
        )
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn eigenvalues(&self) -> Vec<Complex64> {
        self.a.complex_eigenvalues().iter().copied().collect()
    }

    pub fn spectrum(&self) -> SpectrumCheck {
        let eigenvalues = self.eigenvalues();
        let mut min_gap = f64::INFINITY;
        for (i, x) in eigenvalues.iter().enumerate() {
            for y in &eigenvalues[i + 1..] {
                min_gap = min_gap.min((x - y).norm());
            }
        }
        let max_real = eigenvalues.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
        SpectrumCheck {
            distinct: min_gap > EIGEN_GAP,
            stable: max_real < 0.0,
            eigenvalues,
            min_gap,
            max_real,
        }
    }

    fn check_omega(&self, omega: f64) -> Result<(), LtiError> {
        let s = Complex64::new(0.0, omega);
        let distance = self
            .eigenvalues()
            .iter()
            .map(|l| (s - l).norm())
            .fold(f64::INFINITY, f64::min);
        if distance < EIGEN_GAP {
            return Err(LtiError::SingularAtOmega { omega, distance });
        }
        Ok(())
    }

    /// `r = (i omega I - A)^{-1} b` by partial-pivot LU.
    pub fn right_vector(&self, omega: f64) -> Result<DVector<Complex64>, LtiError> {
        self.check_omega(omega)?;
        let d = self.dim();
        let s = Complex64::new(0.0, omega);
        let m = DMatrix::from_fn(d, d, |i, j| {
            let diag = if i == j { s } else { Complex64::new(0.0, 0.0) };
            diag - self.a[(i, j)]
        });
        let rhs = self.b.map(|v| Complex64::new(v, 0.0));
        m.lu().solve(&rhs).ok_or(LtiError::SingularAtOmega {
            omega,
            distance: 0.0,
        })
    }

    /// `c^T (i omega I - A)^{-1} b`.
    pub fn response(&self, omega: f64) -> Result<Complex64, LtiError> {
        let r = self.right_vector(omega)?;
        Ok(self.c.iter().zip(r.iter()).map(|(c, r)| r * *c).sum())
    }

    /// `[A b; 0 i omega]` as a complex matrix.
    pub fn skew_matrix(&self, omega: f64) -> DMatrix<Complex64> {
        let d = self.dim();
        let mut m = DMatrix::from_element(d + 1, d + 1, Complex64::new(0.0, 0.0));
        for i in 0..d {
            for j in 0..d {
                m[(i, j)] = Complex64::new(self.a[(i, j)], 0.0);
            }
            m[(i, d)] = Complex64::new(self.b[i], 0.0);
        }
        m[(d, d)] = Complex64::new(0.0, omega);
        m
    }

    pub fn skew_eigencheck(&self, omega: f64) -> SkewEigenCheck {
        let d = self.dim();
        let m = self.skew_matrix(omega);
        let lambda = Complex64::new(0.0, omega);

        let mut left = DVector::from_element(d + 1, Complex64::new(0.0, 0.0));
        left[d] = Complex64::new(1.0, 0.0);
        let left_residual = (m.transpose() * &left - &left * lambda).norm();

        match self.right_vector(omega) {
            Ok(r) => {
                let mut v = DVector::from_element(d + 1, Complex64::new(1.0, 0.0));
                v.rows_mut(0, d).copy_from(&r);
                let right_residual = (&m * &v - &v * lambda).norm();
                SkewEigenCheck {
                    omega,
                    right_vector: r.iter().copied().collect(),
                    left_residual,
                    right_residual,
                }
            }
            Err(_) => SkewEigenCheck {
                omega,
                right_vector: Vec::new(),
                left_residual,
                right_residual: f64::INFINITY,
            },
        }
    }

    /// The same plant written symbolically: `F_i = sum_j A_ij x_j + b_i u`,
    /// `g = c^T x`.
    pub fn plant_spec(&self, name: &str) -> PlantSpec {
        let d = self.dim();
        let linear = |coeffs: Vec<(f64, Expr)>| -> Expr {
            coeffs
                .into_iter()
                .filter(|(k, _)| *k != 0.0)
                .map(|(k, e)| if k == 1.0 { e } else { Expr::real(k) * e })
                .reduce(|acc, t| acc + t)
                .unwrap_or(Expr::Num(0.0))
        };
        let dynamics = (0..d)
            .map(|i| {
                let mut terms: Vec<(f64, Expr)> =
                    (0..d).map(|j| (self.a[(i, j)], Expr::State(j))).collect();
                terms.push((self.b[i], Expr::Input));
                linear(terms)
            })
            .collect();
        let observable = linear((0..d).map(|j| (self.c[j], Expr::State(j))).collect());
        PlantSpec::new(name, d, dynamics, observable, Params::new())
            .expect("LTI plant is well formed by construction")
    }
}

/// `c^T (i omega I - A)^{-1} b`.
pub fn lti_response(p: &LtiPlant, omega: f64) -> Result<Complex64, LtiError> {
    p.response(omega)
}

pub fn skew_eigencheck(p: &LtiPlant, omega: f64) -> SkewEigenCheck {
    p.skew_eigencheck(omega)
}
