//! Frequency response of nonlinear plants through the Koopman resolvent.
//!
//! A plant `x' = F(x, u)`, `y = g(x, u)` driven by `u(t) = u0 e^{i omega t}` is
//! lifted to the autonomous skew-product system `(x, u)` with `u' = i omega u`.
//! The steady output components at `n omega` and `omega / n` are Koopman modes
//! of that system; this crate estimates them from simulated trajectories by
//! harmonic averaging, by the Abel-regularised residue of the output's Laplace
//! transform, and by Hankel DMD, and checks them against closed forms.

// `!(x > 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod bode;
pub mod dmd;
pub mod expr;
pub mod lti;
pub mod oracle;
pub mod plantfile;
pub mod response;
pub mod sim;
pub mod system;

pub use num_complex::Complex64;

/// Formats a float with 15 significant digits in scientific notation.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.14e}")
}
