//! Hankel DMD on a scalar output signal.
//!
//! The sequence `y_0 .. y_{N-1}` is delay-embedded into columns
//! `h_k = (y_k, .., y_{k+d-1})`; the map `h_k -> h_{k+1}` is fitted by
//! rank-truncated least squares, its eigenvalues `mu_j` are the discrete Koopman
//! eigenvalues seen by `y`, and the amplitudes `b_j` solve
//! `y_k ~ sum_j b_j mu_j^k` in the least-squares sense.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::response::{FreqResponse, Method, OrderTag};
use crate::expr::Phasor;

/// Vandermonde condition numbers above this are flagged.
pub const ILL_CONDITIONED: f64 = 1e12;

pub const DEFAULT_RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DmdError {
    #[error("signal has numerical rank 0")]
    RankDeficient,
    #[error("need at least {needed} samples for delay {delay}, got {got}")]
    TooShort { needed: usize, got: usize, delay: usize },
    #[error("delay must be at least 1")]
    BadDelay,
    #[error("no eigenvalue within tolerance of i*{target}; nearest is {nearest}")]
    EigenvalueNotFound { target: f64, nearest: Complex64 },
    #[error("no steady-state window to fit")]
    NotSteady,
    #[error("eigenvalue computation did not converge")]
    NoConvergence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DmdResult {
    pub dt: f64,
    /// Time of `y_0`; amplitudes are referenced to it.
    pub t_start: f64,
    pub discrete_eigs: Vec<Complex64>,
    pub cont_eigs: Vec<Complex64>,
    pub amplitudes: Vec<Complex64>,
    pub rank: usize,
    /// `|y - V b| / |y|`.
    pub residual: f64,
    /// Condition number of the Vandermonde matrix.
    pub condition: f64,
    pub ill_conditioned: bool,
}

impl DmdResult {
    /// Index of the continuous eigenvalue closest to `target`.
    pub fn nearest(&self, target: Complex64) -> Option<usize> {
        (0..self.rank).min_by(|&a, &b| {
            (self.cont_eigs[a] - target)
                .norm()
                .total_cmp(&(self.cont_eigs[b] - target).norm())
        })
    }
}

pub fn hankel_dmd(
    y: &[Complex64],
    dt: f64,
    delay: usize,
    rank_tol: f64,
) -> Result<DmdResult, DmdError> {
    hankel_dmd_at(y, 0.0, dt, delay, rank_tol)
}

/// [`hankel_dmd`] for a sequence whose first sample is at time `t_start`.
pub fn hankel_dmd_at(
    y: &[Complex64],
    t_start: f64,
    dt: f64,
    delay: usize,
    rank_tol: f64,
) -> Result<DmdResult, DmdError> {
    if delay == 0 {
        return Err(DmdError::BadDelay);
    }
    let n = y.len();
    if n < 2 * delay + 2 {
        return Err(DmdError::TooShort {
            needed: 2 * delay + 2,
            got: n,
            delay,
        });
    }
    let cols = n - delay;
    let x = DMatrix::from_fn(delay, cols, |i, j| y[i + j]);
    let yy = DMatrix::from_fn(delay, cols, |i, j| y[i + j + 1]);

    let svd = x.svd(true, true);
    let sigma_max = svd.singular_values.max();
    if !(sigma_max > 0.0) {
        return Err(DmdError::RankDeficient);
    }
    // singular values are sorted in decreasing order
    let rank = svd
        .singular_values
        .iter()
        .take_while(|s| **s > rank_tol * sigma_max)
        .count();
    if rank == 0 {
        return Err(DmdError::RankDeficient);
    }
    let u = svd.u.as_ref().unwrap().columns(0, rank).into_owned();
    let v_t = svd.v_t.as_ref().unwrap().rows(0, rank).into_owned();
    let sigma_inv = DMatrix::from_diagonal(&DVector::from_fn(rank, |i, _| {
        Complex64::new(1.0 / svd.singular_values[i], 0.0)
    }));
    let a_tilde = u.adjoint() * &yy * v_t.adjoint() * sigma_inv;

    let mu: Vec<Complex64> = if rank == 1 {
        vec![a_tilde[(0, 0)]]
    } else {
        a_tilde
            .try_schur(1e-15, 10_000)
            .ok_or(DmdError::NoConvergence)?
            .eigenvalues()
            .ok_or(DmdError::NoConvergence)?
            .iter()
            .copied()
            .collect()
    };
    let lambda: Vec<Complex64> = mu.iter().map(|m| m.ln() / dt).collect();

    // amplitudes from y_k = sum_j b_j mu_j^k, powers via exp to keep
    // long sequences accurate
    let vander = DMatrix::from_fn(n, rank, |k, j| (lambda[j] * (k as f64 * dt)).exp());
    let rhs = DVector::from_column_slice(y);
    let vsvd = vander.clone().svd(true, true);
    let smax = vsvd.singular_values.max();
    let smin = vsvd.singular_values.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let b = vsvd
        .solve(&rhs, smax * 1e-14)
        .map_err(|_| DmdError::RankDeficient)?;
    let fit = &vander * &b;
    let y_norm = rhs.norm();
    let residual = if y_norm > 0.0 {
        (rhs - fit).norm() / y_norm
    } else {
        0.0
    };

    Ok(DmdResult {
        dt,
        t_start,
        discrete_eigs: mu,
        cont_eigs: lambda,
        amplitudes: b.iter().copied().collect(),
        rank,
        residual,
        condition,
        ill_conditioned: condition > ILL_CONDITIONED,
    })
}

/// The Koopman mode at `i Omega` as a frequency response: `b e^{-i Omega t0}`
/// divided by `u0^n` (principal branch for `u0^{1/n}`).
pub fn mode_to_response(
    r: &DmdResult,
    omega: f64,
    order: OrderTag,
    u0: Complex64,
) -> Result<FreqResponse, DmdError> {
    let big_omega = order.frequency(omega);
    let target = Complex64::new(0.0, big_omega);
    let j = r.nearest(target).ok_or(DmdError::RankDeficient)?;
    let nearest = r.cont_eigs[j];
    if (nearest - target).norm() > 1e-3 * omega {
        return Err(DmdError::EigenvalueNotFound {
            target: big_omega,
            nearest,
        });
    }
    let norm = order.normalizer(Phasor::from_complex(u0));
    let b = r.amplitudes[j] * Complex64::from_polar(1.0, -big_omega * r.t_start);
    let value = b / norm;
    Ok(FreqResponse {
        omega,
        order,
        value,
        method: Method::Dmd,
        err_estimate: r.residual.max(f64::EPSILON) * value.norm(),
        u0,
    })
}
