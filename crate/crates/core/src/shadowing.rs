//! Adjoint shadowing: the bounded covector path `ω` with `ω_k = df_kᵀ ω_{k+1} + ν_k`.
//!
//! The covector space at each step splits obliquely into the adjoint
//! unstable part `span(eps_k)` and the annihilator of the unstable subspace.
//! Pullback by `df_kᵀ` contracts the second part, so it is solved by a
//! backward sweep from zero at the far future. The first part is expanded
//! by pullback, so its coordinates `a_k` (with `ω^u_k = eps_k a_k`) are
//! solved forward from zero at the far past:
//!
//! ```text
//! a_k = Θ_k a_{k+1} + e_kᵀ ν_k,   Θ_k = (df_k e_k)ᵀ eps_{k+1}
//! a_{k+1} = Θ_k⁻¹ (a_k − e_kᵀ ν_k)
//! ```
//!
//! Both sweeps are contracting, so the errors from the artificial zero
//! initializations decay away from the orbit ends.

use std::fmt;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::frames::{FrameBundle, Orbit};

/// Residual above which a solve is reported as failed.
pub const SOLVER_FAILURE_RESIDUAL: f64 = 1e-6;

/// Which source covector a path was solved for.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CovectorSource {
    ObservableGradient,
    UnstableJacobianDerivative,
    Custom(String),
}

impl fmt::Display for CovectorSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CovectorSource::ObservableGradient => f.write_str("dPhi"),
            CovectorSource::UnstableJacobianDerivative => f.write_str("div_v_fstar"),
            CovectorSource::Custom(s) => f.write_str(s),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CovectorPath {
    pub omega: Vec<DVector<f64>>,
    pub source: CovectorSource,
    /// Steps where the solution is trusted.
    pub valid: Range<usize>,
    /// `max ‖ω_k‖_∞` over `valid`.
    pub sup_norm: f64,
    /// `max ‖ω_k − df_kᵀ ω_{k+1} − ν_k‖_∞` over the interior of `valid`.
    pub max_residual: f64,
    pub max_residual_step: usize,
}

/// Splits a covector into its adjoint-unstable coordinates and the part
/// annihilating the unstable subspace: `w = eps a + w_s`.
pub fn oblique_split(
    w: &DVector<f64>,
    e: &DMatrix<f64>,
    eps: &DMatrix<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let a = e.transpose() * w;
    let ws = w - eps * &a;
    (a, ws)
}

/// Largest residual of the adjoint variation equation over `range`
/// (the last step of the range is excluded since it has no successor).
pub fn shadowing_residual(
    orbit: &Orbit,
    omega: &[DVector<f64>],
    nu: &[DVector<f64>],
    range: Range<usize>,
) -> (f64, usize) {
    let end = range.end.min(orbit.len()).saturating_sub(1);
    (range.start..end)
        .map(|k| {
            let r = &omega[k] - orbit.jacobians[k].tr_mul(&omega[k + 1]) - &nu[k];
            (r.amax(), k)
        })
        .fold((0.0, range.start), |acc, x| if x.0 > acc.0 { x } else { acc })
}

/// Solves for the bounded covector path driven by `nu`.
///
/// `valid` is the window where the caller will use the result; it must
/// leave enough steps at both ends for the two sweeps to forget their
/// initialization.
pub fn adjoint_shadowing_solve(
    orbit: &Orbit,
    frames: &FrameBundle,
    nu: &[DVector<f64>],
    valid: Range<usize>,
    source: CovectorSource,
) -> Result<CovectorPath> {
    let t = orbit.len();
    if nu.len() != t || frames.len() != t {
        return Err(Error::config("orbit, frames and source covectors differ in length"));
    }
    if valid.start >= valid.end || valid.end > t {
        return Err(Error::config(format!(
            "valid window {valid:?} does not fit an orbit of length {t}"
        )));
    }
    let m = orbit.dim();
    let (e, eps) = (&frames.e, &frames.eps);

    // contracting part, backward
    let mut omega_s = vec![DVector::zeros(m); t];
    let mut next = DVector::zeros(m);
    for k in (0..t).rev() {
        let w = &nu[k] + orbit.jacobians[k].tr_mul(&next);
        let (_, ws) = oblique_split(&w, &e[k], &eps[k]);
        omega_s[k] = ws;
        next = omega_s[k].clone();
    }

    // expanding part in coframe coordinates, forward
    let u = frames.unstable_dim();
    let mut omega = omega_s;
    let mut a = DVector::zeros(u);
    for k in 0..t {
        omega[k] += &eps[k] * &a;
        if k + 1 == t {
            break;
        }
        let theta: DMatrix<f64> = (&orbit.jacobians[k] * &e[k]).tr_mul(&eps[k + 1]);
        let rhs = &a - e[k].tr_mul(&nu[k]);
        a = match theta.lu().solve(&rhs) {
            Some(sol) => sol,
            None if valid.contains(&k) => {
                return Err(Error::Tangency {
                    step: k,
                    condition: f64::INFINITY,
                })
            }
            None => DVector::zeros(u),
        };
    }

    let (max_residual, max_residual_step) = shadowing_residual(orbit, &omega, nu, valid.clone());
    if !(max_residual <= SOLVER_FAILURE_RESIDUAL) {
        return Err(Error::SolverFailure {
            step: max_residual_step,
            residual: max_residual,
        });
    }
    let sup_norm = omega[valid.clone()].iter().map(|w| w.amax()).fold(0.0, f64::max);
    Ok(CovectorPath {
        omega,
        source,
        valid,
        sup_norm,
        max_residual,
        max_residual_step,
    })
}
