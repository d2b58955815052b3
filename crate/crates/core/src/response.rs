//! Fast adjoint response: `R(X) ≈ R1 + R2W + R3W` from orbit averages.
//!
//! ```text
//! R1  = ⟨ ω^Φ · X ⟩
//! R2W = ⟨ φ_W (ω^div · X) ⟩
//! R3W = ⟨ φ_W div^v X ⟩
//! ```
//!
//! where `ω^Φ` and `ω^div` are the adjoint shadowing covectors driven by
//! `dΦ` and by the equivariant divergence of `f_*`, and `φ_W` is the
//! centred windowed observable. `R2W` and `R3W` together form the unstable
//! contribution and are reported with [`SharedPaths::unstable_sign`]
//! applied.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dynamics::MapModel;
use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::frames::{FrameBundle, Orbit};
use crate::shadowing::CovectorPath;
use crate::stats::BatchAccumulator;

/// Sign multiplying the unstable contribution `R2W + R3W`.
///
/// With `div^v f_*` taken as the derivative of the log unstable Jacobian,
/// the unstable contribution enters with a minus sign; the finite-difference
/// γ-sweep confirms this orientation on all three benchmarks.
pub const DEFAULT_UNSTABLE_SIGN: f64 = -1.0;

/// `φ_{W,k} = Σ_{m=−W}^{W} (Φ(x_{k+m}) − μ(Φ))`, defined on `[W, T − W)`.
#[derive(Clone, Debug)]
pub struct WindowedObservable {
    /// NaN outside `valid`.
    pub values: Vec<f64>,
    pub window: usize,
    pub valid: Range<usize>,
}

pub fn phi_window(phi: &[f64], window: usize, mu_phi: f64) -> Result<WindowedObservable> {
    let t = phi.len();
    if t < 2 * window + 1 {
        return Err(Error::config(format!(
            "window W={window} needs at least {} orbit steps, have {t}",
            2 * window + 1
        )));
    }
    let centred: Vec<f64> = phi.iter().map(|p| p - mu_phi).collect();
    let valid = window..t - window;
    let mut values = vec![f64::NAN; t];
    for k in valid.clone() {
        values[k] = centred[k - window..=k + window].iter().sum();
    }
    Ok(WindowedObservable {
        values,
        window,
        valid,
    })
}

/// `div^v X = tr(epsᵀ ∇X e)` at one step.
pub fn equivariant_div_x(e: &DMatrix<f64>, eps: &DMatrix<f64>, grad_x: &DMatrix<f64>) -> f64 {
    (0..e.ncols())
        .map(|i| eps.column(i).dot(&(grad_x * e.column(i))))
        .sum()
}

/// The covector `Y ↦ tr( A_k⁻¹ eps_{k+1}ᵀ D²f_{x_k}(Y, e_k) )`, with
/// `A_k = eps_{k+1}ᵀ df_k e_k`, for every step but the last (which is zero).
///
/// This is the derivative of the log unstable Jacobian along `Y` with the
/// frames held fixed. Writing `G = eps_{k+1} A_k⁻ᵀ`, the coframe dual to the
/// pushed frame `df_k e_k`, it equals `Σ_l g_lᵀ D²f(e_{k,l}, Y)`.
pub fn equivariant_div_fstar(
    orbit: &Orbit,
    frames: &FrameBundle,
    model: &dyn MapModel,
) -> Result<Vec<DVector<f64>>> {
    let t = orbit.len();
    let m = orbit.dim();
    let u = frames.unstable_dim();
    let mut out = vec![DVector::zeros(m); t];
    for k in 0..t.saturating_sub(1) {
        let eps_next = &frames.eps[k + 1];
        let pushed = &orbit.jacobians[k] * &frames.e[k];
        let pairing = eps_next.tr_mul(&pushed);
        let Some(inv) = pairing.try_inverse() else {
            continue;
        };
        let dual = eps_next * inv.transpose();
        let x = &orbit.states[k];
        let mut acc = DVector::zeros(m);
        for l in 0..u {
            let g = dual.column(l).into_owned();
            let a = frames.e[k].column(l).into_owned();
            acc += model.hessian_contract(x, &g, &a)?;
        }
        out[k] = acc;
    }
    Ok(out)
}

/// A perturbation direction evaluated along an orbit, in composition
/// convention (`f_γ = (id + γX + o(γ)) ∘ f`).
#[derive(Clone, Debug)]
pub struct PerturbationOnOrbit {
    pub label: String,
    pub values: Vec<DVector<f64>>,
    /// `∇X` at each step, rows = components.
    pub gradients: Vec<DMatrix<f64>>,
    /// First usable step.
    pub valid_from: usize,
}

impl PerturbationOnOrbit {
    /// Samples a composition-convention field directly on the orbit.
    pub fn sample(orbit: &Orbit, field: &dyn VectorField, label: impl Into<String>) -> Self {
        PerturbationOnOrbit {
            label: label.into(),
            values: orbit.states.iter().map(|x| field.eval(x)).collect(),
            gradients: orbit.states.iter().map(|x| field.gradient(x)).collect(),
            valid_from: 0,
        }
    }

    /// `Σ a_i P_i` over perturbations on the same orbit.
    pub fn combine(terms: &[(f64, &PerturbationOnOrbit)], label: impl Into<String>) -> Self {
        let (_, first) = terms[0];
        let t = first.values.len();
        let m = first.values[0].len();
        let mut values = vec![DVector::zeros(m); t];
        let mut gradients = vec![DMatrix::zeros(m, m); t];
        for (a, p) in terms {
            for k in 0..t {
                values[k].axpy(*a, &p.values[k], 1.0);
                gradients[k] += &p.gradients[k] * *a;
            }
        }
        PerturbationOnOrbit {
            label: label.into(),
            values,
            gradients,
            valid_from: terms.iter().map(|(_, p)| p.valid_from).max().unwrap_or(0),
        }
    }
}

/// Converts an additive direction `X′` (with `f_γ = f + γX′`) to the
/// equivalent composition direction `X = X′ ∘ f⁻¹` along the orbit:
/// `X_{k+1} = X′(x_k)` and `∇X_{k+1} = ∇X′(x_k) · df_k⁻¹`. Step 0 is unusable.
pub fn additive_to_composition(
    orbit: &Orbit,
    field: &dyn VectorField,
    label: impl Into<String>,
) -> Result<PerturbationOnOrbit> {
    let t = orbit.len();
    let m = orbit.dim();
    let mut values = vec![DVector::zeros(m); t];
    let mut gradients = vec![DMatrix::zeros(m, m); t];
    for k in 0..t.saturating_sub(1) {
        let x = &orbit.states[k];
        values[k + 1] = field.eval(x);
        // G df⁻¹ = (df⁻ᵀ Gᵀ)ᵀ
        let gt = field.gradient(x).transpose();
        let solved = orbit.jacobians[k]
            .transpose()
            .lu()
            .solve(&gt)
            .ok_or(Error::SingularJacobian { step: k })?;
        gradients[k + 1] = solved.transpose();
    }
    Ok(PerturbationOnOrbit {
        label: label.into(),
        values,
        gradients,
        valid_from: 1,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ResponseBreakdown {
    pub r1: f64,
    pub r2w: f64,
    pub r3w: f64,
    pub total: f64,
    /// Batch-means standard error of `total`.
    pub stderr: f64,
    pub window: usize,
    pub t_used: usize,
}

/// Per-orbit quantities shared by every perturbation.
#[derive(Clone, Debug)]
pub struct SharedPaths {
    /// Steps entering the averages.
    pub retained: Range<usize>,
    /// Batch length for the standard error.
    pub seg_len: usize,
    pub window: usize,
    pub unstable_sign: f64,
    pub omega_phi: CovectorPath,
    pub omega_div: CovectorPath,
    pub phi_w: WindowedObservable,
}

impl SharedPaths {
    fn check(&self, len: usize) -> Result<()> {
        let r = &self.retained;
        let inside = |v: &Range<usize>| v.start <= r.start && r.end <= v.end;
        if r.is_empty()
            || r.end > len
            || !inside(&self.omega_phi.valid)
            || !inside(&self.omega_div.valid)
            || !inside(&self.phi_w.valid)
        {
            return Err(Error::config(format!(
                "retained window {r:?} is not covered by the shadowing paths and the W={} window",
                self.window
            )));
        }
        if self.seg_len == 0 {
            return Err(Error::config("seg_len must be positive"));
        }
        Ok(())
    }

    pub(crate) fn finish(&self, acc: &BatchAccumulator<3>) -> ResponseBreakdown {
        let s = self.unstable_sign;
        let [r1, r2, r3] = acc.means();
        let (r2w, r3w) = (s * r2, s * r3);
        ResponseBreakdown {
            r1,
            r2w,
            r3w,
            total: r1 + r2w + r3w,
            stderr: acc.stderr_of(|b| b[0] + s * (b[1] + b[2])),
            window: self.window,
            t_used: acc.count(),
        }
    }
}

/// Response of a single composition-convention perturbation.
pub fn response(
    frames: &FrameBundle,
    shared: &SharedPaths,
    pert: &PerturbationOnOrbit,
) -> Result<ResponseBreakdown> {
    shared.check(frames.len())?;
    if pert.values.len() != frames.len() || pert.valid_from > shared.retained.start {
        return Err(Error::config(format!(
            "perturbation `{}` does not cover the retained window",
            pert.label
        )));
    }
    let mut acc = BatchAccumulator::<3>::new(shared.seg_len);
    for k in shared.retained.clone() {
        let x = &pert.values[k];
        let phi = shared.phi_w.values[k];
        let g1 = shared.omega_phi.omega[k].dot(x);
        let g2 = phi * shared.omega_div.omega[k].dot(x);
        let g3 = phi * equivariant_div_x(&frames.e[k], &frames.eps[k], &pert.gradients[k]);
        acc.push([g1, g2, g3]);
    }
    Ok(shared.finish(&acc))
}

/// Responses of many perturbations over the same shared data.
pub fn batch_response(
    frames: &FrameBundle,
    shared: &SharedPaths,
    perts: &[PerturbationOnOrbit],
) -> Result<Vec<ResponseBreakdown>> {
    use rayon::prelude::*;
    perts
        .par_iter()
        .map(|p| response(frames, shared, p))
        .collect()
}
