//! One orbit, its frames and shadowing paths, reused for many perturbations.

use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::MapModel;
use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::frames::{generate_orbit, FrameBundle, Orbit};
use crate::response::{
    equivariant_div_fstar, phi_window, PerturbationOnOrbit, ResponseBreakdown, SharedPaths,
    DEFAULT_UNSTABLE_SIGN,
};
use crate::shadowing::{adjoint_shadowing_solve, CovectorSource};
use crate::stats::BatchAccumulator;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineParams {
    /// Steps per segment; also the batch length for error bars.
    pub seg_len: usize,
    /// Number of segments entering the averages.
    pub n_segments: usize,
    /// Decorrelation window `W`.
    pub window: usize,
    /// Discarded steps before recording.
    pub warmup: usize,
    pub frame_warmup: usize,
    pub seed: u64,
    /// Set from `flags.unstable_sign` in run configurations.
    #[serde(skip)]
    pub unstable_sign: f64,
}

impl Default for EngineParams {
    fn default() -> Self {
        EngineParams {
            seg_len: 20,
            n_segments: 4000,
            window: 10,
            warmup: 1000,
            frame_warmup: 100,
            seed: 1,
            unstable_sign: DEFAULT_UNSTABLE_SIGN,
        }
    }
}

impl EngineParams {
    /// Steps trimmed at each orbit end before averaging.
    pub fn end_buffer(&self) -> usize {
        self.frame_warmup.max(2 * self.window + 10)
    }

    /// Whole segments of padding recorded at each end of the orbit so that
    /// exactly `n_segments` segments remain after trimming.
    pub fn pad_segments(&self) -> usize {
        self.end_buffer().div_ceil(self.seg_len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seg_len == 0 || self.n_segments == 0 {
            return Err(Error::config("engine.seg_len and engine.n_segments must be positive"));
        }
        if self.n_segments < 2 {
            return Err(Error::config("engine.n_segments must be at least 2 for error bars"));
        }
        if self.unstable_sign != 1.0 && self.unstable_sign != -1.0 {
            return Err(Error::config("flags.unstable_sign must be +1 or -1"));
        }
        Ok(())
    }
}

/// Per-step contraction weights for additive perturbations.
///
/// For retained step `k` with `y = x_{k−1}`, the three integrands of an
/// additive direction `X′` are `value_phi·X′(y)`, `value_div·X′(y)` and
/// `⟨∇X′(y), grad_dual⟩_F`.
#[derive(Clone, Debug)]
struct AdditiveWeights {
    value_phi: Vec<DVector<f64>>,
    value_div: Vec<DVector<f64>>,
    grad_dual: Vec<DMatrix<f64>>,
}

/// Shared orbit data for computing many responses on one orbit.
pub struct ResponseEngine {
    model: Arc<dyn MapModel>,
    params: EngineParams,
    orbit: Orbit,
    frames: FrameBundle,
    shared: SharedPaths,
    mu_phi: f64,
    additive: AdditiveWeights,
}

impl ResponseEngine {
    pub fn build(model: Arc<dyn MapModel>, params: EngineParams) -> Result<Self> {
        params.validate()?;
        let pad = params.pad_segments();
        let orbit = generate_orbit(
            model.as_ref(),
            params.n_segments + 2 * pad,
            params.seg_len,
            params.warmup,
            params.seed,
        )?;
        Self::from_orbit(model, params, orbit)
    }

    /// Builds the engine on a given orbit, which must carry the padding
    /// described by [`EngineParams::pad_segments`].
    pub fn from_orbit(model: Arc<dyn MapModel>, params: EngineParams, orbit: Orbit) -> Result<Self> {
        params.validate()?;
        let t = orbit.len();
        let pad_steps = params.pad_segments() * params.seg_len;
        if t <= 2 * pad_steps {
            return Err(Error::config(format!(
                "orbit of length {t} leaves nothing after trimming {pad_steps} steps at each end"
            )));
        }
        let retained = pad_steps..t - pad_steps;
        let frames = FrameBundle::compute(
            &orbit,
            model.unstable_dim(),
            params.frame_warmup,
            params.seed.wrapping_add(0x5eed),
        )?;

        let mu_phi = orbit.phi[retained.clone()].iter().sum::<f64>() / retained.len() as f64;
        let phi_w = phi_window(&orbit.phi, params.window, mu_phi)?;

        let nu_phi: Vec<_> = orbit
            .states
            .iter()
            .map(|x| model.observable_gradient(x))
            .collect();
        let nu_div = equivariant_div_fstar(&orbit, &frames, model.as_ref())?;
        let (omega_phi, omega_div) = rayon::join(
            || {
                adjoint_shadowing_solve(
                    &orbit,
                    &frames,
                    &nu_phi,
                    retained.clone(),
                    CovectorSource::ObservableGradient,
                )
            },
            || {
                adjoint_shadowing_solve(
                    &orbit,
                    &frames,
                    &nu_div,
                    retained.clone(),
                    CovectorSource::UnstableJacobianDerivative,
                )
            },
        );
        let shared = SharedPaths {
            retained: retained.clone(),
            seg_len: params.seg_len,
            window: params.window,
            unstable_sign: params.unstable_sign,
            omega_phi: omega_phi?,
            omega_div: omega_div?,
            phi_w,
        };
        let additive = additive_weights(&orbit, &frames, &shared)?;
        Ok(ResponseEngine {
            model,
            params,
            orbit,
            frames,
            shared,
            mu_phi,
            additive,
        })
    }

    pub fn model(&self) -> &Arc<dyn MapModel> {
        &self.model
    }

    pub fn params(&self) -> &EngineParams {
        &self.params
    }

    pub fn orbit(&self) -> &Orbit {
        &self.orbit
    }

    pub fn frames(&self) -> &FrameBundle {
        &self.frames
    }

    pub fn shared(&self) -> &SharedPaths {
        &self.shared
    }

    pub fn retained(&self) -> Range<usize> {
        self.shared.retained.clone()
    }

    /// Orbit mean of `Φ` over the retained steps.
    pub fn mu_phi(&self) -> f64 {
        self.mu_phi
    }

    /// Response of a composition-convention perturbation sampled on this orbit.
    pub fn response(&self, pert: &PerturbationOnOrbit) -> Result<ResponseBreakdown> {
        crate::response::response(&self.frames, &self.shared, pert)
    }

    pub fn batch_response(&self, perts: &[PerturbationOnOrbit]) -> Result<Vec<ResponseBreakdown>> {
        crate::response::batch_response(&self.frames, &self.shared, perts)
    }

    /// Response to the additive perturbation `f + γX′`, streamed over the
    /// orbit without materializing `X′` along it.
    pub fn additive_response(&self, field: &dyn VectorField) -> Result<ResponseBreakdown> {
        if field.dim() != self.orbit.dim() {
            return Err(Error::config(format!(
                "perturbation has dimension {} but the map has dimension {}",
                field.dim(),
                self.orbit.dim()
            )));
        }
        let mut acc = BatchAccumulator::<3>::new(self.params.seg_len);
        for (i, k) in self.shared.retained.clone().enumerate() {
            let y = &self.orbit.states[k - 1];
            let x = field.eval(y);
            let g1 = self.additive.value_phi[i].dot(&x);
            let g2 = self.additive.value_div[i].dot(&x);
            let g3 = field.grad_contract(y, &self.additive.grad_dual[i]);
            acc.push([g1, g2, g3]);
        }
        Ok(self.shared.finish(&acc))
    }

    /// [`additive_response`](Self::additive_response) for many fields in parallel;
    /// results are in input order and independent of the worker count.
    pub fn additive_batch<F>(&self, fields: &[F]) -> Result<Vec<ResponseBreakdown>>
    where
        F: VectorField,
    {
        fields
            .par_iter()
            .map(|f| self.additive_response(f))
            .collect()
    }
}

fn additive_weights(
    orbit: &Orbit,
    frames: &FrameBundle,
    shared: &SharedPaths,
) -> Result<AdditiveWeights> {
    let n = shared.retained.len();
    let mut value_phi = Vec::with_capacity(n);
    let mut value_div = Vec::with_capacity(n);
    let mut grad_dual = Vec::with_capacity(n);
    for k in shared.retained.clone() {
        let phi = shared.phi_w.values[k];
        value_phi.push(shared.omega_phi.omega[k].clone());
        value_div.push(&shared.omega_div.omega[k] * phi);
        // tr(epsᵀ ∇X′ df⁻¹ e) = ⟨∇X′, eps (df⁻¹ e)ᵀ⟩_F
        let pulled = orbit.jacobians[k - 1]
            .clone()
            .lu()
            .solve(&frames.e[k])
            .ok_or(Error::SingularJacobian { step: k - 1 })?;
        grad_dual.push(&frames.eps[k] * pulled.transpose() * phi);
    }
    Ok(AdditiveWeights {
        value_phi,
        value_div,
        grad_dual,
    })
}
