//! Invariant checks on one engine run, reported as machine-readable pass/fail.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dynamics::MapModel;
use crate::engine::ResponseEngine;
use crate::frames::{subspace_angle, FrameBundle};
use crate::shadowing::{adjoint_shadowing_solve, CovectorSource};

pub const DUALITY_TOL: f64 = 1e-10;
pub const FRAME_AGREEMENT_TOL: f64 = 1e-8;
pub const SHADOWING_RESIDUAL_TOL: f64 = 1e-8;
pub const DERIVATIVE_FD_TOL: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// The check passes when `value ≤ threshold`.
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    fn below(name: &str, value: f64, threshold: f64) -> Self {
        Check {
            name: name.to_string(),
            value,
            threshold,
            pass: value <= threshold,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DiagReport {
    pub model: String,
    pub orbit_len: usize,
    pub retained: (usize, usize),
    pub omega_phi_sup: f64,
    pub omega_div_sup: f64,
    pub phi_w_mean: f64,
    pub checks: Vec<Check>,
    pub all_pass: bool,
}

impl DiagReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Largest relative error of the analytic Jacobian against central differences.
pub fn jacobian_fd_error(model: &dyn MapModel, points: &[DVector<f64>]) -> f64 {
    let h = 1e-6;
    let m = model.dim();
    let mut worst: f64 = 0.0;
    for x in points {
        let j = model.jacobian(x);
        let mut fd = DMatrix::zeros(m, m);
        for l in 0..m {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[l] += h;
            xm[l] -= h;
            fd.set_column(l, &((model.image(&xp) - model.image(&xm)) / (2.0 * h)));
        }
        worst = worst.max((j - &fd).amax() / fd.amax().max(1.0));
    }
    worst
}

/// Largest relative error of the observable gradient against central differences.
pub fn gradient_fd_error(model: &dyn MapModel, points: &[DVector<f64>]) -> f64 {
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for x in points {
        let g = model.observable_gradient(x);
        let fd = DVector::from_fn(model.dim(), |l, _| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[l] += h;
            xm[l] -= h;
            (model.observable(&xp) - model.observable(&xm)) / (2.0 * h)
        });
        worst = worst.max((g - &fd).amax() / fd.amax().max(1.0));
    }
    worst
}

/// Runs every check; never fails, failures are reported in the result.
pub fn run_diagnostics(engine: &ResponseEngine) -> DiagReport {
    let orbit = engine.orbit();
    let frames = engine.frames();
    let shared = engine.shared();
    let model = engine.model().as_ref();
    let retained = engine.retained();
    let window = frames.retained();
    let mut checks = Vec::new();

    checks.push(Check::below("orbit_consistency", orbit.consistency_error(model), 1e-12));
    checks.push(Check::below(
        "frame_duality",
        frames.duality_residual(window.clone()),
        DUALITY_TOL,
    ));

    // frames from an independent seed must agree once both have converged
    let seed = engine.params().seed.wrapping_add(0x5eed).wrapping_add(1);
    match FrameBundle::compute(orbit, model.unstable_dim(), frames.frame_warmup, seed) {
        Ok(other) => {
            let e_gap = window
                .clone()
                .map(|k| subspace_angle(&frames.e[k], &other.e[k]))
                .fold(0.0, f64::max);
            let eps_gap = window
                .clone()
                .map(|k| {
                    // the oblique projector eps eᵀ does not depend on the choice of basis
                    (&frames.eps[k] * frames.e[k].transpose() - &other.eps[k] * other.e[k].transpose()).amax()
                })
                .fold(0.0, f64::max);
            checks.push(Check::below("frame_seed_agreement", e_gap, FRAME_AGREEMENT_TOL));
            checks.push(Check::below("coframe_seed_agreement", eps_gap, FRAME_AGREEMENT_TOL));
        }
        Err(_) => {
            checks.push(Check::below("frame_seed_agreement", f64::INFINITY, FRAME_AGREEMENT_TOL));
        }
    }

    checks.push(Check::below(
        "shadowing_residual_phi",
        shared.omega_phi.max_residual,
        SHADOWING_RESIDUAL_TOL,
    ));
    checks.push(Check::below(
        "shadowing_residual_div",
        shared.omega_div.max_residual,
        SHADOWING_RESIDUAL_TOL,
    ));

    let zero = vec![DVector::zeros(orbit.dim()); orbit.len()];
    let zero_sup = adjoint_shadowing_solve(
        orbit,
        frames,
        &zero,
        retained.clone(),
        CovectorSource::Custom("zero".into()),
    )
    .map(|p| p.omega.iter().map(|w| w.amax()).fold(0.0, f64::max))
    .unwrap_or(f64::INFINITY);
    checks.push(Check::below("zero_source_path", zero_sup, 0.0));

    let stride = (retained.len() / 16).max(1);
    let samples: Vec<DVector<f64>> = retained.clone().step_by(stride).map(|k| orbit.states[k].clone()).collect();
    checks.push(Check::below(
        "jacobian_fd",
        jacobian_fd_error(model, &samples),
        DERIVATIVE_FD_TOL,
    ));
    checks.push(Check::below(
        "observable_gradient_fd",
        gradient_fd_error(model, &samples),
        DERIVATIVE_FD_TOL,
    ));

    let phi_w_mean = retained.clone().map(|k| shared.phi_w.values[k]).sum::<f64>() / retained.len() as f64;
    let all_pass = checks.iter().all(|c| c.pass);
    DiagReport {
        model: model.name().to_string(),
        orbit_len: orbit.len(),
        retained: (retained.start, retained.end),
        omega_phi_sup: shared.omega_phi.sup_norm,
        omega_div_sup: shared.omega_div.sup_norm,
        phi_w_mean,
        checks,
        all_pass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::make_model;
    use crate::engine::EngineParams;

    fn params() -> EngineParams {
        EngineParams {
            n_segments: 50,
            ..EngineParams::default()
        }
    }

    #[test]
    fn healthy_run_passes_everything() {
        let e = ResponseEngine::build(make_model("solenoid2d").unwrap(), params()).unwrap();
        let r = run_diagnostics(&e);
        for c in &r.checks {
            assert!(c.pass, "{c:?}");
        }
        assert!(r.all_pass);
        assert_eq!(r.check("zero_source_path").unwrap().value, 0.0);
    }

    #[test]
    fn tiny_frame_warmup_is_flagged() {
        let p = EngineParams {
            frame_warmup: 1,
            ..params()
        };
        let e = ResponseEngine::build(make_model("solenoid3d").unwrap(), p).unwrap();
        let r = run_diagnostics(&e);
        assert!(!r.all_pass);
        assert!(!r.check("frame_seed_agreement").unwrap().pass);
    }
}
