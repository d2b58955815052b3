//! Finite-difference ground truth: long-orbit averages of `Φ` under
//! `f + γX′` for a grid of `γ`, and the slope of `μ_γ(Φ)` at `γ = 0`.

use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{MapModel, PerturbedModel};
use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::stats::mean_and_stderr;

/// Default grid `±{0.005, 0.01, 0.02}` plus `0`.
pub fn default_gammas() -> Vec<f64> {
    vec![-0.02, -0.01, -0.005, 0.0, 0.005, 0.01, 0.02]
}

/// States whose coordinates exceed this magnitude count as diverged.
pub const DIVERGENCE_BOUND: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepParams {
    pub gammas: Vec<f64>,
    pub n_replicas: usize,
    /// Averaged steps per replica.
    pub steps: usize,
    /// Discarded steps per replica.
    pub warmup: usize,
    /// Batch length for the pooled standard error.
    pub batch_len: usize,
    pub seed: u64,
}

impl Default for SweepParams {
    fn default() -> Self {
        SweepParams {
            gammas: default_gammas(),
            n_replicas: 8,
            steps: 1_000_000,
            warmup: 1000,
            batch_len: 1000,
            seed: 1,
        }
    }
}

impl SweepParams {
    pub fn validate(&self) -> Result<()> {
        if self.gammas.is_empty() {
            return Err(Error::config("verify.gammas must not be empty"));
        }
        if self.gammas.iter().any(|g| !g.is_finite()) {
            return Err(Error::config("verify.gammas must be finite"));
        }
        if self.n_replicas == 0 || self.steps == 0 || self.batch_len == 0 {
            return Err(Error::config(
                "verify.n_replicas, verify.steps and verify.batch_len must be positive",
            ));
        }
        if self.steps < 2 * self.batch_len && self.n_replicas < 2 {
            return Err(Error::config("verify needs at least two batches for error bars"));
        }
        Ok(())
    }

    /// Seed of replica `r`, shared across all `γ`.
    pub fn replica_seed(&self, r: usize) -> u64 {
        self.seed.wrapping_add(r as u64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub gamma: f64,
    /// `μ̂_γ(Φ)` over non-diverged replicas; NaN if all diverged.
    pub mean: f64,
    pub stderr: f64,
    /// Replicas entering the mean.
    pub n_replicas: usize,
    /// Replicas whose orbit left the bounded region.
    pub diverged: usize,
}

impl SweepPoint {
    pub fn is_usable(&self) -> bool {
        self.n_replicas > 0 && self.mean.is_finite()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub params: SweepParams,
}

impl SweepResult {
    pub fn point(&self, gamma: f64) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.gamma == gamma)
    }
}

/// Per-replica outcome: batch means of `Φ`, or the step at which the orbit diverged.
fn replica_batches(
    model: &PerturbedModel,
    seed: u64,
    params: &SweepParams,
) -> std::result::Result<Vec<f64>, usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = model.base.as_ref();
    let mut x = base.sample_initial(&mut rng);
    let bad = |x: &nalgebra::DVector<f64>| x.iter().any(|v| !(v.abs() <= DIVERGENCE_BOUND));
    for step in 0..params.warmup {
        x = model.perturbed_step(&x);
        if bad(&x) {
            return Err(step);
        }
    }
    let mut batches = Vec::with_capacity(params.steps / params.batch_len + 1);
    let mut acc = 0.0;
    let mut n = 0;
    for step in 0..params.steps {
        x = model.perturbed_step(&x);
        if bad(&x) {
            return Err(params.warmup + step);
        }
        acc += base.observable(&x);
        n += 1;
        if n == params.batch_len {
            batches.push(acc / n as f64);
            acc = 0.0;
            n = 0;
        }
    }
    if n > 0 {
        // a short tail batch is folded into the last full one
        match batches.last_mut() {
            Some(last) => {
                let full = params.batch_len as f64;
                *last = (*last * full + acc) / (full + n as f64);
            }
            None => batches.push(acc / n as f64),
        }
    }
    Ok(batches)
}

/// Long-orbit averages of `Φ` under `f + γX′` for every `γ` in the grid.
///
/// Replica `r` uses the same initial seed at every `γ`. Replicas that
/// diverge are dropped and counted; the sweep always completes.
pub fn gamma_sweep(
    model: Arc<dyn MapModel>,
    field: Arc<dyn VectorField>,
    params: &SweepParams,
) -> Result<SweepResult> {
    params.validate()?;
    let jobs: Vec<(usize, usize)> = (0..params.gammas.len())
        .flat_map(|g| (0..params.n_replicas).map(move |r| (g, r)))
        .collect();
    let outcomes: Vec<std::result::Result<Vec<f64>, usize>> = jobs
        .par_iter()
        .map(|&(g, r)| {
            let pm = PerturbedModel::new(model.clone(), params.gammas[g], field.clone())?;
            Ok(replica_batches(&pm, params.replica_seed(r), params))
        })
        .collect::<Result<_>>()?;

    let mut points = Vec::with_capacity(params.gammas.len());
    for (g, &gamma) in params.gammas.iter().enumerate() {
        let mut pooled = Vec::new();
        let mut replica_means = Vec::new();
        let mut diverged = 0;
        for r in 0..params.n_replicas {
            match &outcomes[g * params.n_replicas + r] {
                Ok(b) => {
                    replica_means.push(b.iter().sum::<f64>() / b.len() as f64);
                    pooled.extend_from_slice(b);
                }
                Err(_) => diverged += 1,
            }
        }
        let (mean, stderr) = if replica_means.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            (
                replica_means.iter().sum::<f64>() / replica_means.len() as f64,
                mean_and_stderr(&pooled).1,
            )
        };
        points.push(SweepPoint {
            gamma,
            mean,
            stderr,
            n_replicas: replica_means.len(),
            diverged,
        });
    }
    Ok(SweepResult {
        points,
        params: params.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlopeReport {
    pub h: f64,
    /// `(μ̂_{+h} − μ̂_{−h})/(2h)`.
    pub slope: f64,
    pub slope_stderr: f64,
    /// Linear coefficient of a weighted quadratic fit over all usable points.
    pub quadratic_slope: f64,
    pub predicted: f64,
    pub predicted_stderr: f64,
    /// `sqrt(slope_stderr² + predicted_stderr²)`.
    pub combined_stderr: f64,
    pub k: f64,
    pub pass: bool,
}

/// Compares the central-difference slope at `±h` with a predicted response.
///
/// `h = None` uses the smallest `h > 0` with both `±h` usable in the sweep.
pub fn slope_check(
    sweep: &SweepResult,
    h: Option<f64>,
    predicted: f64,
    predicted_stderr: f64,
    k: f64,
) -> Result<SlopeReport> {
    let usable: Vec<&SweepPoint> = sweep.points.iter().filter(|p| p.is_usable()).collect();
    let has = |g: f64| usable.iter().any(|p| p.gamma == g);
    if usable.len() < 3 {
        return Err(Error::config(
            "slope check needs at least three usable γ points (−h, 0, +h)",
        ));
    }
    let h = match h {
        Some(h) if h > 0.0 && has(h) && has(-h) => h,
        Some(h) => {
            return Err(Error::config(format!(
                "slope check needs usable sweep points at γ = ±{h}"
            )))
        }
        None => usable
            .iter()
            .map(|p| p.gamma)
            .filter(|&g| g > 0.0 && has(-g))
            .min_by(f64::total_cmp)
            .ok_or_else(|| Error::config("slope check needs a symmetric pair ±h"))?,
    };
    let plus = usable.iter().find(|p| p.gamma == h).unwrap();
    let minus = usable.iter().find(|p| p.gamma == -h).unwrap();
    let slope = (plus.mean - minus.mean) / (2.0 * h);
    let slope_stderr = (plus.stderr.powi(2) + minus.stderr.powi(2)).sqrt() / (2.0 * h);
    let quadratic_slope = quadratic_fit(&usable).map(|c| c[1]).unwrap_or(f64::NAN);
    let combined_stderr = (slope_stderr.powi(2) + predicted_stderr.powi(2)).sqrt();
    Ok(SlopeReport {
        h,
        slope,
        slope_stderr,
        quadratic_slope,
        predicted,
        predicted_stderr,
        combined_stderr,
        k,
        pass: (slope - predicted).abs() <= k * combined_stderr,
    })
}

/// Weighted least squares `μ ≈ a + bγ + cγ²`; unit weights when any stderr
/// is missing or zero.
fn quadratic_fit(points: &[&SweepPoint]) -> Option<Vector3<f64>> {
    let unit = points.iter().any(|p| !(p.stderr > 0.0));
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    for p in points {
        let w = if unit { 1.0 } else { p.stderr.powi(-2) };
        let row = Vector3::new(1.0, p.gamma, p.gamma * p.gamma);
        ata += w * row * row.transpose();
        atb += w * p.mean * row;
    }
    ata.lu().solve(&atb)
}
