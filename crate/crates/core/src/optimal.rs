//! Coefficients of the Riesz representative and the optimal perturbation.
//!
//! For an orthonormal basis `B̃_i` of the feasible space, the response
//! functional is `R(w) = ⟨w, v⟩` with `v = Σ c_i B̃_i` and `c_i = R(B̃_i)`.
//! The unit-norm maximizer is `X_opt = v/‖v‖` and the maximal response is
//! `‖v‖ = (Σ c_i²)^{1/2}`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dynamics::MapModel;
use crate::engine::{EngineParams, ResponseEngine};
use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::fourier::{BasisLabel, BasisSpec, TrigTable};
use crate::response::ResponseBreakdown;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoefficientEntry {
    pub label: BasisLabel,
    /// `‖B‖²_{H^p}` of the unnormalized element.
    pub norm_sq: f64,
    /// `R(B̃)`.
    pub coeff: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CoefficientTable {
    pub model: String,
    pub basis: BasisSpec,
    pub engine: EngineParams,
    pub entries: Vec<CoefficientEntry>,
}

impl CoefficientTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn coefficients(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.coeff).collect()
    }

    /// `‖v‖` within the truncation.
    pub fn riesz_norm(&self) -> f64 {
        self.entries.iter().map(|e| e.coeff * e.coeff).sum::<f64>().sqrt()
    }

    /// Entry with the largest `|c|`.
    pub fn extreme(&self) -> Option<&CoefficientEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.coeff.abs().total_cmp(&b.coeff.abs()))
    }

    pub fn get(&self, label: &BasisLabel) -> Option<&CoefficientEntry> {
        self.entries.iter().find(|e| &e.label == label)
    }
}

/// Builds a fresh engine for `model` and tabulates `R(B̃)` over the basis.
pub fn compute_coefficients(
    model: Arc<dyn MapModel>,
    basis: &BasisSpec,
    params: EngineParams,
) -> Result<CoefficientTable> {
    basis.validate()?;
    if basis.dim != model.dim() {
        return Err(Error::config(format!(
            "basis dimension {} does not match model `{}` of dimension {}",
            basis.dim,
            model.name(),
            model.dim()
        )));
    }
    let engine = ResponseEngine::build(model, params)?;
    coefficients_on(&engine, basis)
}

/// Tabulates `R(B̃)` for every basis element on an existing engine.
pub fn coefficients_on(engine: &ResponseEngine, basis: &BasisSpec) -> Result<CoefficientTable> {
    Ok(coefficients_with_breakdown(engine, basis)?.0)
}

/// Like [`coefficients_on`], also returning the per-element breakdowns in table order.
pub fn coefficients_with_breakdown(
    engine: &ResponseEngine,
    basis: &BasisSpec,
) -> Result<(CoefficientTable, Vec<ResponseBreakdown>)> {
    basis.validate()?;
    let labels = basis.labels();
    let fields: Vec<_> = labels.iter().map(|l| basis.field(l)).collect();
    let responses = engine.additive_batch(&fields)?;
    let entries = labels
        .into_iter()
        .zip(&responses)
        .map(|(label, r)| CoefficientEntry {
            norm_sq: basis.norm_sq(&label),
            label,
            coeff: r.total,
            stderr: r.stderr,
        })
        .collect();
    let table = CoefficientTable {
        model: engine.model().name().to_string(),
        basis: basis.clone(),
        engine: *engine.params(),
        entries,
    };
    Ok((table, responses))
}

/// `X_opt = Σ (c_i/‖v‖) B̃_i`.
#[derive(Clone, Debug)]
pub struct OptimalPerturbation {
    dim: usize,
    truncation: usize,
    riesz_norm: f64,
    /// `(c_i/‖v‖, label)` for the nonzero coefficients.
    weights: Vec<(f64, BasisLabel)>,
    /// `c_i/(‖v‖ ‖B_i‖)`, the factor multiplying the unnormalized element.
    scaled: Vec<f64>,
}

impl OptimalPerturbation {
    pub fn riesz_norm(&self) -> f64 {
        self.riesz_norm
    }

    /// Normalized coefficients `c_i/‖v‖` with their labels.
    pub fn weights(&self) -> &[(f64, BasisLabel)] {
        &self.weights
    }

    /// `X_opt(x)` and `∇X_opt(x)` in one pass.
    pub fn eval_with_gradient(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let m = self.dim;
        let table = TrigTable::new(x, self.truncation);
        let mut value = DVector::zeros(m);
        let mut grad = DMatrix::zeros(m, m);
        for ((_, label), &a) in self.weights.iter().zip(&self.scaled) {
            match label {
                BasisLabel::Full(idx) => {
                    let row = idx.j - 1;
                    let vals: Vec<f64> = (0..m).map(|i| table.value(i, idx.n[i])).collect();
                    value[row] += a * vals.iter().product::<f64>();
                    for l in 0..m {
                        let d = table.deriv(l, idx.n[l]);
                        if d == 0.0 {
                            continue;
                        }
                        let rest: f64 = (0..m).filter(|&i| i != l).map(|i| vals[i]).product();
                        grad[(row, l)] += a * d * rest;
                    }
                }
                BasisLabel::Restricted(n) => {
                    let v = a * table.value(0, *n);
                    let d = a * table.deriv(0, *n);
                    value[0] += v;
                    value[1] += v;
                    grad[(0, 0)] += d;
                    grad[(1, 0)] += d;
                }
            }
        }
        (value, grad)
    }
}

impl VectorField for OptimalPerturbation {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        let table = TrigTable::new(x, self.truncation);
        let mut value = DVector::zeros(self.dim);
        for ((_, label), &a) in self.weights.iter().zip(&self.scaled) {
            match label {
                BasisLabel::Full(idx) => {
                    value[idx.j - 1] +=
                        a * (0..self.dim).map(|i| table.value(i, idx.n[i])).product::<f64>();
                }
                BasisLabel::Restricted(n) => {
                    let v = a * table.value(0, *n);
                    value[0] += v;
                    value[1] += v;
                }
            }
        }
        value
    }

    fn gradient(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.eval_with_gradient(x).1
    }
}

/// Assembles `X_opt` from a coefficient table.
pub fn assemble_optimal(table: &CoefficientTable) -> Result<OptimalPerturbation> {
    let norm = table.riesz_norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::NullResponse);
    }
    let mut weights = Vec::new();
    let mut scaled = Vec::new();
    for e in &table.entries {
        if e.coeff == 0.0 {
            continue;
        }
        let w = e.coeff / norm;
        scaled.push(w / e.norm_sq.sqrt());
        weights.push((w, e.label.clone()));
    }
    Ok(OptimalPerturbation {
        dim: table.basis.dim,
        truncation: table.basis.truncation,
        riesz_norm: norm,
        weights,
        scaled,
    })
}

/// Maximal response over the unit ball of the truncated space, `‖v‖`.
pub fn predicted_optimal_response(table: &CoefficientTable) -> f64 {
    table.riesz_norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::{FourierIndex, HpWeighting};

    fn table(basis: BasisSpec, coeffs: &[f64]) -> CoefficientTable {
        let entries = basis
            .labels()
            .into_iter()
            .zip(coeffs)
            .map(|(label, &c)| CoefficientEntry {
                norm_sq: basis.norm_sq(&label),
                label,
                coeff: c,
                stderr: 0.0,
            })
            .collect();
        CoefficientTable {
            model: "synthetic".into(),
            basis,
            engine: EngineParams::default(),
            entries,
        }
    }

    fn two_element_basis() -> BasisSpec {
        BasisSpec::subset(
            2,
            4,
            HpWeighting::two_pi_inverse(5),
            vec![FourierIndex::new(1, vec![0, 1]), FourierIndex::new(2, vec![3, 2])],
        )
    }

    #[test]
    fn pythagorean_norm() {
        let t = table(two_element_basis(), &[3.0, 4.0]);
        let opt = assemble_optimal(&t).unwrap();
        assert_eq!(opt.riesz_norm(), 5.0);
        assert_eq!(predicted_optimal_response(&t), 5.0);
        let w: Vec<f64> = opt.weights().iter().map(|(w, _)| *w).collect();
        assert_eq!(w, vec![0.6, 0.8]);
    }

    #[test]
    fn one_hot_reproduces_basis_field() {
        let basis = two_element_basis();
        let t = table(basis.clone(), &[0.0, 1.0]);
        let opt = assemble_optimal(&t).unwrap();
        assert_eq!(opt.riesz_norm(), 1.0);
        let b = basis.field(&basis.labels()[1]);
        for k in 0..20 {
            let x = DVector::from_vec(vec![0.013 * k as f64, 0.37 + 0.05 * k as f64]);
            assert!((opt.eval(&x) - b.eval(&x)).amax() < 1e-14);
            assert!((opt.gradient(&x) - b.gradient(&x)).amax() < 1e-12);
        }
    }

    #[test]
    fn zero_table_is_null_response() {
        let t = table(two_element_basis(), &[0.0, 0.0]);
        assert!(matches!(assemble_optimal(&t), Err(Error::NullResponse)));
    }

    #[test]
    fn norm_dominates_every_coefficient() {
        let t = table(two_element_basis(), &[-0.3, 0.2]);
        let n = t.riesz_norm();
        assert!(t.entries.iter().all(|e| n >= e.coeff.abs()));
        assert_eq!(t.extreme().unwrap().coeff, -0.3);
    }

    #[test]
    fn restricted_optimal_matches_gradient_of_value() {
        let basis = BasisSpec::restricted(5, 6, HpWeighting::two_pi_inverse(4));
        let t = table(basis, &[0.5, -0.1, 0.3, 0.0, 0.2, 0.05]);
        let opt = assemble_optimal(&t).unwrap();
        let x = DVector::from_vec(vec![0.11, 0.2, 0.3, 0.4, 0.5]);
        let h = 1e-6;
        let g = opt.gradient(&x);
        for l in 0..5 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[l] += h;
            xm[l] -= h;
            let fd = (opt.eval(&xp) - opt.eval(&xm)) / (2.0 * h);
            assert!((fd - g.column(l)).amax() < 1e-7);
        }
        let v = opt.eval(&x);
        assert_eq!(v[0], v[1]);
        assert!(v.rows(2, 3).iter().all(|&c| c == 0.0));
    }
}
