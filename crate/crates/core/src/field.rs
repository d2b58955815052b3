//! Vector fields on the torus used as perturbation directions.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

/// A smooth vector field `X: T^M -> R^M` together with its spatial gradient.
///
/// The gradient is laid out as `grad[(i, l)] = d X_i / d x_l`: row `i` is the
/// component, column `l` the differentiation direction.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, x: &DVector<f64>) -> DVector<f64>;

    fn gradient(&self, x: &DVector<f64>) -> DMatrix<f64>;

    /// Frobenius pairing `sum_{i,l} grad[(i, l)] * dual[(i, l)]`.
    ///
    /// Fields with sparse gradients override this; the engine calls it once
    /// per orbit step and perturbation.
    fn grad_contract(&self, x: &DVector<f64>, dual: &DMatrix<f64>) -> f64 {
        self.gradient(x).dot(dual)
    }
}

impl<F: VectorField + ?Sized> VectorField for Arc<F> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        (**self).eval(x)
    }
    fn gradient(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (**self).gradient(x)
    }
    fn grad_contract(&self, x: &DVector<f64>, dual: &DMatrix<f64>) -> f64 {
        (**self).grad_contract(x, dual)
    }
}

/// The field that is the same vector everywhere.
#[derive(Clone, Debug)]
pub struct ConstantField {
    pub value: DVector<f64>,
}

impl ConstantField {
    pub fn new(value: DVector<f64>) -> Self {
        ConstantField { value }
    }

    pub fn zero(dim: usize) -> Self {
        ConstantField {
            value: DVector::zeros(dim),
        }
    }

    /// Unit field along coordinate `slot` (0-based).
    pub fn unit(dim: usize, slot: usize) -> Self {
        let mut value = DVector::zeros(dim);
        value[slot] = 1.0;
        ConstantField { value }
    }
}

impl VectorField for ConstantField {
    fn dim(&self) -> usize {
        self.value.len()
    }
    fn eval(&self, _x: &DVector<f64>) -> DVector<f64> {
        self.value.clone()
    }
    fn gradient(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        let m = self.value.len();
        DMatrix::zeros(m, m)
    }
    fn grad_contract(&self, _x: &DVector<f64>, _dual: &DMatrix<f64>) -> f64 {
        0.0
    }
}

/// Finite linear combination `sum_i a_i X_i`.
#[derive(Clone)]
pub struct LinearCombination {
    dim: usize,
    terms: Vec<(f64, Arc<dyn VectorField>)>,
}

impl LinearCombination {
    pub fn new(dim: usize) -> Self {
        LinearCombination {
            dim,
            terms: Vec::new(),
        }
    }

    pub fn with(mut self, weight: f64, field: Arc<dyn VectorField>) -> Self {
        assert_eq!(field.dim(), self.dim, "field dimension mismatch");
        self.terms.push((weight, field));
        self
    }
}

impl VectorField for LinearCombination {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        for (w, f) in &self.terms {
            out.axpy(*w, &f.eval(x), 1.0);
        }
        out
    }
    fn gradient(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, self.dim);
        for (w, f) in &self.terms {
            out += f.gradient(x) * *w;
        }
        out
    }
    fn grad_contract(&self, x: &DVector<f64>, dual: &DMatrix<f64>) -> f64 {
        self.terms
            .iter()
            .map(|(w, f)| w * f.grad_contract(x, dual))
            .sum()
    }
}
