//! Trigonometric vector-field basis on `T^M` and its weighted `H^p` norms.
//!
//! Scalar factors (with `κ(m) = ⌊(m+1)/2⌋`):
//!
//! ```text
//! b_0(x) = 1
//! b_m(x) = √2 sin(2π κ(m) x)   m odd
//! b_m(x) = √2 cos(2π κ(m) x)   m even, m > 0
//! ```
//!
//! and `B^j_n(x) = e_j Π_i b_{n_i}(x_i)`. Each `b_m` has unit `L²` norm on
//! the circle, and the `B^j_n` are mutually orthogonal in every weighted
//! `H^p` inner product `Σ_l C_l ∫ D^l X · D^l Y`.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::VectorField;

const TWO_PI: f64 = 2.0 * PI;

/// Splits `m` into `n_bits` base-`N` digits (most significant first)
/// preceded by the remaining quotient.
///
/// `int2vec(412, 15, 2) == [1, 12, 7]` because `412 = 1·225 + 12·15 + 7`.
pub fn int2vec(mut m: usize, base: usize, n_bits: usize) -> Vec<usize> {
    assert!(base >= 2, "base must be at least 2");
    let mut digits = vec![0; n_bits + 1];
    for slot in (1..=n_bits).rev() {
        digits[slot] = m % base;
        m /= base;
    }
    digits[0] = m;
    digits
}

/// Inverse of [`int2vec`].
pub fn vec2int(digits: &[usize], base: usize) -> usize {
    digits.iter().fold(0, |acc, &d| acc * base + d)
}

/// Frequency `⌊(m+1)/2⌋` of the scalar factor `b_m`.
#[inline]
pub fn frequency(m: usize) -> usize {
    m.div_ceil(2)
}

/// `b_m(x)`.
#[inline]
pub fn scalar_basis(m: usize, x: f64) -> f64 {
    if m == 0 {
        return 1.0;
    }
    let arg = TWO_PI * frequency(m) as f64 * x;
    if m % 2 == 1 {
        SQRT_2 * arg.sin()
    } else {
        SQRT_2 * arg.cos()
    }
}

/// `b_m'(x)`.
#[inline]
pub fn scalar_basis_deriv(m: usize, x: f64) -> f64 {
    if m == 0 {
        return 0.0;
    }
    let w = TWO_PI * frequency(m) as f64;
    if m % 2 == 1 {
        SQRT_2 * w * (w * x).cos()
    } else {
        -SQRT_2 * w * (w * x).sin()
    }
}

/// Basis label `(j, n⃗)`; `j` is 1-based.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FourierIndex {
    pub j: usize,
    pub n: Vec<usize>,
}

impl FourierIndex {
    pub fn new(j: usize, n: Vec<usize>) -> Self {
        assert!(j >= 1 && j <= n.len(), "slot j={j} out of 1..={}", n.len());
        FourierIndex { j, n }
    }

    pub fn dim(&self) -> usize {
        self.n.len()
    }

    /// `m = (j−1)·N^M + Σ_i n_i N^{M−1−i}`.
    pub fn to_flat(&self, base: usize) -> usize {
        let mut digits = Vec::with_capacity(self.n.len() + 1);
        digits.push(self.j - 1);
        digits.extend_from_slice(&self.n);
        vec2int(&digits, base)
    }

    pub fn from_flat(m: usize, dim: usize, base: usize) -> Self {
        let digits = int2vec(m, base, dim);
        FourierIndex {
            j: digits[0] + 1,
            n: digits[1..].to_vec(),
        }
    }

    /// `Π_i b_{n_i}(x_i)`.
    pub fn scalar(&self, x: &DVector<f64>) -> f64 {
        self.n
            .iter()
            .zip(x.iter())
            .map(|(&n, &xi)| scalar_basis(n, xi))
            .product()
    }

    /// Gradient of [`scalar`](Self::scalar).
    pub fn scalar_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let vals: Vec<f64> = self
            .n
            .iter()
            .zip(x.iter())
            .map(|(&n, &xi)| scalar_basis(n, xi))
            .collect();
        DVector::from_fn(self.n.len(), |l, _| {
            let mut g = scalar_basis_deriv(self.n[l], x[l]);
            if g == 0.0 {
                return 0.0;
            }
            for (i, v) in vals.iter().enumerate() {
                if i != l {
                    g *= v;
                }
            }
            g
        })
    }
}

impl fmt::Display for FourierIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n: Vec<String> = self.n.iter().map(|v| v.to_string()).collect();
        write!(f, "B{}({})", self.j, n.join(","))
    }
}

/// Weights `C_0..C_p` of the `H^p` inner product.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HpWeighting {
    pub weights: Vec<f64>,
}

impl HpWeighting {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || !(weights[0] > 0.0) {
            return Err(Error::config("H^p weights need C_0 > 0"));
        }
        if weights.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::config("H^p weights must be finite and non-negative"));
        }
        Ok(HpWeighting { weights })
    }

    /// `C_l = (2π)^{−2l}`, which turns every derivative factor `(2πκ)²` into `κ²`.
    pub fn two_pi_inverse(p: usize) -> Self {
        HpWeighting {
            weights: (0..=p).map(|l| TWO_PI.powi(-2 * l as i32)).collect(),
        }
    }

    pub fn order(&self) -> usize {
        self.weights.len() - 1
    }
}

/// `‖B^j_n‖²_{H^p} = Σ_l C_l Σ_{k⃗ ∈ {1..M}^l} Π_r (2π κ(n_{k_r}))²`.
///
/// The inner sum factorizes to `(Σ_i (2π κ(n_i))²)^l`.
pub fn hp_norm_sq(n: &[usize], weighting: &HpWeighting) -> f64 {
    let s: f64 = n
        .iter()
        .map(|&ni| (TWO_PI * frequency(ni) as f64).powi(2))
        .sum();
    weighting
        .weights
        .iter()
        .enumerate()
        .map(|(l, c)| c * s.powi(l as i32))
        .sum()
}

/// Unnormalized `B^j_n(x)`.
pub fn basis_eval(idx: &FourierIndex, x: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(idx.dim());
    out[idx.j - 1] = idx.scalar(x);
    out
}

/// `∂B̃^j_n/∂x`, normalized by the `H^p` norm; only row `j − 1` is nonzero.
pub fn basis_grad(idx: &FourierIndex, x: &DVector<f64>, weighting: &HpWeighting) -> DMatrix<f64> {
    let m = idx.dim();
    let inv_norm = hp_norm_sq(&idx.n, weighting).sqrt().recip();
    let g = idx.scalar_gradient(x);
    let mut out = DMatrix::zeros(m, m);
    for l in 0..m {
        out[(idx.j - 1, l)] = g[l] * inv_norm;
    }
    out
}

/// Unnormalized member `(b_n(x¹), b_n(x¹), 0, …, 0)` of the restricted
/// family, with its gradient (nonzero only in column 0).
pub fn restricted_basis(n: usize, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let m = x.len();
    assert!(m >= 2, "restricted family needs at least two coordinates");
    let v = scalar_basis(n, x[0]);
    let d = scalar_basis_deriv(n, x[0]);
    let mut value = DVector::zeros(m);
    value[0] = v;
    value[1] = v;
    let mut grad = DMatrix::zeros(m, m);
    grad[(0, 0)] = d;
    grad[(1, 0)] = d;
    (value, grad)
}

/// Label of a basis element in either family.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BasisLabel {
    Full(FourierIndex),
    Restricted(usize),
}

impl fmt::Display for BasisLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisLabel::Full(idx) => idx.fmt(f),
            BasisLabel::Restricted(n) => write!(f, "B({n})"),
        }
    }
}

/// Normalized basis element `B̃ = B/‖B‖_{H^p}` usable as a perturbation.
#[derive(Clone, Debug)]
pub struct BasisField {
    label: BasisLabel,
    dim: usize,
    inv_norm: f64,
}

impl BasisField {
    pub fn new(label: BasisLabel, dim: usize, weighting: &HpWeighting) -> Self {
        let n_sq = match &label {
            BasisLabel::Full(idx) => {
                assert_eq!(idx.dim(), dim, "index dimension mismatch");
                hp_norm_sq(&idx.n, weighting)
            }
            BasisLabel::Restricted(n) => hp_norm_sq(&[*n], weighting),
        };
        BasisField {
            label,
            dim,
            inv_norm: n_sq.sqrt().recip(),
        }
    }

    pub fn label(&self) -> &BasisLabel {
        &self.label
    }

    pub fn norm(&self) -> f64 {
        self.inv_norm.recip()
    }
}

impl VectorField for BasisField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.label {
            BasisLabel::Full(idx) => basis_eval(idx, x) * self.inv_norm,
            BasisLabel::Restricted(n) => restricted_basis(*n, x).0 * self.inv_norm,
        }
    }

    fn gradient(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match &self.label {
            BasisLabel::Full(idx) => {
                let mut out = DMatrix::zeros(self.dim, self.dim);
                let g = idx.scalar_gradient(x);
                for l in 0..self.dim {
                    out[(idx.j - 1, l)] = g[l] * self.inv_norm;
                }
                out
            }
            BasisLabel::Restricted(n) => restricted_basis(*n, x).1 * self.inv_norm,
        }
    }

    fn grad_contract(&self, x: &DVector<f64>, dual: &DMatrix<f64>) -> f64 {
        match &self.label {
            BasisLabel::Full(idx) => {
                let g = idx.scalar_gradient(x);
                let row = idx.j - 1;
                (0..self.dim).map(|l| g[l] * dual[(row, l)]).sum::<f64>() * self.inv_norm
            }
            BasisLabel::Restricted(n) => {
                scalar_basis_deriv(*n, x[0]) * (dual[(0, 0)] + dual[(1, 0)]) * self.inv_norm
            }
        }
    }
}

/// A truncated basis: the full tensor family `(j, n⃗ ∈ [0, N)^M)`, the
/// restricted one-parameter family, or an explicit subset of the former.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub dim: usize,
    /// Per-direction truncation `N`.
    pub truncation: usize,
    pub weighting: HpWeighting,
    pub family: BasisFamily,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BasisFamily {
    Full,
    Restricted,
    Subset(Vec<FourierIndex>),
}

impl BasisSpec {
    pub fn full(dim: usize, truncation: usize, weighting: HpWeighting) -> Self {
        BasisSpec {
            dim,
            truncation,
            weighting,
            family: BasisFamily::Full,
        }
    }

    pub fn restricted(dim: usize, truncation: usize, weighting: HpWeighting) -> Self {
        BasisSpec {
            dim,
            truncation,
            weighting,
            family: BasisFamily::Restricted,
        }
    }

    pub fn subset(dim: usize, truncation: usize, weighting: HpWeighting, indices: Vec<FourierIndex>) -> Self {
        BasisSpec {
            dim,
            truncation,
            weighting,
            family: BasisFamily::Subset(indices),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.truncation < 1 {
            return Err(Error::config("basis truncation N must be at least 1"));
        }
        if let BasisFamily::Subset(idx) = &self.family {
            for i in idx {
                if i.dim() != self.dim || i.j < 1 || i.j > self.dim {
                    return Err(Error::config(format!("basis index {i} does not fit dimension {}", self.dim)));
                }
                if i.n.iter().any(|&n| n >= self.truncation) {
                    return Err(Error::config(format!("basis index {i} exceeds truncation N={}", self.truncation)));
                }
            }
        }
        if matches!(self.family, BasisFamily::Restricted) && self.dim < 2 {
            return Err(Error::config("restricted family needs dimension ≥ 2"));
        }
        Ok(())
    }

    /// Number of basis elements.
    pub fn len(&self) -> usize {
        match &self.family {
            BasisFamily::Full => self.dim * self.truncation.pow(self.dim as u32),
            BasisFamily::Restricted => self.truncation,
            BasisFamily::Subset(idx) => idx.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Labels in flat-index order.
    pub fn labels(&self) -> Vec<BasisLabel> {
        match &self.family {
            BasisFamily::Full => (0..self.len())
                .map(|m| BasisLabel::Full(FourierIndex::from_flat(m, self.dim, self.truncation)))
                .collect(),
            BasisFamily::Restricted => (0..self.truncation).map(BasisLabel::Restricted).collect(),
            BasisFamily::Subset(idx) => idx.iter().cloned().map(BasisLabel::Full).collect(),
        }
    }

    pub fn field(&self, label: &BasisLabel) -> BasisField {
        BasisField::new(label.clone(), self.dim, &self.weighting)
    }

    pub fn norm_sq(&self, label: &BasisLabel) -> f64 {
        match label {
            BasisLabel::Full(idx) => hp_norm_sq(&idx.n, &self.weighting),
            BasisLabel::Restricted(n) => hp_norm_sq(&[*n], &self.weighting),
        }
    }
}

/// `b_n(x_i)` and `b_n'(x_i)` for all `n < N` and all coordinates at one point.
pub(crate) struct TrigTable {
    truncation: usize,
    values: Vec<f64>,
    derivs: Vec<f64>,
}

impl TrigTable {
    pub(crate) fn new(x: &DVector<f64>, truncation: usize) -> Self {
        let m = x.len();
        let mut values = vec![0.0; m * truncation];
        let mut derivs = vec![0.0; m * truncation];
        let top = frequency(truncation.saturating_sub(1));
        for i in 0..m {
            let row = i * truncation;
            values[row] = 1.0;
            let (s1, c1) = (TWO_PI * x[i]).sin_cos();
            let (mut s, mut c) = (s1, c1);
            for k in 1..=top {
                let w = TWO_PI * k as f64;
                for (n, v, d) in [(2 * k - 1, SQRT_2 * s, SQRT_2 * w * c), (2 * k, SQRT_2 * c, -SQRT_2 * w * s)] {
                    if n < truncation {
                        values[row + n] = v;
                        derivs[row + n] = d;
                    }
                }
                (s, c) = (s * c1 + c * s1, c * c1 - s * s1);
            }
        }
        TrigTable {
            truncation,
            values,
            derivs,
        }
    }

    #[inline]
    pub(crate) fn value(&self, coord: usize, n: usize) -> f64 {
        self.values[coord * self.truncation + n]
    }

    #[inline]
    pub(crate) fn deriv(&self, coord: usize, n: usize) -> f64 {
        self.derivs[coord * self.truncation + n]
    }
}
