//! Hyperbolic maps on the torus and their additive perturbations.
//!
//! A [`MapModel`] bundles the map, its first and second derivatives, the
//! observable whose long-time average is being differentiated, and the
//! observable's gradient. The three solenoid-like benchmarks share one
//! parametric family, [`Solenoid`]:
//!
//! ```text
//! x¹ ↦ a·x¹ + 0.01 Σ_{i≥2} cos(2π xⁱ)
//! xⁱ ↦ 2xⁱ + 0.1·x¹·sin(2π xⁱ)  (mod 1),   i ≥ 2
//! ```
//!
//! The contracting coordinate `x¹` is never wrapped; only the expanding
//! coordinates are taken mod 1.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::field::VectorField;

const TWO_PI: f64 = 2.0 * PI;

/// A diffeomorphism of (a neighbourhood of the attractor in) the torus.
pub trait MapModel: Send + Sync {
    fn name(&self) -> &str;

    /// Phase-space dimension `M`.
    fn dim(&self) -> usize;

    /// Unstable dimension `u`.
    fn unstable_dim(&self) -> usize;

    /// `f(x)` before any coordinate wrapping.
    fn image(&self, x: &DVector<f64>) -> DVector<f64>;

    /// Reduces wrapped coordinates to their fundamental domain.
    fn wrap(&self, x: &mut DVector<f64>);

    fn step(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = self.image(x);
        self.wrap(&mut y);
        y
    }

    /// `df_x` with `J[(i, l)] = ∂fⁱ/∂xˡ`.
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;

    /// `D²f_x(a, b)`.
    fn second_derivative(
        &self,
        _x: &DVector<f64>,
        _a: &DVector<f64>,
        _b: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        Err(Error::Capability("second derivatives"))
    }

    /// The covector `Y ↦ wᵀ D²f_x(a, Y)`.
    ///
    /// The default walks the coordinate directions through
    /// [`second_derivative`](Self::second_derivative); models with sparse
    /// second derivatives should override it.
    fn hessian_contract(
        &self,
        x: &DVector<f64>,
        w: &DVector<f64>,
        a: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let m = self.dim();
        let mut out = DVector::zeros(m);
        let mut dir = DVector::zeros(m);
        for l in 0..m {
            dir[l] = 1.0;
            out[l] = w.dot(&self.second_derivative(x, a, &dir)?);
            dir[l] = 0.0;
        }
        Ok(out)
    }

    fn observable(&self, x: &DVector<f64>) -> f64;

    fn observable_gradient(&self, x: &DVector<f64>) -> DVector<f64>;

    /// Initial condition for orbit sampling, uniform on the fundamental domain.
    fn sample_initial(&self, rng: &mut dyn RngCore) -> DVector<f64> {
        DVector::from_fn(self.dim(), |_, _| rng.random::<f64>())
    }
}

/// The three benchmark systems.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Benchmark {
    Solenoid2d,
    Solenoid3d,
    Solenoid21d,
}

impl Benchmark {
    pub const ALL: [Benchmark; 3] = [
        Benchmark::Solenoid2d,
        Benchmark::Solenoid3d,
        Benchmark::Solenoid21d,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Benchmark::Solenoid2d => "solenoid2d",
            Benchmark::Solenoid3d => "solenoid3d",
            Benchmark::Solenoid21d => "solenoid21d",
        }
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Benchmark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Benchmark::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown model `{s}`")))
    }
}

/// Observable `c·(x¹)^k + w·Σ_{i≥2} (xⁱ − 0.5)²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolenoidObservable {
    pub power: i32,
    pub quad_weight: f64,
}

/// The solenoid-like family shared by all benchmarks.
///
/// The quadratic part of the observable acts on the expanding coordinates
/// only; in two dimensions `Φ(x) = (x¹)³ + 0.5 (x² − 0.5)²`.
#[derive(Clone, Debug)]
pub struct Solenoid {
    name: String,
    dim: usize,
    contraction: f64,
    observable: SolenoidObservable,
}

impl Solenoid {
    const COS_COUPLING: f64 = 0.01;
    const SIN_COUPLING: f64 = 0.1;

    pub fn new(
        name: impl Into<String>,
        dim: usize,
        contraction: f64,
        observable: SolenoidObservable,
    ) -> Self {
        assert!(dim >= 2, "solenoid needs at least one expanding coordinate");
        Solenoid {
            name: name.into(),
            dim,
            contraction,
            observable,
        }
    }

    pub fn benchmark(which: Benchmark) -> Self {
        let cubic = SolenoidObservable {
            power: 3,
            quad_weight: 0.5,
        };
        match which {
            Benchmark::Solenoid2d => Solenoid::new(which.as_str(), 2, 0.5, cubic),
            Benchmark::Solenoid3d => Solenoid::new(which.as_str(), 3, 0.5, cubic),
            Benchmark::Solenoid21d => Solenoid::new(
                which.as_str(),
                21,
                0.1,
                SolenoidObservable {
                    power: 1,
                    quad_weight: 2.0,
                },
            ),
        }
    }

    pub fn contraction(&self) -> f64 {
        self.contraction
    }
}

impl MapModel for Solenoid {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn unstable_dim(&self) -> usize {
        self.dim - 1
    }

    fn image(&self, x: &DVector<f64>) -> DVector<f64> {
        let x1 = x[0];
        let mut y = DVector::zeros(self.dim);
        let mut acc = 0.0;
        for i in 1..self.dim {
            let (s, c) = (TWO_PI * x[i]).sin_cos();
            acc += c;
            y[i] = 2.0 * x[i] + Self::SIN_COUPLING * x1 * s;
        }
        y[0] = self.contraction * x1 + Self::COS_COUPLING * acc;
        y
    }

    fn wrap(&self, x: &mut DVector<f64>) {
        for i in 1..self.dim {
            x[i] = x[i].rem_euclid(1.0);
        }
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let x1 = x[0];
        let mut j = DMatrix::zeros(self.dim, self.dim);
        j[(0, 0)] = self.contraction;
        for i in 1..self.dim {
            let (s, c) = (TWO_PI * x[i]).sin_cos();
            j[(0, i)] = -Self::COS_COUPLING * TWO_PI * s;
            j[(i, 0)] = Self::SIN_COUPLING * s;
            j[(i, i)] = 2.0 + Self::SIN_COUPLING * x1 * TWO_PI * c;
        }
        j
    }

    fn second_derivative(
        &self,
        x: &DVector<f64>,
        a: &DVector<f64>,
        b: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let x1 = x[0];
        let k2 = TWO_PI * TWO_PI;
        let mut out = DVector::zeros(self.dim);
        let mut first = 0.0;
        for i in 1..self.dim {
            let (s, c) = (TWO_PI * x[i]).sin_cos();
            first -= Self::COS_COUPLING * k2 * c * a[i] * b[i];
            out[i] = Self::SIN_COUPLING * TWO_PI * c * (a[0] * b[i] + a[i] * b[0])
                - Self::SIN_COUPLING * x1 * k2 * s * a[i] * b[i];
        }
        out[0] = first;
        Ok(out)
    }

    fn hessian_contract(
        &self,
        x: &DVector<f64>,
        w: &DVector<f64>,
        a: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let x1 = x[0];
        let k2 = TWO_PI * TWO_PI;
        let mut out = DVector::zeros(self.dim);
        let mut first = 0.0;
        for i in 1..self.dim {
            let (s, c) = (TWO_PI * x[i]).sin_cos();
            first += w[i] * Self::SIN_COUPLING * TWO_PI * c * a[i];
            out[i] = -w[0] * Self::COS_COUPLING * k2 * c * a[i]
                + w[i]
                    * (Self::SIN_COUPLING * TWO_PI * c * a[0]
                        - Self::SIN_COUPLING * x1 * k2 * s * a[i]);
        }
        out[0] = first;
        Ok(out)
    }

    fn observable(&self, x: &DVector<f64>) -> f64 {
        let obs = self.observable;
        let quad: f64 = (1..self.dim).map(|i| (x[i] - 0.5).powi(2)).sum();
        x[0].powi(obs.power) + obs.quad_weight * quad
    }

    fn observable_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let obs = self.observable;
        let mut g = DVector::zeros(self.dim);
        g[0] = f64::from(obs.power) * x[0].powi(obs.power - 1);
        for i in 1..self.dim {
            g[i] = 2.0 * obs.quad_weight * (x[i] - 0.5);
        }
        g
    }

    fn sample_initial(&self, rng: &mut dyn RngCore) -> DVector<f64> {
        DVector::from_fn(self.dim, |i, _| {
            let r = rng.random::<f64>();
            if i == 0 {
                r - 0.5
            } else {
                r
            }
        })
    }
}

type Constructor = Box<dyn Fn() -> Arc<dyn MapModel> + Send + Sync>;

/// Name → constructor table for maps reachable from configuration files.
pub struct ModelRegistry {
    entries: BTreeMap<String, Constructor>,
}

impl ModelRegistry {
    pub fn empty() -> Self {
        ModelRegistry {
            entries: BTreeMap::new(),
        }
    }

    /// Registry holding the three benchmarks.
    pub fn with_benchmarks() -> Self {
        let mut reg = Self::empty();
        for b in Benchmark::ALL {
            reg.register(b.as_str(), move || Arc::new(Solenoid::benchmark(b)));
        }
        reg
    }

    pub fn register<F>(&mut self, name: &str, ctor: F)
    where
        F: Fn() -> Arc<dyn MapModel> + Send + Sync + 'static,
    {
        self.entries.insert(name.to_owned(), Box::new(ctor));
    }

    pub fn make(&self, name: &str) -> Result<Arc<dyn MapModel>> {
        self.entries
            .get(name)
            .map(|ctor| ctor())
            .ok_or_else(|| {
                let known: Vec<_> = self.entries.keys().map(String::as_str).collect();
                Error::config(format!(
                    "unknown model `{name}` (known: {})",
                    known.join(", ")
                ))
            })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// Builds one of the benchmark maps by name.
pub fn make_model(name: &str) -> Result<Arc<dyn MapModel>> {
    ModelRegistry::with_benchmarks().make(name)
}

/// The additively perturbed map `f_γ = f + γ·X′`.
#[derive(Clone)]
pub struct PerturbedModel {
    pub base: Arc<dyn MapModel>,
    pub gamma: f64,
    pub field: Arc<dyn VectorField>,
}

impl PerturbedModel {
    pub fn new(base: Arc<dyn MapModel>, gamma: f64, field: Arc<dyn VectorField>) -> Result<Self> {
        if field.dim() != base.dim() {
            return Err(Error::config(format!(
                "perturbation has dimension {} but the map has dimension {}",
                field.dim(),
                base.dim()
            )));
        }
        Ok(PerturbedModel { base, gamma, field })
    }

    /// `f(x) + γ X′(x)`, wrapped like the base map.
    pub fn perturbed_step(&self, x: &DVector<f64>) -> DVector<f64> {
        if self.gamma == 0.0 {
            return self.base.step(x);
        }
        let mut y = self.base.image(x);
        y.axpy(self.gamma, &self.field.eval(x), 1.0);
        self.base.wrap(&mut y);
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::ConstantField;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fd_jacobian(m: &dyn MapModel, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
        let n = m.dim();
        let mut j = DMatrix::zeros(n, n);
        for l in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[l] += h;
            xm[l] -= h;
            let col = (m.image(&xp) - m.image(&xm)) / (2.0 * h);
            j.set_column(l, &col);
        }
        j
    }

    fn random_point(m: &dyn MapModel, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let mut x = m.sample_initial(rng);
        x[0] *= 0.1;
        x
    }

    #[test]
    fn solenoid2d_at_origin() {
        let m = make_model("solenoid2d").unwrap();
        let y = m.step(&DVector::from_vec(vec![0.0, 0.0]));
        assert_eq!(y[0], 0.01);
        assert_eq!(y[1], 0.0);
    }

    #[test]
    fn solenoid2d_observable_hand_value() {
        let m = make_model("solenoid2d").unwrap();
        let phi = m.observable(&DVector::from_vec(vec![0.5, 1.0]));
        assert!((phi - 0.25).abs() < 1e-15);
    }

    #[test]
    fn benchmark_dimensions() {
        for (name, dim, u) in [("solenoid2d", 2, 1), ("solenoid3d", 3, 2), ("solenoid21d", 21, 20)] {
            let m = make_model(name).unwrap();
            assert_eq!(m.dim(), dim);
            assert_eq!(m.unstable_dim(), u);
        }
    }

    #[test]
    fn unknown_model_is_config_error() {
        let err = make_model("lorenz63").err().unwrap();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn contracting_coordinate_not_wrapped() {
        let m = make_model("solenoid2d").unwrap();
        let mut x = DVector::from_vec(vec![-0.3, 1.7]);
        m.wrap(&mut x);
        assert_eq!(x[0], -0.3);
        assert!((x[1] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for b in Benchmark::ALL {
            let m = Solenoid::benchmark(b);
            for _ in 0..100 {
                let x = random_point(&m, &mut rng);
                let j = m.jacobian(&x);
                let fd = fd_jacobian(&m, &x, 1e-5);
                let rel = (&j - &fd).norm() / j.norm();
                assert!(rel < 1e-5, "{b}: relative error {rel:e}");
            }
        }
    }

    #[test]
    fn second_derivatives_match_finite_differences_and_are_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        for b in Benchmark::ALL {
            let m = Solenoid::benchmark(b);
            let n = m.dim();
            for _ in 0..100 {
                let x = random_point(&m, &mut rng);
                let a = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
                let c = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
                let d2 = m.second_derivative(&x, &a, &c).unwrap();
                let d2t = m.second_derivative(&x, &c, &a).unwrap();
                assert!((&d2 - &d2t).amax() < 1e-12);
                let fd = (m.jacobian(&(&x + &c * h)) - m.jacobian(&(&x - &c * h))) * &a / (2.0 * h);
                let rel = (&d2 - &fd).norm() / d2.norm().max(1e-12);
                assert!(rel < 1e-4, "{b}: relative error {rel:e}");
            }
        }
    }

    #[test]
    fn hessian_contract_matches_generic_walk() {
        struct Generic(Solenoid);
        impl MapModel for Generic {
            fn name(&self) -> &str {
                "generic"
            }
            fn dim(&self) -> usize {
                self.0.dim()
            }
            fn unstable_dim(&self) -> usize {
                self.0.unstable_dim()
            }
            fn image(&self, x: &DVector<f64>) -> DVector<f64> {
                self.0.image(x)
            }
            fn wrap(&self, x: &mut DVector<f64>) {
                self.0.wrap(x)
            }
            fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
                self.0.jacobian(x)
            }
            fn second_derivative(
                &self,
                x: &DVector<f64>,
                a: &DVector<f64>,
                b: &DVector<f64>,
            ) -> Result<DVector<f64>> {
                self.0.second_derivative(x, a, b)
            }
            fn observable(&self, x: &DVector<f64>) -> f64 {
                self.0.observable(x)
            }
            fn observable_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
                self.0.observable_gradient(x)
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for b in Benchmark::ALL {
            let g = Generic(Solenoid::benchmark(b));
            let n = g.dim();
            for _ in 0..20 {
                let x = random_point(&g.0, &mut rng);
                let w = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
                let a = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
                let fast = g.0.hessian_contract(&x, &w, &a).unwrap();
                let slow = g.hessian_contract(&x, &w, &a).unwrap();
                assert!((&fast - &slow).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn observable_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-5;
        for b in Benchmark::ALL {
            let m = Solenoid::benchmark(b);
            for _ in 0..100 {
                let x = random_point(&m, &mut rng);
                let g = m.observable_gradient(&x);
                let fd = DVector::from_fn(m.dim(), |l, _| {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[l] += h;
                    xm[l] -= h;
                    (m.observable(&xp) - m.observable(&xm)) / (2.0 * h)
                });
                assert!((&g - &fd).norm() / g.norm() < 1e-5);
            }
        }
    }

    #[test]
    fn missing_second_derivative_is_capability_error() {
        struct Linear;
        impl MapModel for Linear {
            fn name(&self) -> &str {
                "linear"
            }
            fn dim(&self) -> usize {
                2
            }
            fn unstable_dim(&self) -> usize {
                1
            }
            fn image(&self, x: &DVector<f64>) -> DVector<f64> {
                x.clone()
            }
            fn wrap(&self, _x: &mut DVector<f64>) {}
            fn jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
                DMatrix::identity(2, 2)
            }
            fn observable(&self, _x: &DVector<f64>) -> f64 {
                0.0
            }
            fn observable_gradient(&self, _x: &DVector<f64>) -> DVector<f64> {
                DVector::zeros(2)
            }
        }
        let z = DVector::zeros(2);
        assert!(matches!(
            Linear.hessian_contract(&z, &z, &z),
            Err(Error::Capability(_))
        ));
    }

    #[test]
    fn zero_gamma_is_bit_identical() {
        let base = make_model("solenoid3d").unwrap();
        let field: Arc<dyn VectorField> =
            Arc::new(ConstantField::new(DVector::from_vec(vec![0.3, -0.2, 0.1])));
        let p = PerturbedModel::new(base.clone(), 0.0, field).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let x = base.sample_initial(&mut rng);
            let a = base.step(&x);
            let b = p.perturbed_step(&x);
            for i in 0..3 {
                assert_eq!(a[i].to_bits(), b[i].to_bits());
            }
        }
    }

    #[test]
    fn constant_shift_perturbation() {
        let base = make_model("solenoid2d").unwrap();
        let field: Arc<dyn VectorField> = Arc::new(ConstantField::unit(2, 0));
        let p = PerturbedModel::new(base.clone(), 0.1, field).unwrap();
        let x = DVector::zeros(2);
        let y = p.perturbed_step(&x);
        let y0 = base.step(&x);
        assert!((y[0] - (y0[0] + 0.1)).abs() < 1e-15);
        assert_eq!(y[1], y0[1]);
    }

    #[test]
    fn registry_accepts_user_models() {
        let mut reg = ModelRegistry::with_benchmarks();
        reg.register("wide", || {
            Arc::new(Solenoid::new(
                "wide",
                4,
                0.3,
                SolenoidObservable {
                    power: 1,
                    quad_weight: 1.0,
                },
            ))
        });
        assert_eq!(reg.make("wide").unwrap().unstable_dim(), 3);
        assert_eq!(reg.names().count(), 4);
    }
}
