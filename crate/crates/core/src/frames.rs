//! Orbit sampling and the unstable frame / adjoint coframe along an orbit.
//!
//! The unstable frame `e_k` is obtained by pushing a random orthonormal
//! `M×u` matrix forward with QR renormalization; the adjoint coframe is
//! obtained by pulling a second random matrix backward with `df_kᵀ`, which
//! aligns it with the annihilator of the stable subspace, and then
//! re-normalizing so that `eps_kᵀ e_k = I`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::MapModel;
use crate::error::{Error, Result};

/// Smallest admissible `|R_ii|` in the forward QR sweep.
pub const DEGENERATE_FRAME_TOL: f64 = 1e-13;
/// Largest admissible condition number of `e_kᵀ w_k`.
pub const TANGENCY_COND: f64 = 1e12;
pub const DEFAULT_FRAME_WARMUP: usize = 100;

/// A recorded trajectory with cached Jacobians and observable values.
#[derive(Clone, Debug)]
pub struct Orbit {
    pub states: Vec<DVector<f64>>,
    pub jacobians: Vec<DMatrix<f64>>,
    pub phi: Vec<f64>,
    pub warmup: usize,
    pub seed: u64,
}

impl Orbit {
    /// Assembles an orbit from externally computed data.
    pub fn from_parts(
        states: Vec<DVector<f64>>,
        jacobians: Vec<DMatrix<f64>>,
        phi: Vec<f64>,
    ) -> Result<Self> {
        if states.is_empty() || states.len() != jacobians.len() || states.len() != phi.len() {
            return Err(Error::config("orbit parts must be non-empty and of equal length"));
        }
        let m = states[0].len();
        if states.iter().any(|x| x.len() != m)
            || jacobians.iter().any(|j| j.nrows() != m || j.ncols() != m)
        {
            return Err(Error::config("inconsistent state or Jacobian dimensions"));
        }
        Ok(Orbit {
            states,
            jacobians,
            phi,
            warmup: 0,
            seed: 0,
        })
    }

    /// A trajectory sitting at a fixed point of a map with constant Jacobian.
    pub fn fixed_point(point: DVector<f64>, jacobian: DMatrix<f64>, len: usize) -> Self {
        Orbit {
            states: vec![point; len],
            jacobians: vec![jacobian; len],
            phi: vec![0.0; len],
            warmup: 0,
            seed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    /// Largest `‖x_{k+1} − step(x_k)‖_∞` along the orbit, with the difference
    /// of wrapped coordinates taken on the circle.
    pub fn consistency_error(&self, model: &dyn MapModel) -> f64 {
        self.states
            .windows(2)
            .map(|w| {
                let d = model.step(&w[0]) - &w[1];
                d.map(|v| v - v.round()).amax()
            })
            .fold(0.0, f64::max)
    }
}

/// Samples `n_segments × seg_len` states of `model` after `warmup` discarded
/// steps, starting from a seeded uniform initial condition.
pub fn generate_orbit(
    model: &dyn MapModel,
    n_segments: usize,
    seg_len: usize,
    warmup: usize,
    seed: u64,
) -> Result<Orbit> {
    if n_segments == 0 || seg_len == 0 {
        return Err(Error::config("n_segments and seg_len must be positive"));
    }
    let len = n_segments * seg_len;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = model.sample_initial(&mut rng);
    for step in 0..warmup {
        x = model.step(&x);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::DivergedOrbit { step });
        }
    }
    let mut states = Vec::with_capacity(len);
    let mut jacobians = Vec::with_capacity(len);
    let mut phi = Vec::with_capacity(len);
    for k in 0..len {
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::DivergedOrbit { step: warmup + k });
        }
        jacobians.push(model.jacobian(&x));
        phi.push(model.observable(&x));
        let next = model.step(&x);
        states.push(x);
        x = next;
    }
    Ok(Orbit {
        states,
        jacobians,
        phi,
        warmup,
        seed,
    })
}

/// Writes the orbit cache format:
///
/// ```text
/// M,u,T,seed
/// <M>,<u>,<T>,<seed>
/// x1,..,xM,J11,J12,..,JMM,phi      (T rows, Jacobian row-major)
/// ```
pub fn write_orbit_csv(orbit: &Orbit, unstable_dim: usize, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let m = orbit.dim();
    let mut out = || -> std::io::Result<()> {
        writeln!(w, "M,u,T,seed")?;
        writeln!(w, "{},{},{},{}", m, unstable_dim, orbit.len(), orbit.seed)?;
        for k in 0..orbit.len() {
            let mut row: Vec<String> = orbit.states[k].iter().map(|v| v.to_string()).collect();
            let j = &orbit.jacobians[k];
            for r in 0..m {
                for c in 0..m {
                    row.push(j[(r, c)].to_string());
                }
            }
            row.push(orbit.phi[k].to_string());
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()
    };
    out().map_err(|e| Error::io(path, e))
}

/// Reads an orbit written by [`write_orbit_csv`]; returns the orbit and `u`.
pub fn read_orbit_csv(path: &Path) -> Result<(Orbit, usize)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line: line + 1,
        message,
    };
    let next_line = |lines: &mut dyn Iterator<Item = (usize, std::io::Result<String>)>| {
        lines
            .next()
            .map(|(i, l)| l.map(|l| (i, l)).map_err(|e| Error::io(path, e)))
            .transpose()
    };
    let (_, head) = next_line(&mut lines)?.ok_or_else(|| parse_err(0, "empty file".into()))?;
    if head.trim() != "M,u,T,seed" {
        return Err(parse_err(0, format!("unexpected header `{head}`")));
    }
    let (i, meta) = next_line(&mut lines)?.ok_or_else(|| parse_err(1, "missing metadata".into()))?;
    let meta: Vec<u64> = meta
        .split(',')
        .map(|s| s.trim().parse::<u64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| parse_err(i, e.to_string()))?;
    let [m, u, t, seed] = meta[..] else {
        return Err(parse_err(i, "expected 4 metadata fields".into()));
    };
    let (m, u, t) = (m as usize, u as usize, t as usize);
    let mut states = Vec::with_capacity(t);
    let mut jacobians = Vec::with_capacity(t);
    let mut phi = Vec::with_capacity(t);
    while let Some((i, line)) = next_line(&mut lines)? {
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(i, e.to_string()))?;
        if vals.len() != m + m * m + 1 {
            return Err(parse_err(i, format!("expected {} fields", m + m * m + 1)));
        }
        states.push(DVector::from_column_slice(&vals[..m]));
        jacobians.push(DMatrix::from_row_slice(m, m, &vals[m..m + m * m]));
        phi.push(vals[m + m * m]);
    }
    if states.len() != t {
        return Err(parse_err(1, format!("header says T={t}, found {} rows", states.len())));
    }
    let mut orbit = Orbit::from_parts(states, jacobians, phi)?;
    orbit.seed = seed;
    Ok((orbit, u))
}

/// Thin QR with a non-negative diagonal of `R`.
pub(crate) fn qr_positive(a: DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let qr = a.qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for i in 0..r.nrows() {
        if r[(i, i)] < 0.0 {
            q.column_mut(i).neg_mut();
            r.row_mut(i).neg_mut();
        }
    }
    (q, r)
}

fn random_orthonormal(m: usize, u: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(m, u, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    qr_positive(a).0
}

/// Forward unstable frames together with the per-step unstable volume growth.
#[derive(Clone, Debug)]
pub struct UnstableFrames {
    /// Orthonormal `M×u` basis of the unstable subspace at each step.
    pub e: Vec<DMatrix<f64>>,
    /// `log |det R_k|` where `df_k e_k = e_{k+1} R_k`, for `k < T − 1`.
    pub log_stretch: Vec<f64>,
}

/// Pushes a seeded random orthonormal frame forward along the orbit,
/// renormalizing by QR with positive diagonal at every step.
pub fn unstable_frame(
    orbit: &Orbit,
    u: usize,
    frame_warmup: usize,
    seed: u64,
) -> Result<UnstableFrames> {
    let m = orbit.dim();
    if u == 0 || u > m {
        return Err(Error::config(format!("unstable dimension {u} must be in 1..={m}")));
    }
    let t = orbit.len();
    if t <= 2 * frame_warmup {
        return Err(Error::config(format!(
            "orbit of length {t} too short for frame warmup {frame_warmup}"
        )));
    }
    let mut e = Vec::with_capacity(t);
    let mut log_stretch = Vec::with_capacity(t.saturating_sub(1));
    e.push(random_orthonormal(m, u, seed));
    for k in 0..t - 1 {
        let pushed = &orbit.jacobians[k] * &e[k];
        let (q, r) = qr_positive(pushed);
        if let Some(value) = (0..u).map(|i| r[(i, i)]).find(|d| d.abs() < DEGENERATE_FRAME_TOL) {
            return Err(Error::DegenerateFrame { step: k + 1, value });
        }
        e.push(q);
        log_stretch.push((0..u).map(|i| r[(i, i)].ln()).sum());
    }
    Ok(UnstableFrames { e, log_stretch })
}

/// Cheap 1-norm condition estimate of a small square matrix.
fn condition_1(a: &DMatrix<f64>) -> f64 {
    let norm1 = |m: &DMatrix<f64>| {
        m.column_iter()
            .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    match a.clone().try_inverse() {
        Some(inv) => norm1(a) * norm1(&inv),
        None => f64::INFINITY,
    }
}

/// Pulls a seeded random frame backward with `df_kᵀ` and returns the
/// coframes `eps_k` satisfying `eps_kᵀ e_k = I`.
///
/// Steps in `[frame_warmup, T − frame_warmup)` are checked for tangency;
/// transient steps where the pairing is singular get a zero coframe.
pub fn adjoint_frame(
    orbit: &Orbit,
    e: &[DMatrix<f64>],
    frame_warmup: usize,
    seed: u64,
) -> Result<Vec<DMatrix<f64>>> {
    let t = orbit.len();
    if e.len() != t {
        return Err(Error::config("frames and orbit differ in length"));
    }
    let m = orbit.dim();
    let u = e[0].ncols();
    let retained = frame_warmup..t.saturating_sub(frame_warmup);
    let mut eps = vec![DMatrix::zeros(m, u); t];
    let mut w = random_orthonormal(m, u, seed);
    for k in (0..t).rev() {
        if k + 1 < t {
            w = qr_positive(orbit.jacobians[k].transpose() * &w).0;
        }
        let pairing = e[k].transpose() * &w;
        if retained.contains(&k) {
            let condition = condition_1(&pairing);
            if !(condition <= TANGENCY_COND) {
                return Err(Error::Tangency { step: k, condition });
            }
        }
        if let Some(inv) = pairing.try_inverse() {
            eps[k] = &w * inv;
        }
    }
    Ok(eps)
}

/// Unstable frames and adjoint coframes on one orbit.
#[derive(Clone, Debug)]
pub struct FrameBundle {
    pub e: Vec<DMatrix<f64>>,
    pub eps: Vec<DMatrix<f64>>,
    pub log_stretch: Vec<f64>,
    pub frame_warmup: usize,
}

impl FrameBundle {
    /// Runs the forward and backward sweeps. The backward sweep draws its
    /// initial frame from a stream derived from `seed`.
    pub fn compute(orbit: &Orbit, u: usize, frame_warmup: usize, seed: u64) -> Result<Self> {
        let fwd = unstable_frame(orbit, u, frame_warmup, seed)?;
        let eps = adjoint_frame(orbit, &fwd.e, frame_warmup, seed ^ 0x9e37_79b9_7f4a_7c15)?;
        Ok(FrameBundle {
            e: fwd.e,
            eps,
            log_stretch: fwd.log_stretch,
            frame_warmup,
        })
    }

    pub fn len(&self) -> usize {
        self.e.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e.is_empty()
    }

    pub fn unstable_dim(&self) -> usize {
        self.e[0].ncols()
    }

    /// Steps where both sweeps have converged.
    pub fn retained(&self) -> Range<usize> {
        self.frame_warmup..self.len().saturating_sub(self.frame_warmup)
    }

    /// `max_k ‖eps_kᵀ e_k − I‖_∞` over `range`.
    pub fn duality_residual(&self, range: Range<usize>) -> f64 {
        let u = self.unstable_dim();
        let id = DMatrix::<f64>::identity(u, u);
        range
            .map(|k| (self.eps[k].transpose() * &self.e[k] - &id).amax())
            .fold(0.0, f64::max)
    }

    /// Largest sine of the principal angle between `span(e_{k+1})` and
    /// `span(df_k e_k)` over `range`.
    pub fn equivariance_residual(&self, orbit: &Orbit, range: Range<usize>) -> f64 {
        range
            .filter(|&k| k + 1 < self.len())
            .map(|k| {
                let pushed = qr_positive(&orbit.jacobians[k] * &self.e[k]).0;
                subspace_angle(&self.e[k + 1], &pushed)
            })
            .fold(0.0, f64::max)
    }
}

/// Sine of the largest principal angle between the column spans of two
/// matrices with orthonormal columns.
pub fn subspace_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let resid = b - a * (a.transpose() * b);
    // spectral norm of the residual = sin of the largest principal angle
    resid.singular_values().iter().copied().fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::make_model;

    fn cat_orbit(len: usize) -> Orbit {
        Orbit::fixed_point(
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]),
            len,
        )
    }

    #[test]
    fn same_seed_same_orbit() {
        let m = make_model("solenoid2d").unwrap();
        let a = generate_orbit(m.as_ref(), 5, 20, 100, 42).unwrap();
        let b = generate_orbit(m.as_ref(), 5, 20, 100, 42).unwrap();
        assert_eq!(a.len(), 100);
        for (x, y) in a.states.iter().zip(&b.states) {
            assert_eq!(x, y);
        }
        assert!(a.consistency_error(m.as_ref()) < 1e-12);
    }

    #[test]
    fn contracting_coordinate_stays_in_band() {
        let m = make_model("solenoid2d").unwrap();
        let orbit = generate_orbit(m.as_ref(), 100, 20, 100, 3).unwrap();
        // |x¹| ≤ 0.01/(1 − 0.5) once the initial condition has been forgotten
        let band = 0.01 / (1.0 - 0.5) + 1e-12;
        assert!(orbit.states.iter().all(|x| x[0].abs() <= band));
        // the looser bound from the initial box also holds
        assert!(orbit.states.iter().all(|x| x[0].abs() <= 0.5 * 0.5 / 0.5 + 0.01 / 0.5));
    }

    #[test]
    fn zero_counts_rejected() {
        let m = make_model("solenoid2d").unwrap();
        assert!(matches!(
            generate_orbit(m.as_ref(), 0, 20, 10, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn diagonal_fixed_point_frames() {
        let orbit = Orbit::fixed_point(
            DVector::zeros(2),
            DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5])),
            300,
        );
        let fb = FrameBundle::compute(&orbit, 1, 100, 9).unwrap();
        for k in fb.retained() {
            assert!((fb.e[k][(0, 0)].abs() - 1.0).abs() < 1e-12);
            assert!(fb.e[k][(1, 0)].abs() < 1e-12);
            assert!((fb.eps[k][(0, 0)] * fb.e[k][(0, 0)] - 1.0).abs() < 1e-12);
            assert!(fb.eps[k][(1, 0)].abs() < 1e-12);
        }
    }

    #[test]
    fn cat_map_frame_is_leading_eigenvector() {
        let fb = FrameBundle::compute(&cat_orbit(300), 1, 100, 4).unwrap();
        let lam = (3.0 + 5f64.sqrt()) / 2.0;
        // eigenvector of [[2,1],[1,1]] for lam is (1, lam − 2)
        let v = DVector::from_vec(vec![1.0, lam - 2.0]).normalize();
        for k in fb.retained() {
            let c = fb.e[k].column(0).dot(&v).abs();
            assert!((c - 1.0).abs() < 1e-12);
        }
        assert!(fb.duality_residual(fb.retained()) < 1e-12);
    }

    #[test]
    fn full_rank_frames_are_self_dual() {
        let orbit = cat_orbit(250);
        let fb = FrameBundle::compute(&orbit, 2, 100, 4).unwrap();
        for k in fb.retained() {
            let g = fb.e[k].transpose() * &fb.e[k];
            assert!((g - DMatrix::<f64>::identity(2, 2)).amax() < 1e-12);
            assert!((&fb.eps[k] - &fb.e[k]).amax() < 1e-10);
        }
    }

    #[test]
    fn solenoid_frames_satisfy_duality_and_equivariance() {
        for name in ["solenoid2d", "solenoid3d"] {
            let m = make_model(name).unwrap();
            let orbit = generate_orbit(m.as_ref(), 50, 20, 200, 8).unwrap();
            let fb = FrameBundle::compute(&orbit, m.unstable_dim(), 100, 2).unwrap();
            assert!(fb.duality_residual(fb.retained()) < 1e-10);
            assert!(fb.equivariance_residual(&orbit, fb.retained()) < 1e-8);
        }
    }

    #[test]
    fn frame_seed_independence() {
        let m = make_model("solenoid3d").unwrap();
        let orbit = generate_orbit(m.as_ref(), 30, 20, 200, 8).unwrap();
        let a = FrameBundle::compute(&orbit, 2, 100, 1).unwrap();
        let b = FrameBundle::compute(&orbit, 2, 100, 77).unwrap();
        for k in a.retained() {
            assert!(subspace_angle(&a.e[k], &b.e[k]) < 1e-6);
            assert!(subspace_angle(&qr_positive(a.eps[k].clone()).0, &qr_positive(b.eps[k].clone()).0) < 1e-6);
        }
    }

    #[test]
    fn coframe_annihilates_stable_direction() {
        let m = make_model("solenoid2d").unwrap();
        let orbit = generate_orbit(m.as_ref(), 20, 20, 200, 5).unwrap();
        let fb = FrameBundle::compute(&orbit, 1, 100, 3).unwrap();
        // stable direction at k: pull a vector back from k+60 with df⁻¹, which
        // converges onto V^s
        let k = 150;
        let mut s = DVector::from_vec(vec![0.3, 0.7]);
        for j in (k..k + 60).rev() {
            s = orbit.jacobians[j].clone().lu().solve(&s).unwrap();
            s.normalize_mut();
        }
        assert!((fb.eps[k].transpose() * s).amax() < 1e-6);
    }

    #[test]
    fn orbit_csv_round_trip() {
        let m = make_model("solenoid2d").unwrap();
        let orbit = generate_orbit(m.as_ref(), 3, 4, 10, 12).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("orbit.csv");
        write_orbit_csv(&orbit, 1, &path).unwrap();
        let (back, u) = read_orbit_csv(&path).unwrap();
        assert_eq!(u, 1);
        assert_eq!(back.seed, 12);
        assert_eq!(back.states, orbit.states);
        assert_eq!(back.jacobians, orbit.jacobians);
        assert_eq!(back.phi, orbit.phi);
    }
}
