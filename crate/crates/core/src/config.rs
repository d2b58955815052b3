//! Run configuration: a TOML file or a named preset.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::{make_model, Benchmark};
use crate::engine::EngineParams;
use crate::error::{Error, Result};
use crate::fourier::{BasisSpec, FourierIndex, HpWeighting};
use crate::verify::SweepParams;

/// Environment variable overriding `flags.parallel_workers`.
pub const WORKERS_ENV: &str = "OPTRESP_WORKERS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisMode {
    Full,
    Restricted,
    Subset,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightsConfig {
    /// Only `"2pi-inverse"`, i.e. `C_l = (2π)^{−2l}`.
    Preset(String),
    Explicit(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    pub mode: BasisMode,
    /// Per-direction truncation.
    #[serde(rename = "N")]
    pub n: usize,
    pub p: usize,
    #[serde(default = "default_weights")]
    pub weights: WeightsConfig,
    /// For `mode = "subset"`: entries `[j, n_1, …, n_M]`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub subset: Vec<Vec<usize>>,
}

fn default_weights() -> WeightsConfig {
    WeightsConfig::Preset("2pi-inverse".into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputsConfig {
    pub dir: PathBuf,
}

impl Default for OutputsConfig {
    fn default() -> Self {
        OutputsConfig {
            dir: PathBuf::from("out"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub gammas: Vec<f64>,
    pub n_replicas: usize,
    /// Averaged steps per replica.
    pub steps: usize,
    pub warmup: usize,
    pub batch_len: usize,
    pub tolerance_k: f64,
    /// Half-width of the central difference; smallest symmetric pair if absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        let s = SweepParams::default();
        VerifyConfig {
            gammas: s.gammas,
            n_replicas: s.n_replicas,
            steps: s.steps,
            warmup: s.warmup,
            batch_len: s.batch_len,
            tolerance_k: 3.0,
            h: None,
        }
    }
}

impl VerifyConfig {
    /// Sweep settings; replica seeds are offset from the engine seed so the
    /// sweep orbits are independent of the engine orbit.
    pub fn sweep_params(&self, engine_seed: u64) -> SweepParams {
        SweepParams {
            gammas: self.gammas.clone(),
            n_replicas: self.n_replicas,
            steps: self.steps,
            warmup: self.warmup,
            batch_len: self.batch_len,
            seed: engine_seed.wrapping_add(VERIFY_SEED_OFFSET),
        }
    }
}

/// Offset between the engine seed and the first sweep replica seed.
pub const VERIFY_SEED_OFFSET: u64 = 1_000_003;

/// Sampling grid for `X_opt`: one or two varying axes, one slice per base point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Zero-based coordinates that vary over the grid.
    pub axes: Vec<usize>,
    pub points: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Base points (full dimension) for the fixed coordinates; empty means all zeros.
    pub slices: Vec<Vec<f64>>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            axes: vec![0, 1],
            points: 21,
            lower: vec![-0.5, 0.0],
            upper: vec![0.5, 1.0],
            slices: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlagsConfig {
    /// `+1` or `−1`; kept configurable for debugging.
    pub unstable_sign: f64,
    /// Zero means one worker per core.
    pub parallel_workers: usize,
}

impl Default for FlagsConfig {
    fn default() -> Self {
        FlagsConfig {
            unstable_sign: crate::response::DEFAULT_UNSTABLE_SIGN,
            parallel_workers: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: String,
    pub basis: BasisConfig,
    #[serde(default)]
    pub engine: EngineParams,
    #[serde(default)]
    pub outputs: OutputsConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub flags: FlagsConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("invalid config: {e}")))?;
        cfg.engine.unstable_sign = cfg.flags.unstable_sign;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Settings of the three benchmark experiments.
    pub fn preset(name: &str) -> Result<Self> {
        let bench: Benchmark = name.parse()?;
        let full = |n, p| BasisConfig {
            mode: BasisMode::Full,
            n,
            p,
            weights: default_weights(),
            subset: Vec::new(),
        };
        let (basis, grid) = match bench {
            Benchmark::Solenoid2d => (full(15, 5), GridConfig::default()),
            Benchmark::Solenoid3d => (
                full(11, 5),
                GridConfig {
                    slices: vec![vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 0.5]],
                    ..GridConfig::default()
                },
            ),
            Benchmark::Solenoid21d => (
                BasisConfig {
                    mode: BasisMode::Restricted,
                    n: 21,
                    p: 4,
                    weights: default_weights(),
                    subset: Vec::new(),
                },
                GridConfig {
                    axes: vec![0],
                    points: 101,
                    lower: vec![-0.5],
                    upper: vec![0.5],
                    slices: Vec::new(),
                },
            ),
        };
        Ok(RunConfig {
            model: bench.as_str().to_string(),
            basis,
            engine: EngineParams::default(),
            outputs: OutputsConfig {
                dir: PathBuf::from(format!("out/{}", bench.as_str())),
            },
            verify: VerifyConfig::default(),
            grid,
            flags: FlagsConfig::default(),
        })
    }

    pub fn weighting(&self) -> Result<HpWeighting> {
        match &self.basis.weights {
            WeightsConfig::Preset(s) if s == "2pi-inverse" => {
                Ok(HpWeighting::two_pi_inverse(self.basis.p))
            }
            WeightsConfig::Preset(s) => Err(Error::config(format!(
                "basis.weights: unknown preset `{s}` (expected \"2pi-inverse\" or a list)"
            ))),
            WeightsConfig::Explicit(w) => {
                if w.len() != self.basis.p + 1 {
                    return Err(Error::config(format!(
                        "basis.weights: expected p + 1 = {} entries, got {}",
                        self.basis.p + 1,
                        w.len()
                    )));
                }
                HpWeighting::new(w.clone())
            }
        }
    }

    pub fn basis_spec(&self, dim: usize) -> Result<BasisSpec> {
        let w = self.weighting()?;
        let n = self.basis.n;
        let spec = match self.basis.mode {
            BasisMode::Full => BasisSpec::full(dim, n, w),
            BasisMode::Restricted => BasisSpec::restricted(dim, n, w),
            BasisMode::Subset => {
                let idx = self
                    .basis
                    .subset
                    .iter()
                    .map(|e| {
                        if e.len() != dim + 1 || e[0] == 0 || e[0] > dim {
                            return Err(Error::config(format!(
                                "basis.subset entry {e:?} must be [j, n_1..n_{dim}] with 1 ≤ j ≤ {dim}"
                            )));
                        }
                        Ok(FourierIndex::new(e[0], e[1..].to_vec()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                if idx.is_empty() {
                    return Err(Error::config("basis.subset must not be empty in subset mode"));
                }
                BasisSpec::subset(dim, n, w, idx)
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks every field and returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let model = make_model(&self.model)?;
        let dim = model.dim();
        self.engine.validate()?;
        self.verify.sweep_params(self.engine.seed).validate()?;
        if !(self.verify.tolerance_k > 0.0) {
            return Err(Error::config("verify.tolerance_k must be positive"));
        }
        self.basis_spec(dim)?;
        let g = &self.grid;
        if g.axes.is_empty() || g.axes.len() > 2 || g.axes.iter().any(|&a| a >= dim) {
            return Err(Error::config(format!("grid.axes must name one or two coordinates below {dim}")));
        }
        if g.lower.len() != g.axes.len() || g.upper.len() != g.axes.len() || g.points < 2 {
            return Err(Error::config("grid.lower/upper need one entry per axis and grid.points ≥ 2"));
        }
        if g.slices.iter().any(|s| s.len() != dim) {
            return Err(Error::config(format!("grid.slices entries need {dim} coordinates")));
        }
        let mut warnings = Vec::new();
        let morrey = 4 + dim / 2;
        if self.basis.mode != BasisMode::Restricted && self.basis.p < morrey {
            warnings.push(format!(
                "basis.p = {} is below 4 + ⌊M/2⌋ = {morrey}; H^p may not embed in C^3",
                self.basis.p
            ));
        }
        Ok(warnings)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_have_expected_sizes() {
        for (name, rows) in [("solenoid2d", 450), ("solenoid3d", 3993), ("solenoid21d", 21)] {
            let cfg = RunConfig::preset(name).unwrap();
            assert!(cfg.validate().unwrap().is_empty(), "{name}");
            let m = make_model(name).unwrap();
            assert_eq!(cfg.basis_spec(m.dim()).unwrap().len(), rows);
        }
    }

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::preset("solenoid3d").unwrap();
        let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn minimal_file_uses_defaults() {
        let cfg = RunConfig::from_toml_str(
            "model = \"solenoid2d\"\n[basis]\nmode = \"full\"\nN = 3\np = 5\n",
        )
        .unwrap();
        assert_eq!(cfg.engine, EngineParams::default());
        assert_eq!(cfg.verify.tolerance_k, 3.0);
        assert_eq!(cfg.weighting().unwrap(), HpWeighting::two_pi_inverse(5));
    }

    #[test]
    fn unknown_field_is_rejected() {
        let err = RunConfig::from_toml_str(
            "model = \"solenoid2d\"\n[basis]\nmode = \"full\"\nN = 3\np = 5\n[engine]\nsegments = 3\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("segments"));
    }

    #[test]
    fn low_p_warns_but_proceeds() {
        let mut cfg = RunConfig::preset("solenoid2d").unwrap();
        cfg.basis.p = 3;
        let w = cfg.validate().unwrap();
        assert_eq!(w.len(), 1);
        assert!(w[0].contains("basis.p"));
    }

    #[test]
    fn explicit_weights_length_checked() {
        let mut cfg = RunConfig::preset("solenoid2d").unwrap();
        cfg.basis.weights = WeightsConfig::Explicit(vec![1.0, 0.5]);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.basis.weights = WeightsConfig::Preset("sobolev".into());
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn subset_entries_parsed() {
        let mut cfg = RunConfig::preset("solenoid2d").unwrap();
        cfg.basis.mode = BasisMode::Subset;
        cfg.basis.subset = vec![vec![2, 0, 3], vec![1, 14, 14]];
        let spec = cfg.basis_spec(2).unwrap();
        assert_eq!(spec.len(), 2);
        cfg.basis.subset = vec![vec![3, 0, 3]];
        assert!(cfg.basis_spec(2).is_err());
    }
}
