//! CSV and JSON artifacts. Every CSV has a header row and prints floats with
//! the shortest representation that round-trips exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{GridConfig, RunConfig};
use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::fourier::{BasisLabel, BasisSpec, FourierIndex};
use crate::optimal::{CoefficientEntry, CoefficientTable};
use crate::response::ResponseBreakdown;
use crate::verify::SweepResult;

fn write_rows(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let out = || -> std::io::Result<()> {
        writeln!(w, "{}", header.join(","))?;
        for row in rows {
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()
    };
    out().map_err(|e| Error::io(path, e))
}

fn label_columns(dim: usize, restricted: bool) -> Vec<String> {
    let n = if restricted { 1 } else { dim };
    std::iter::once("j".to_string())
        .chain((1..=n).map(|i| format!("n{i}")))
        .collect()
}

/// `j` and `n⃗` as CSV fields; the restricted family uses `j = 0, n1 = n`.
fn label_fields(label: &BasisLabel) -> Vec<String> {
    match label {
        BasisLabel::Full(idx) => std::iter::once(idx.j.to_string())
            .chain(idx.n.iter().map(|n| n.to_string()))
            .collect(),
        BasisLabel::Restricted(n) => vec!["0".into(), n.to_string()],
    }
}

fn is_restricted(spec: &BasisSpec) -> bool {
    matches!(spec.family, crate::fourier::BasisFamily::Restricted)
}

/// `coeffs.csv`: `j, n1..nM, norm_sq, coeff, stderr`.
pub fn write_coeffs_csv(table: &CoefficientTable, path: &Path) -> Result<()> {
    let mut header = label_columns(table.basis.dim, is_restricted(&table.basis));
    header.extend(["norm_sq", "coeff", "stderr"].map(String::from));
    let rows = table.entries.iter().map(|e| {
        let mut r = label_fields(&e.label);
        r.extend([e.norm_sq.to_string(), e.coeff.to_string(), e.stderr.to_string()]);
        r
    });
    write_rows(path, &header, rows)
}

/// Reads `coeffs.csv` back; the labels must fit `spec`.
pub fn read_coeffs_csv(path: &Path, spec: &BasisSpec) -> Result<Vec<CoefficientEntry>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let restricted = is_restricted(spec);
    let mut expected = label_columns(spec.dim, restricted);
    expected.extend(["norm_sq", "coeff", "stderr"].map(String::from));
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line: line + 1,
        message,
    };
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if i == 0 {
            if fields != expected {
                return Err(parse_err(i, format!("expected header `{}`", expected.join(","))));
            }
            continue;
        }
        if fields.len() != expected.len() {
            return Err(parse_err(i, format!("expected {} fields", expected.len())));
        }
        let n_label = expected.len() - 3;
        let ints: Vec<usize> = fields[..n_label]
            .iter()
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(i, e.to_string()))?;
        let floats: Vec<f64> = fields[n_label..]
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(i, e.to_string()))?;
        let label = if restricted {
            BasisLabel::Restricted(ints[1])
        } else {
            if ints[0] == 0 || ints[0] > spec.dim {
                return Err(parse_err(i, format!("slot j = {} out of range", ints[0])));
            }
            BasisLabel::Full(FourierIndex::new(ints[0], ints[1..].to_vec()))
        };
        entries.push(CoefficientEntry {
            label,
            norm_sq: floats[0],
            coeff: floats[1],
            stderr: floats[2],
        });
    }
    Ok(entries)
}

/// `basis_norms.csv`: `j, n1..nM, norm_sq` for the unnormalized elements.
pub fn write_basis_norms_csv(spec: &BasisSpec, path: &Path) -> Result<()> {
    let mut header = label_columns(spec.dim, is_restricted(spec));
    header.push("norm_sq".into());
    let rows = spec.labels().into_iter().map(|l| {
        let mut r = label_fields(&l);
        r.push(spec.norm_sq(&l).to_string());
        r
    });
    write_rows(path, &header, rows)
}

/// `response.csv`: one row per perturbation with the three contributions.
pub fn write_response_csv(rows: &[(String, ResponseBreakdown)], path: &Path) -> Result<()> {
    let header = ["label", "r1", "r2w", "r3w", "total", "stderr", "window", "t_used"].map(String::from);
    let rows = rows.iter().map(|(l, r)| {
        vec![
            l.clone(),
            r.r1.to_string(),
            r.r2w.to_string(),
            r.r3w.to_string(),
            r.total.to_string(),
            r.stderr.to_string(),
            r.window.to_string(),
            r.t_used.to_string(),
        ]
    });
    write_rows(path, &header, rows)
}

/// `verify.csv`: `gamma, mean, stderr, n_replicas`.
pub fn write_verify_csv(sweep: &SweepResult, path: &Path) -> Result<()> {
    let header = ["gamma", "mean", "stderr", "n_replicas"].map(String::from);
    let rows = sweep.points.iter().map(|p| {
        vec![
            p.gamma.to_string(),
            p.mean.to_string(),
            p.stderr.to_string(),
            p.n_replicas.to_string(),
        ]
    });
    write_rows(path, &header, rows)
}

/// Grid points of every configured slice, in output order.
pub fn grid_points(grid: &GridConfig, dim: usize) -> Vec<(usize, DVector<f64>)> {
    let slices = if grid.slices.is_empty() {
        vec![vec![0.0; dim]]
    } else {
        grid.slices.clone()
    };
    let step = |a: usize, i: usize| {
        grid.lower[a] + (grid.upper[a] - grid.lower[a]) * i as f64 / (grid.points - 1) as f64
    };
    let mut out = Vec::new();
    for (s, base) in slices.iter().enumerate() {
        let second = if grid.axes.len() == 2 { grid.points } else { 1 };
        for i in 0..grid.points {
            for k in 0..second {
                let mut x = DVector::from_column_slice(base);
                x[grid.axes[0]] = step(0, i);
                if grid.axes.len() == 2 {
                    x[grid.axes[1]] = step(1, k);
                }
                out.push((s, x));
            }
        }
    }
    out
}

/// `xopt_grid.csv`: `slice, x1..xM, X1..XM`.
pub fn write_grid_csv(field: &dyn VectorField, grid: &GridConfig, path: &Path) -> Result<()> {
    let dim = field.dim();
    let header: Vec<String> = std::iter::once("slice".to_string())
        .chain((1..=dim).map(|i| format!("x{i}")))
        .chain((1..=dim).map(|i| format!("X{i}")))
        .collect();
    let rows = grid_points(grid, dim).into_iter().map(|(s, x)| {
        let v = field.eval(&x);
        std::iter::once(s.to_string())
            .chain(x.iter().map(|c| c.to_string()))
            .chain(v.iter().map(|c| c.to_string()))
            .collect()
    });
    write_rows(path, &header, rows)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// SHA-256 of the canonical TOML form of a configuration.
pub fn config_hash(cfg: &RunConfig) -> String {
    let digest = Sha256::digest(cfg.to_toml_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub library_version: String,
    pub config_hash: String,
    pub model: String,
    pub seed: u64,
    pub basis_len: usize,
    /// For the restricted family: `n` ranges over `0..N`.
    pub basis_range: String,
    pub wall_time_s: f64,
    pub outputs: Vec<PathBuf>,
    pub config: RunConfig,
}

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig, spec: &BasisSpec, wall_time_s: f64, outputs: Vec<PathBuf>) -> Self {
        let basis_range = if is_restricted(spec) {
            format!("n in [0, {}]", spec.truncation.saturating_sub(1))
        } else {
            format!("n_i in [0, {}]", spec.truncation.saturating_sub(1))
        };
        Manifest {
            command: command.to_string(),
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash(cfg),
            model: cfg.model.clone(),
            seed: cfg.engine.seed,
            basis_len: spec.len(),
            basis_range,
            wall_time_s,
            outputs,
            config: cfg.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::EngineParams;
    use crate::fourier::HpWeighting;

    fn table(spec: BasisSpec) -> CoefficientTable {
        let entries = spec
            .labels()
            .into_iter()
            .enumerate()
            .map(|(i, label)| CoefficientEntry {
                norm_sq: spec.norm_sq(&label),
                label,
                coeff: 0.1 * i as f64 - 1.0 / 3.0,
                stderr: 1e-3 / (i + 1) as f64,
            })
            .collect();
        CoefficientTable {
            model: "solenoid2d".into(),
            basis: spec,
            engine: EngineParams::default(),
            entries,
        }
    }

    #[test]
    fn coeffs_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        for spec in [
            BasisSpec::full(2, 3, HpWeighting::two_pi_inverse(5)),
            BasisSpec::restricted(21, 4, HpWeighting::two_pi_inverse(4)),
        ] {
            let t = table(spec.clone());
            let path = dir.path().join("coeffs.csv");
            write_coeffs_csv(&t, &path).unwrap();
            assert_eq!(read_coeffs_csv(&path, &spec).unwrap(), t.entries);
        }
    }

    #[test]
    fn coeffs_header_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("coeffs.csv");
        let t = table(BasisSpec::full(2, 2, HpWeighting::two_pi_inverse(5)));
        write_coeffs_csv(&t, &path).unwrap();
        let other = BasisSpec::full(3, 2, HpWeighting::two_pi_inverse(5));
        assert!(matches!(read_coeffs_csv(&path, &other), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn grid_covers_both_slices() {
        let cfg = RunConfig::preset("solenoid3d").unwrap();
        let pts = grid_points(&cfg.grid, 3);
        assert_eq!(pts.len(), 2 * 21 * 21);
        assert_eq!(pts[0].1[2], 0.0);
        assert_eq!(pts.last().unwrap().1[2], 0.5);
        assert_eq!(pts.last().unwrap().1[0], 0.5);
    }

    #[test]
    fn config_hash_is_stable() {
        let a = RunConfig::preset("solenoid2d").unwrap();
        let mut b = a.clone();
        assert_eq!(config_hash(&a), config_hash(&b));
        b.engine.seed = 7;
        assert_ne!(config_hash(&a), config_hash(&b));
    }
}
