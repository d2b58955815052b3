//! Command line driver: `coeffs`, `optimal`, `verify` and `diag`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{BasisMode, RunConfig, WORKERS_ENV};
use crate::diag::{run_diagnostics, DiagReport};
use crate::dynamics::make_model;
use crate::engine::ResponseEngine;
use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::fourier::{BasisFamily, BasisLabel, BasisSpec, FourierIndex};
use crate::io::{
    read_coeffs_csv, write_basis_norms_csv, write_coeffs_csv, write_grid_csv, write_json,
    write_response_csv, write_verify_csv, Manifest,
};
use crate::optimal::{
    assemble_optimal, coefficients_with_breakdown, predicted_optimal_response, CoefficientEntry,
    CoefficientTable,
};
use crate::response::ResponseBreakdown;
use crate::verify::{gamma_sweep, slope_check, SlopeReport, SweepResult};

/// Exit code for a failed verification.
pub const EXIT_VERIFY_FAIL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "optresp", version, about = "Linear and optimal response of hyperbolic maps")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Built-in configuration: solenoid2d, solenoid3d or solenoid21d.
    #[arg(long, global = true, value_name = "NAME", conflicts_with = "config")]
    pub preset: Option<String>,
    /// Output directory (overrides outputs.dir).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Engine seed (overrides engine.seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Linear response of every basis element: coeffs.csv, basis_norms.csv, response.csv.
    Coeffs,
    /// Optimal perturbation from coeffs.csv (computed if absent): xopt_grid.csv, optimal.json.
    Optimal {
        /// Coefficient table to assemble instead of `<out>/coeffs.csv`.
        #[arg(long, value_name = "PATH")]
        coeffs: Option<PathBuf>,
    },
    /// Finite-difference sweep of μ_γ(Φ) against the computed response: verify.csv, verify_report.json.
    Verify {
        /// `xopt`, or a basis label `j,n1,...,nM` (restricted family: `n`).
        #[arg(long, default_value = "xopt")]
        perturbation: String,
        #[arg(long, value_name = "PATH")]
        coeffs: Option<PathBuf>,
    },
    /// Invariant checks on one engine run: diag.json.
    Diag,
}

/// Which perturbation a verification sweep uses.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Selector {
    Optimal,
    Basis(BasisLabel),
}

impl Selector {
    pub fn parse(text: &str, dim: usize, mode: BasisMode) -> Result<Self> {
        let text = text.trim();
        if text.eq_ignore_ascii_case("xopt") {
            return Ok(Selector::Optimal);
        }
        let nums: Vec<usize> = text
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::config(format!("--perturbation `{text}`: expected `xopt` or integers")))?;
        match mode {
            BasisMode::Restricted => match nums[..] {
                [n] => Ok(Selector::Basis(BasisLabel::Restricted(n))),
                _ => Err(Error::config("--perturbation for the restricted family is a single `n`")),
            },
            _ => {
                if nums.len() != dim + 1 || nums[0] == 0 || nums[0] > dim {
                    return Err(Error::config(format!(
                        "--perturbation `{text}`: expected `j,n1,...,n{dim}` with 1 ≤ j ≤ {dim}"
                    )));
                }
                Ok(Selector::Basis(BasisLabel::Full(FourierIndex::new(nums[0], nums[1..].to_vec()))))
            }
        }
    }
}

/// Resolves the configuration from the common flags.
pub fn resolve_config(args: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => return Err(Error::config("either --config or --preset is required")),
    };
    if let Some(out) = &args.out {
        cfg.outputs.dir = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.engine.seed = seed;
    }
    Ok(cfg)
}

/// Worker count from the environment, then the configuration; zero means automatic.
pub fn worker_count(cfg: &RunConfig) -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("{WORKERS_ENV}=`{v}` is not a worker count"))),
        Err(_) => Ok(cfg.flags.parallel_workers),
    }
}

fn prepare_out(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.outputs.dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

struct Context {
    cfg: RunConfig,
    spec: BasisSpec,
    out: PathBuf,
    started: Instant,
}

impl Context {
    fn new(cfg: RunConfig) -> Result<Self> {
        for w in cfg.validate()? {
            eprintln!("warning: {w}");
        }
        let model = make_model(&cfg.model)?;
        let spec = cfg.basis_spec(model.dim())?;
        let out = prepare_out(&cfg)?;
        Ok(Context {
            cfg,
            spec,
            out,
            started: Instant::now(),
        })
    }

    fn engine(&self) -> Result<ResponseEngine> {
        ResponseEngine::build(make_model(&self.cfg.model)?, self.cfg.engine)
    }

    fn manifest(&self, command: &str, outputs: Vec<PathBuf>) -> Result<()> {
        let m = Manifest::new(
            command,
            &self.cfg,
            &self.spec,
            self.started.elapsed().as_secs_f64(),
            outputs,
        );
        write_json(&m, &self.out.join(format!("manifest_{command}.json")))
    }

    fn coeffs_path(&self) -> PathBuf {
        self.out.join("coeffs.csv")
    }

    /// Reads `path`, else `<out>/coeffs.csv` if present, else computes the table
    /// (on `engine` when given).
    fn table(&self, path: Option<&Path>, engine: Option<&ResponseEngine>) -> Result<CoefficientTable> {
        let default = self.coeffs_path();
        let read = |p: &Path| -> Result<CoefficientTable> {
            Ok(CoefficientTable {
                model: self.cfg.model.clone(),
                basis: self.spec.clone(),
                engine: self.cfg.engine,
                entries: read_coeffs_csv(p, &self.spec)?,
            })
        };
        match (path, engine) {
            (Some(p), _) => read(p),
            (None, _) if default.exists() => read(&default),
            (None, Some(e)) => Ok(coefficients_with_breakdown(e, &self.spec)?.0),
            (None, None) => Ok(coefficients_with_breakdown(&self.engine()?, &self.spec)?.0),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct CoeffsOutcome {
    pub rows: usize,
    pub riesz_norm: f64,
    pub extreme: Option<CoefficientEntry>,
}

pub fn cmd_coeffs(cfg: RunConfig) -> Result<CoeffsOutcome> {
    let ctx = Context::new(cfg)?;
    let engine = ctx.engine()?;
    let (table, breakdown) = coefficients_with_breakdown(&engine, &ctx.spec)?;
    let coeffs = ctx.coeffs_path();
    let norms = ctx.out.join("basis_norms.csv");
    let response = ctx.out.join("response.csv");
    write_coeffs_csv(&table, &coeffs)?;
    write_basis_norms_csv(&ctx.spec, &norms)?;
    let rows: Vec<(String, ResponseBreakdown)> = table
        .entries
        .iter()
        .zip(breakdown)
        .map(|(e, r)| (e.label.to_string(), r))
        .collect();
    write_response_csv(&rows, &response)?;
    ctx.manifest("coeffs", vec![coeffs, norms, response])?;
    Ok(CoeffsOutcome {
        rows: table.len(),
        riesz_norm: table.riesz_norm(),
        extreme: table.extreme().cloned(),
    })
}

#[derive(Debug, Serialize)]
pub struct OptimalSummary {
    pub riesz_norm: f64,
    pub predicted_optimal_response: f64,
    /// Coefficients of `B̃¹_{(0,…,0,n)}` (restricted family: `B̃_n`) for `n < 6`.
    pub leading: Vec<(String, f64)>,
    pub extreme: Option<(String, f64)>,
    /// Normalized coefficients `c/‖v‖`, largest first.
    pub weights: Vec<(String, f64)>,
}

pub fn optimal_summary(table: &CoefficientTable) -> Result<OptimalSummary> {
    let opt = assemble_optimal(table)?;
    let dim = table.basis.dim;
    let leading = (0..6)
        .filter_map(|n| {
            let label = match table.basis.family {
                BasisFamily::Restricted => BasisLabel::Restricted(n),
                _ => {
                    let mut idx = vec![0; dim];
                    idx[dim - 1] = n;
                    BasisLabel::Full(FourierIndex::new(1, idx))
                }
            };
            table.get(&label).map(|e| (label.to_string(), e.coeff))
        })
        .collect();
    let mut weights: Vec<(String, f64)> = opt.weights().iter().map(|(w, l)| (l.to_string(), *w)).collect();
    weights.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
    Ok(OptimalSummary {
        riesz_norm: opt.riesz_norm(),
        predicted_optimal_response: predicted_optimal_response(table),
        leading,
        extreme: table.extreme().map(|e| (e.label.to_string(), e.coeff)),
        weights,
    })
}

pub fn cmd_optimal(cfg: RunConfig, coeffs: Option<&Path>) -> Result<OptimalSummary> {
    let ctx = Context::new(cfg)?;
    let table = ctx.table(coeffs, None)?;
    let opt = assemble_optimal(&table)?;
    let grid = ctx.out.join("xopt_grid.csv");
    let summary_path = ctx.out.join("optimal.json");
    write_grid_csv(&opt, &ctx.cfg.grid, &grid)?;
    let summary = optimal_summary(&table)?;
    write_json(&summary, &summary_path)?;
    ctx.manifest("optimal", vec![grid, summary_path])?;
    Ok(summary)
}

#[derive(Debug, Serialize)]
pub struct VerifyOutcome {
    pub perturbation: String,
    pub predicted: ResponseBreakdown,
    pub report: SlopeReport,
    pub sweep: SweepResult,
}

pub fn cmd_verify(cfg: RunConfig, selector: &Selector, coeffs: Option<&Path>) -> Result<VerifyOutcome> {
    let ctx = Context::new(cfg)?;
    let model = make_model(&ctx.cfg.model)?;
    let engine = ctx.engine()?;
    let (field, name): (Arc<dyn VectorField>, String) = match selector {
        Selector::Optimal => {
            let table = ctx.table(coeffs, Some(&engine))?;
            (Arc::new(assemble_optimal(&table)?), "xopt".into())
        }
        Selector::Basis(label) => {
            let ok = match (label, &ctx.spec.family) {
                (BasisLabel::Restricted(_), BasisFamily::Restricted) => true,
                (BasisLabel::Full(idx), BasisFamily::Full | BasisFamily::Subset(_)) => {
                    idx.dim() == ctx.spec.dim
                }
                _ => false,
            };
            if !ok {
                return Err(Error::config(format!("perturbation {label} does not belong to the configured basis")));
            }
            (Arc::new(ctx.spec.field(label)), label.to_string())
        }
    };
    let predicted = engine.additive_response(field.as_ref())?;
    let sweep = gamma_sweep(model, field, &ctx.cfg.verify.sweep_params(ctx.cfg.engine.seed))?;
    let report = slope_check(
        &sweep,
        ctx.cfg.verify.h,
        predicted.total,
        predicted.stderr,
        ctx.cfg.verify.tolerance_k,
    )?;
    let csv = ctx.out.join("verify.csv");
    let report_path = ctx.out.join("verify_report.json");
    write_verify_csv(&sweep, &csv)?;
    #[derive(Serialize)]
    struct Block<'a> {
        perturbation: &'a str,
        slope: f64,
        slope_stderr: f64,
        quadratic_slope: f64,
        predicted: f64,
        predicted_stderr: f64,
        h: f64,
        k: f64,
        pass: bool,
    }
    write_json(
        &Block {
            perturbation: &name,
            slope: report.slope,
            slope_stderr: report.slope_stderr,
            quadratic_slope: report.quadratic_slope,
            predicted: report.predicted,
            predicted_stderr: report.predicted_stderr,
            h: report.h,
            k: report.k,
            pass: report.pass,
        },
        &report_path,
    )?;
    ctx.manifest("verify", vec![csv, report_path])?;
    Ok(VerifyOutcome {
        perturbation: name,
        predicted,
        report,
        sweep,
    })
}

pub fn cmd_diag(cfg: RunConfig) -> Result<DiagReport> {
    let ctx = Context::new(cfg)?;
    let report = run_diagnostics(&ctx.engine()?);
    let path = ctx.out.join("diag.json");
    write_json(&report, &path)?;
    ctx.manifest("diag", vec![path])?;
    Ok(report)
}

fn execute(cli: Cli) -> Result<i32> {
    let cfg = resolve_config(&cli.common)?;
    let workers = worker_count(&cfg)?;
    if workers > 0 {
        // a pool may already exist when embedded; the existing one is kept
        let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    }
    match cli.command {
        Command::Coeffs => {
            let o = cmd_coeffs(cfg)?;
            println!("rows: {}", o.rows);
            println!("riesz_norm: {}", o.riesz_norm);
            if let Some(e) = o.extreme {
                println!("extreme: {} = {} ± {}", e.label, e.coeff, e.stderr);
            }
            Ok(0)
        }
        Command::Optimal { coeffs } => {
            let s = cmd_optimal(cfg, coeffs.as_deref())?;
            println!("riesz_norm: {}", s.riesz_norm);
            for (l, c) in &s.leading {
                println!("{l}: {c:e}");
            }
            if let Some((l, c)) = &s.extreme {
                println!("extreme: {l} = {c}");
            }
            Ok(0)
        }
        Command::Verify { perturbation, coeffs } => {
            let dim = make_model(&cfg.model)?.dim();
            let selector = Selector::parse(&perturbation, dim, cfg.basis.mode)?;
            let o = cmd_verify(cfg, &selector, coeffs.as_deref())?;
            let r = &o.report;
            println!(
                "{}: slope {} ± {}, predicted {} ± {}, {}",
                o.perturbation,
                r.slope,
                r.slope_stderr,
                r.predicted,
                r.predicted_stderr,
                if r.pass { "PASS" } else { "FAIL" }
            );
            Ok(if r.pass { 0 } else { EXIT_VERIFY_FAIL })
        }
        Command::Diag => {
            let r = cmd_diag(cfg)?;
            for c in &r.checks {
                println!(
                    "{}: {:e} (≤ {:e}) {}",
                    c.name,
                    c.value,
                    c.threshold,
                    if c.pass { "ok" } else { "FAIL" }
                );
            }
            Ok(0)
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
