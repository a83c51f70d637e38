mod expr;
mod userspec;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use whfactor::cauchy::QuadratureSpec;
use whfactor::error::Error;
use whfactor::factorizer::{
    assemble, factorize, remainder, remainder_at_infinity, AsymptoticFactorization, ConstantPolicy, SolvabilityReport,
};
use whfactor::funcspace::{CMatrix, GridSpec, C64};
use whfactor::gallery::{self, GalleryEntry};
use whfactor::indices::{count_conditions, determinant, is_stable, winding_number};

#[derive(Parser, Debug)]
#[command(
    name = "whfactor",
    version,
    about = "Asymptotic Wiener-Hopf factorization of perturbed matrix functions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Winding number, partial indices and condition counts of the base matrix.
    Indices(Config),
    /// Solvability report of the first correction step.
    Check(Config),
    /// Samples of the approximate factors and the remainder on a grid.
    Factorize(Config),
    /// Remainder diagnostics for a list of eps values.
    Sweep(Config),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug, Clone)]
struct Config {
    /// Gallery name (gk0, gk-singular, solvable, unsolvable) or path to a JSON spec file.
    #[arg(long, default_value = "solvable")]
    example: String,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    /// Comma-separated eps values for sweep.
    #[arg(long, value_delimiter = ',')]
    eps_list: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1)]
    order: usize,
    /// zero, match-infinity, or a number for the (2,1) constant.
    #[arg(long, default_value = "zero")]
    c21: String,
    #[arg(long, default_value_t = 2001)]
    grid_points: usize,
    #[arg(long, env = "WHFACTOR_QUAD_PANELS", default_value_t = QuadratureSpec::default().num_panels)]
    panels: usize,
    #[arg(long, default_value_t = QuadratureSpec::default().nodes_per_panel)]
    nodes: usize,
    /// Relative tolerance of the solvability conditions.
    #[arg(long, default_value_t = whfactor::factorizer::DEFAULT_TOL)]
    tol: f64,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
enum Failure {
    Config(anyhow::Error),
    Numeric(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<Error>() {
            Some(
                Error::InvalidParameter(_)
                | Error::InvalidIndices(_)
                | Error::DimensionMismatch { .. }
                | Error::PolicyConflict { .. }
                | Error::OrderExceeded { .. },
            ) => Failure::Config(e),
            Some(_) => Failure::Numeric(e),
            None => Failure::Config(e),
        }
    }
}

impl Config {
    fn validate(&self) -> Result<()> {
        let bad_eps = |e: f64| !(e >= 0.0) || !e.is_finite();
        if bad_eps(self.eps) || self.eps_list.iter().flatten().any(|&e| bad_eps(e)) {
            bail!("eps must be finite and nonnegative");
        }
        if self.order < 1 {
            bail!("order must be at least 1");
        }
        if self.grid_points < 3 {
            bail!("grid-points must be at least 3");
        }
        if self.panels < 1 || self.nodes < 1 {
            bail!("panels and nodes must be positive");
        }
        if !(self.tol > 0.0) {
            bail!("tol must be positive");
        }
        Ok(())
    }

    fn quad(&self) -> QuadratureSpec {
        QuadratureSpec {
            num_panels: self.panels,
            nodes_per_panel: self.nodes,
            ..QuadratureSpec::default()
        }
    }

    fn grid(&self) -> GridSpec {
        GridSpec::new(self.grid_points)
    }

    fn entry(&self) -> Result<GalleryEntry> {
        if gallery::NAMES.contains(&self.example.as_str()) {
            return Ok(gallery::by_name(&self.example)?);
        }
        let path = PathBuf::from(&self.example);
        if path.exists() {
            return userspec::load(&path);
        }
        Ok(gallery::by_name(&self.example)?)
    }

    fn policy(&self) -> Result<ConstantPolicy> {
        Ok(match self.c21.as_str() {
            "zero" => ConstantPolicy::Zero,
            "match-infinity" => ConstantPolicy::MatchInfinity,
            s => {
                let v: f64 = s
                    .parse()
                    .with_context(|| format!("c21 must be zero, match-infinity or a number, got '{s}'"))?;
                ConstantPolicy::Explicit([((1, 0), C64::new(v, 0.0))].into_iter().collect())
            }
        })
    }

    fn writer(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.out {
            Some(p) => Box::new(BufWriter::new(
                File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
            )),
            None => Box::new(BufWriter::new(io::stdout())),
        })
    }
}

/// 17 significant digits in scientific notation.
fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn cjson(v: C64) -> serde_json::Value {
    json!({ "re": v.re, "im": v.im })
}

#[derive(Serialize)]
struct ResidualOut {
    kind: &'static str,
    row: usize,
    col: usize,
    order: u32,
    value: f64,
    value_im: f64,
    abs: f64,
}

/// Report with 1-based row and column numbers.
fn report_json(rep: &SolvabilityReport) -> serde_json::Value {
    let rho: Vec<ResidualOut> = rep
        .residuals
        .iter()
        .map(|r| ResidualOut {
            kind: r.kind.name(),
            row: r.row + 1,
            col: r.col + 1,
            order: r.order,
            value: r.value.re,
            value_im: r.value.im,
            abs: r.value.norm(),
        })
        .collect();
    let pinned: Vec<_> = rep
        .pinned_constants
        .iter()
        .map(|(&(l, j), &c)| json!({ "row": l + 1, "col": j + 1, "re": c.re, "im": c.im }))
        .collect();
    json!({
        "passed": rep.passed,
        "tolerance": rep.tolerance,
        "scale": rep.scale,
        "rho": rho,
        "pinned_constants": pinned,
    })
}

fn cmd_indices(cfg: &Config) -> Result<()> {
    let entry = cfg.entry()?;
    let k = &entry.base.indices;
    let det = determinant(&entry.base.product());
    let w = winding_number(&det, &cfg.grid())?;
    let c = count_conditions(k);
    let stable = is_stable(k);
    let mut out = cfg.writer()?;
    match cfg.format {
        Format::Json => {
            let v = json!({
                "example": entry.name,
                "winding": w.number,
                "indices": k.kappa(),
                "stable": stable,
                "solvability_count": c.solvability,
                "pinned_count": c.pinned,
                "free_count": c.free,
                "open_entries": c.open_entries,
            });
            writeln!(out, "{}", serde_json::to_string_pretty(&v)?)?;
        }
        Format::Csv => {
            let kappa: Vec<String> = k.kappa().iter().map(|v| v.to_string()).collect();
            let mut wr = csv::Writer::from_writer(out);
            let rows = [
                ("example", entry.name.clone()),
                ("winding", w.number.to_string()),
                ("indices", kappa.join(" ")),
                ("stable", stable.to_string()),
                ("solvability_count", c.solvability.to_string()),
                ("pinned_count", c.pinned.to_string()),
                ("free_count", c.free.to_string()),
                ("open_entries", c.open_entries.to_string()),
            ];
            wr.write_record(["key", "value"])?;
            for (a, b) in rows {
                wr.write_record([a, b.as_str()])?;
            }
            wr.flush()?;
        }
    }
    Ok(())
}

fn cmd_check(cfg: &Config) -> Result<()> {
    let entry = cfg.entry()?;
    let m = whfactor::factorizer::reduce_rhs(&entry.base, &entry.perturbation(cfg.eps))?;
    let rep = whfactor::factorizer::check_solvability(&m, &entry.base.indices, &cfg.quad(), cfg.tol)?;
    let mut out = cfg.writer()?;
    match cfg.format {
        Format::Json => {
            let mut v = report_json(&rep);
            v["example"] = json!(entry.name);
            v["eps"] = json!(cfg.eps);
            writeln!(out, "{}", serde_json::to_string_pretty(&v)?)?;
        }
        Format::Csv => {
            writeln!(
                out,
                "# example={},eps={},passed={}",
                entry.name,
                num(cfg.eps),
                rep.passed
            )?;
            let mut wr = csv::Writer::from_writer(out);
            wr.write_record(["kind", "row", "col", "order", "re", "im"])?;
            for r in &rep.residuals {
                wr.write_record([
                    r.kind.name().to_string(),
                    (r.row + 1).to_string(),
                    (r.col + 1).to_string(),
                    r.order.to_string(),
                    num(r.value.re),
                    num(r.value.im),
                ])?;
            }
            for (&(l, j), c) in &rep.pinned_constants {
                wr.write_record([
                    "pinned".to_string(),
                    (l + 1).to_string(),
                    (j + 1).to_string(),
                    "0".to_string(),
                    num(c.re),
                    num(c.im),
                ])?;
            }
            wr.flush()?;
        }
    }
    Ok(())
}

fn run_factorization(cfg: &Config, entry: &GalleryEntry, eps: f64) -> Result<AsymptoticFactorization> {
    let n = entry.perturbation(eps);
    Ok(factorize(
        &entry.base,
        &n,
        cfg.order,
        &cfg.policy()?,
        &cfg.quad(),
        cfg.tol,
    )?)
}

fn matrix_columns(prefix: &str, n: usize) -> Vec<String> {
    let mut v = Vec::new();
    for l in 1..=n {
        for j in 1..=n {
            v.push(format!("{prefix}_{l}{j}_re"));
            v.push(format!("{prefix}_{l}{j}_im"));
        }
    }
    v
}

fn push_matrix(row: &mut Vec<f64>, m: &CMatrix) {
    for l in 0..m.nrows() {
        for j in 0..m.ncols() {
            row.push(m[(l, j)].re);
            row.push(m[(l, j)].im);
        }
    }
}

fn c21_label(cfg: &Config, fact: &AsymptoticFactorization) -> String {
    match fact.steps.first() {
        Some(s) if s.constants.nrows() == 2 => num(s.constants[(1, 0)].re),
        _ => cfg.c21.clone(),
    }
}

fn cmd_factorize(cfg: &Config) -> Result<()> {
    let entry = cfg.entry()?;
    let fact = run_factorization(cfg, &entry, cfg.eps)?;
    let g = entry.build(cfg.eps);
    let m = fact.achieved_order;
    let grid = cfg.grid();
    let rem = remainder(&g, &fact, m, &grid)?;
    let rows: Vec<Vec<f64>> = rem
        .xs
        .par_iter()
        .zip(&rem.samples)
        .map(|(&x, dk)| {
            let a = assemble(&fact, m, x)?;
            let mut row = vec![x];
            push_matrix(&mut row, &a.minus_factor);
            push_matrix(&mut row, &a.plus_factor);
            push_matrix(&mut row, &a.product);
            push_matrix(&mut row, dk);
            Ok(row)
        })
        .collect::<Result<_, Error>>()?;
    let n = entry.base.dim();
    let mut header = vec!["x".to_string()];
    for p in ["minus", "plus", "product", "dk"] {
        header.extend(matrix_columns(p, n));
    }
    let failure = fact.failure.as_ref().map(report_json);
    let mut out = cfg.writer()?;
    let c21 = c21_label(cfg, &fact);
    match cfg.format {
        Format::Csv => {
            writeln!(
                out,
                "# example={},eps={},order={},c21={},achieved_order={},sup_dk={}",
                entry.name,
                num(cfg.eps),
                cfg.order,
                c21,
                m,
                num(rem.sup)
            )?;
            if let Some(f) = &failure {
                writeln!(out, "# failure={}", serde_json::to_string(f)?)?;
            }
            let mut wr = csv::Writer::from_writer(out);
            wr.write_record(&header)?;
            for r in &rows {
                wr.write_record(r.iter().map(|&v| num(v)))?;
            }
            wr.flush()?;
        }
        Format::Json => {
            let v = json!({
                "example": entry.name,
                "eps": cfg.eps,
                "order": cfg.order,
                "c21": c21,
                "achieved_order": m,
                "sup_dk": rem.sup,
                "failure": failure,
                "columns": header,
                "rows": rows,
            });
            writeln!(out, "{}", serde_json::to_string(&v)?)?;
        }
    }
    Ok(())
}

struct SweepRow {
    eps: f64,
    achieved: usize,
    sup: f64,
    normalized: f64,
    at_infinity: Option<CMatrix>,
    constants: Option<CMatrix>,
    failure: Option<SolvabilityReport>,
}

fn sweep_row(cfg: &Config, entry: &GalleryEntry, eps: f64) -> Result<SweepRow> {
    let fact = run_factorization(cfg, entry, eps)?;
    let m = fact.achieved_order;
    let rem = remainder(&entry.build(eps), &fact, m, &cfg.grid())?;
    let at_infinity = if m >= 1 {
        Some(remainder_at_infinity(&fact)?)
    } else {
        None
    };
    Ok(SweepRow {
        eps,
        achieved: m,
        sup: rem.sup,
        normalized: rem.sup / eps.powi(m as i32 + 1),
        at_infinity,
        constants: fact.steps.first().map(|s| s.constants.clone()),
        failure: fact.failure,
    })
}

fn cmd_sweep(cfg: &Config) -> Result<()> {
    let entry = cfg.entry()?;
    let eps_list = cfg.eps_list.clone().unwrap_or_else(|| vec![cfg.eps]);
    let rows: Vec<SweepRow> = eps_list
        .par_iter()
        .map(|&e| sweep_row(cfg, &entry, e))
        .collect::<Result<_>>()?;
    let n = entry.base.dim();
    let mut out = cfg.writer()?;
    match cfg.format {
        Format::Csv => {
            writeln!(out, "# example={},order={},c21={}", entry.name, cfg.order, cfg.c21)?;
            let mut header: Vec<String> = ["eps", "status", "achieved_order", "sup_dk", "sup_dk_normalized"]
                .iter()
                .map(|s| s.to_string())
                .collect();
            header.extend(matrix_columns("dk_inf", n));
            header.extend(matrix_columns("c", n));
            let mut wr = csv::Writer::from_writer(out);
            wr.write_record(&header)?;
            for r in &rows {
                let status = if r.failure.is_some() { "failed" } else { "ok" };
                let mut rec = vec![
                    num(r.eps),
                    status.to_string(),
                    r.achieved.to_string(),
                    num(r.sup),
                    num(r.normalized),
                ];
                for m in [&r.at_infinity, &r.constants] {
                    match m {
                        Some(m) => {
                            let mut v = Vec::new();
                            push_matrix(&mut v, m);
                            rec.extend(v.into_iter().map(num));
                        }
                        None => rec.extend(std::iter::repeat_n(String::new(), 2 * n * n)),
                    }
                }
                wr.write_record(&rec)?;
            }
            wr.flush()?;
        }
        Format::Json => {
            let mat = |m: &Option<CMatrix>| {
                m.as_ref().map(|m| {
                    (0..n)
                        .map(|l| (0..n).map(|j| cjson(m[(l, j)])).collect::<Vec<_>>())
                        .collect::<Vec<_>>()
                })
            };
            let rs: Vec<_> = rows
                .iter()
                .map(|r| {
                    json!({
                        "eps": r.eps,
                        "status": if r.failure.is_some() { "failed" } else { "ok" },
                        "achieved_order": r.achieved,
                        "sup_dk": r.sup,
                        "sup_dk_normalized": r.normalized,
                        "dk_inf": mat(&r.at_infinity),
                        "constants": mat(&r.constants),
                        "failure": r.failure.as_ref().map(report_json),
                    })
                })
                .collect();
            let v = json!({ "example": entry.name, "order": cfg.order, "c21": cfg.c21, "rows": rs });
            writeln!(out, "{}", serde_json::to_string_pretty(&v)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (Command::Indices(cfg) | Command::Check(cfg) | Command::Factorize(cfg) | Command::Sweep(cfg)) = &cli.command;
    if let Err(e) = cfg.validate() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    let result: Result<()> = match &cli.command {
        Command::Indices(c) => cmd_indices(c),
        Command::Check(c) => cmd_check(c),
        Command::Factorize(c) => cmd_factorize(c),
        Command::Sweep(c) => cmd_sweep(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => match Failure::from(e) {
            Failure::Config(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(2)
            }
            Failure::Numeric(e) => {
                eprintln!("numerical failure: {e:#}");
                ExitCode::from(3)
            }
        },
    }
}
