//! Command-line front end: certification runs, identity crosschecks, direct
//! kernel and map evaluation, and the one-shot suite.
//!
//! Exit codes: 0 when everything checked out, 1 when a certified violation
//! or failed crosscheck was found, 2 on usage or input errors. Identical
//! invocations produce identical reports except for wall-time fields.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use opcert::certify::{
    build_map, certify, crosscheck, run_suite_with, CertificationReport, CertifyOptions, CheckId,
    MapId, MapSpec, NEG_CONTROL_TRIALS, SUITE_DIMS,
};
use opcert::perspective::{kernel_eval, KernelId, ScalarKernel};
use opcert::Hermitian64;

#[derive(Parser, Debug)]
#[command(
    name = "opcert",
    version,
    about = "Numerical certification of operator concavity and convexity"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Certify one map by randomized Loewner-order mixture trials
    Certify(CertifyArgs),
    /// Run one identity crosscheck between independent evaluation paths
    Crosscheck(CrosscheckArgs),
    /// Evaluate a scalar kernel or an operator map on explicit inputs
    Eval(EvalArgs),
    /// Run the full certification matrix, negative control, and crosschecks
    Suite(SuiteArgs),
}

#[derive(Args, Debug)]
struct CertifyArgs {
    /// Map id: THM2.1, COR2.3, THM2.2, COR2.4, THM2.5, THM3.3, THM3.4,
    /// THM3.5, LIEB, or NEG_T4
    #[arg(long)]
    map: Option<String>,
    /// Exponent parameter of the map
    #[arg(long)]
    p: Option<f64>,
    /// Matrix dimension
    #[arg(long)]
    dim: Option<usize>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Debug)]
struct CrosscheckArgs {
    /// Check id: QUAD, PF2-F35, FD-FRECHET, or TRACE-IDENT
    #[arg(long)]
    check: Option<String>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Scalar kernel id: G21, F23, H25, F33, F34, F35, or LIEB
    #[arg(long)]
    kernel: Option<String>,
    /// Operator map id, evaluated on the matrices given by --inputs
    #[arg(long)]
    map: Option<String>,
    /// Exponent parameter
    #[arg(long)]
    p: Option<f64>,
    /// Comma-separated scalar arguments for --kernel
    #[arg(long, value_delimiter = ',')]
    args: Option<Vec<f64>>,
    /// Comma-separated matrix JSON paths for --map
    #[arg(long, value_delimiter = ',')]
    inputs: Option<Vec<PathBuf>>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Debug)]
struct SuiteArgs {
    /// Certify every positive map at this single exponent instead of its
    /// default grid; values outside a map's range are an error
    #[arg(long)]
    p: Option<f64>,
    /// Run at this single dimension instead of the default 2, 3, 5
    #[arg(long)]
    dim: Option<usize>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// Trial count per certification; crosscheck coverage is fixed per check
    #[arg(long)]
    trials: Option<usize>,
    /// Base seed of the trial streams
    #[arg(long)]
    seed: Option<u64>,
    /// Relative certification tolerance
    #[arg(long)]
    tol: Option<f64>,
    /// Comma-separated mixture weights in (0, 1)
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    /// Gauss-Legendre node count for integral-form maps
    #[arg(long)]
    quadrature_nodes: Option<usize>,
    /// Write the JSON report here in addition to the stdout summary
    #[arg(long)]
    out: Option<PathBuf>,
    /// Serialize the worst trial inputs even without a violation
    #[arg(long)]
    emit_worst: bool,
    /// Widen input eigenvalues to [1e-4, 1e4] and relax the tolerance
    #[arg(long)]
    stress: bool,
    /// Worker threads for trial evaluation (default: all cores)
    #[arg(long)]
    jobs: Option<usize>,
    /// JSON file with the same field names as the flags; flags win
    #[arg(long)]
    config: Option<PathBuf>,
}

/// The `--config` file: every flag, optional, so the command line can
/// override any subset.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    map: Option<String>,
    check: Option<String>,
    kernel: Option<String>,
    p: Option<f64>,
    dim: Option<usize>,
    args: Option<Vec<f64>>,
    inputs: Option<Vec<PathBuf>>,
    trials: Option<usize>,
    seed: Option<u64>,
    tol: Option<f64>,
    #[serde(alias = "lambda-grid")]
    lambda_grid: Option<Vec<f64>>,
    #[serde(alias = "quadrature-nodes")]
    quadrature_nodes: Option<usize>,
    out: Option<PathBuf>,
    #[serde(alias = "emit-worst")]
    emit_worst: Option<bool>,
    stress: Option<bool>,
    jobs: Option<usize>,
}

enum Outcome {
    Clean,
    Flagged,
}

/// Parses `argv` (including the program name), dispatches, and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Certify(a) => run_certify(a),
        Command::Crosscheck(a) => run_crosscheck(a),
        Command::Eval(a) => run_eval(a),
        Command::Suite(a) => run_suite_cmd(a),
    };
    match result {
        Ok(Outcome::Clean) => 0,
        Ok(Outcome::Flagged) => 1,
        Err(e) => {
            let _ = writeln!(io::stderr(), "error: {e:#}");
            2
        }
    }
}

/// Writes one line to standard output. A broken pipe means the consumer hung
/// up; that truncates the output but never fails or crashes the run.
fn emit(text: &str) -> anyhow::Result<()> {
    match writeln!(io::stdout(), "{text}") {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        Err(e) => Err(anyhow::Error::new(e).context("writing to standard output")),
    }
}

fn load_file_config(path: &Option<PathBuf>) -> anyhow::Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text =
                fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

fn configure_jobs(jobs: Option<usize>) {
    if let Some(n) = jobs {
        // a global pool may already exist when run() is reentered
        // in-process; the first configuration wins
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

fn build_options(c: &CommonArgs, f: &FileConfig) -> CertifyOptions {
    let mut o = CertifyOptions::default();
    if c.stress || f.stress.unwrap_or(false) {
        o = o.stressed();
    }
    if let Some(t) = c.trials.or(f.trials) {
        o.trials = t;
    }
    if let Some(s) = c.seed.or(f.seed) {
        o.seed = s;
    }
    if let Some(t) = c.tol.or(f.tol) {
        o.tolerance_rel = t;
    }
    if let Some(g) = c.lambda_grid.clone().or_else(|| f.lambda_grid.clone()) {
        o.lambda_grid = g;
    }
    if let Some(n) = c.quadrature_nodes.or(f.quadrature_nodes) {
        o.quadrature_nodes = n;
    }
    o.emit_worst = c.emit_worst || f.emit_worst.unwrap_or(false);
    o
}

fn out_path(c: &CommonArgs, f: &FileConfig) -> Option<PathBuf> {
    c.out.clone().or_else(|| f.out.clone())
}

fn write_report<T: serde::Serialize>(path: &Option<PathBuf>, value: &T) -> anyhow::Result<()> {
    if let Some(p) = path {
        let mut s = serde_json::to_string_pretty(value).context("serializing report")?;
        s.push('\n');
        fs::write(p, s).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn summarize(r: &CertificationReport) -> String {
    let status = if r.violation { "VIOLATION" } else { "ok" };
    format!(
        "{:<11} p={:<5} dim={} trials={:<4} seed={} worst_margin={:+.3e}  {}",
        r.map_id, r.p, r.dim, r.trials, r.seed, r.worst_margin, status
    )
}

/// Exponent used when a map is certified or evaluated without an explicit
/// `--p`: the midpoint of every admissible range, except the negative
/// control whose exponent is part of the claim itself.
fn default_single_p(id: MapId) -> f64 {
    match id {
        MapId::NegT4 => 4.0,
        _ => 0.5,
    }
}

fn run_certify(a: CertifyArgs) -> anyhow::Result<Outcome> {
    let f = load_file_config(&a.common.config)?;
    configure_jobs(a.common.jobs.or(f.jobs));
    let id: MapId = a
        .map
        .or_else(|| f.map.clone())
        .unwrap_or_else(|| "THM2.1".into())
        .parse()?;
    let p = a.p.or(f.p).unwrap_or_else(|| default_single_p(id));
    let dim = a.dim.or(f.dim).unwrap_or(3);
    let opts = build_options(&a.common, &f);
    let report = certify::<f64>(&MapSpec::new(id, p, dim), &opts)?;
    emit(&summarize(&report))?;
    write_report(&out_path(&a.common, &f), &report)?;
    Ok(if report.violation {
        Outcome::Flagged
    } else {
        Outcome::Clean
    })
}

fn run_crosscheck(a: CrosscheckArgs) -> anyhow::Result<Outcome> {
    let f = load_file_config(&a.common.config)?;
    configure_jobs(a.common.jobs.or(f.jobs));
    let id: CheckId = a
        .check
        .or_else(|| f.check.clone())
        .unwrap_or_else(|| "QUAD".into())
        .parse()?;
    let opts = build_options(&a.common, &f);
    let report = crosscheck(id, &opts)?;
    emit(&summarize(&report))?;
    write_report(&out_path(&a.common, &f), &report)?;
    Ok(if report.violation {
        Outcome::Flagged
    } else {
        Outcome::Clean
    })
}

fn load_matrix(path: &PathBuf) -> anyhow::Result<Hermitian64> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading matrix {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing matrix {}", path.display()))
}

fn run_eval(a: EvalArgs) -> anyhow::Result<Outcome> {
    let f = load_file_config(&a.common.config)?;
    let kernel = a.kernel.or_else(|| f.kernel.clone());
    let map = a.map.or_else(|| f.map.clone());
    let p = a.p.or(f.p);
    match (kernel, map) {
        (Some(_), Some(_)) => bail!("pass either --kernel or --map, not both"),
        (None, Some(m)) => {
            let id: MapId = m.parse()?;
            let p = p.unwrap_or_else(|| default_single_p(id));
            let paths = a
                .inputs
                .or_else(|| f.inputs.clone())
                .ok_or_else(|| anyhow!("--map evaluation needs --inputs <files>"))?;
            let mats: Vec<Hermitian64> = paths
                .iter()
                .map(load_matrix)
                .collect::<anyhow::Result<_>>()?;
            let dim = mats
                .first()
                .ok_or_else(|| anyhow!("--inputs must name at least one matrix"))?
                .dim();
            let nodes = a
                .common
                .quadrature_nodes
                .or(f.quadrature_nodes)
                .unwrap_or(CertifyOptions::default().quadrature_nodes);
            let spec = MapSpec::new(id, p, dim);
            let op = build_map::<f64>(&spec, nodes)?;
            let value = op.eval(&mats)?;
            emit(&serde_json::to_string_pretty(&value)?)?;
            let report = serde_json::json!({
                "map": id.to_string(), "p": p, "dim": dim, "output": value,
            });
            write_report(&out_path(&a.common, &f), &report)?;
            Ok(Outcome::Clean)
        }
        (kernel, None) => {
            let id: KernelId = kernel.unwrap_or_else(|| "G21".into()).parse()?;
            let k = ScalarKernel::<f64>::new(id, p.unwrap_or(0.5))?;
            let args = a.args.or_else(|| f.args.clone()).unwrap_or(vec![2.0, 3.0]);
            let value = kernel_eval(&k, &args)?;
            emit(&value.to_string())?;
            let report = serde_json::json!({
                "kernel": id.to_string(), "p": k.p(), "args": args, "value": value,
            });
            write_report(&out_path(&a.common, &f), &report)?;
            Ok(Outcome::Clean)
        }
    }
}

fn run_suite_cmd(a: SuiteArgs) -> anyhow::Result<Outcome> {
    let f = load_file_config(&a.common.config)?;
    configure_jobs(a.common.jobs.or(f.jobs));
    let opts = build_options(&a.common, &f);
    // positives default to 200 trials, the negative control to 500; an
    // explicit trial count overrides both
    let neg_trials = a.common.trials.or(f.trials).unwrap_or(NEG_CONTROL_TRIALS);
    let p_override = a.p.or(f.p);
    let dims: Vec<usize> = match a.dim.or(f.dim) {
        Some(d) => vec![d],
        None => SUITE_DIMS.to_vec(),
    };
    let report = run_suite_with(&opts, neg_trials, p_override, &dims)?;
    for r in &report.reports {
        emit(&summarize(r))?;
    }
    emit(&format!(
        "suite: {}",
        if report.passed { "PASS" } else { "FAIL" }
    ))?;
    write_report(&out_path(&a.common, &f), &report)?;
    Ok(if report.passed {
        Outcome::Clean
    } else {
        Outcome::Flagged
    })
}
