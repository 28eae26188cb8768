//! Command line entry point: one binary, subcommands `funcalc`, `norm`,
//! `rsbound`, and `tl` (equiv | hinf | laplacian | embed | retract | shift).
//!
//! Exit codes: 0 on success or a stable verdict, 1 on an unstable verdict,
//! 2 on configuration or certification errors. Reports are JSON with fixed
//! field order and 17-significant-digit floats, written atomically, so runs
//! with identical config and seed are byte-identical. `SECTLAB_THREADS`
//! caps worker parallelism (default: available cores).

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use sectlab_core::error::Error;
use sectlab_core::funcalc::{contour_apply_checked, parse_symbol, ContourSpec};
use sectlab_core::grid::{Exponent, GridDocument, GridFunction};
use sectlab_core::operators::{OperatorHandle, OperatorSpec};
use sectlab_core::report::{emit_csv, emit_json, Envelope};
use sectlab_core::rsbound::{
    estimate_rs_bound, growth_scan, lambda_sample, rs_sectoriality_scan, OperatorFamily,
};
use sectlab_core::spower::{NormEvaluator, NormMode, NormSpec, WindowSpec};
use sectlab_core::tllab::{
    embedding_experiment, hinf_tl_bound_experiment, input_suite,
    laplacian_littlewood_paley_experiment, norm_equivalence_experiment,
    retraction_experiment_full, shift_invariance_experiment, EquivalenceReport,
    LaplacianLpConfig, Verdict,
};

#[derive(Parser)]
#[command(name = "sectlab", version, about = "sectorial operator laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply a holomorphic symbol to an operator by contour quadrature.
    Funcalc(FuncalcArgs),
    /// Evaluate an s-power function norm.
    Norm(NormArgs),
    /// Estimate R_s-bounds (lower-bound search, optional growth scan).
    Rsbound(RsboundArgs),
    /// Run a norm-equivalence / boundedness experiment.
    #[command(subcommand)]
    Tl(TlCommand),
}

#[derive(Args)]
struct FuncalcArgs {
    /// Operator spec JSON file
    #[arg(long)]
    operator: PathBuf,
    /// Symbol, e.g. rho_1 or exp_alpha:1
    #[arg(long)]
    symbol: String,
    /// Contour angle override
    #[arg(long)]
    omega: Option<f64>,
    /// Nodes per contour ray
    #[arg(long, default_value_t = 400)]
    nodes: usize,
    /// Log-truncation half width
    #[arg(long, default_value_t = 18.0, value_name = "L")]
    l: f64,
    /// Input grid-function JSON file
    #[arg(long)]
    input: PathBuf,
    /// Output JSON path
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct NormArgs {
    #[arg(long)]
    operator: PathBuf,
    #[arg(long)]
    symbol: String,
    #[arg(long, default_value_t = 0.0)]
    theta: f64,
    /// Inner exponent s in [1, inf]
    #[arg(long, default_value = "2")]
    s: String,
    /// continuous | dyadic | unit_interval | besov_dyadic
    #[arg(long, default_value = "continuous")]
    mode: String,
    /// Explicit window "t_min,t_max" (continuous) or "j_min,j_max" (dyadic)
    #[arg(long)]
    window: Option<String>,
    /// Add the ||x||_X term
    #[arg(long, default_value_t = false)]
    inhomogeneous: bool,
    #[arg(long)]
    input: PathBuf,
    /// Report JSON path
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct RsboundArgs {
    /// Family: onb-map:S | onb-map:T | maximal | resolvent:<sigma> | a JSON
    /// operator-spec file (one spec or a list)
    #[arg(long)]
    family: String,
    /// Operator spec file for resolvent families
    #[arg(long)]
    operator: Option<PathBuf>,
    #[arg(long, default_value = "2")]
    s: String,
    #[arg(long, default_value_t = 4000)]
    budget: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run a growth scan over tuple sizes 2,4,...,n_max
    #[arg(long, value_name = "N_MAX")]
    growth_scan: Option<usize>,
    /// Grid size for built-in families
    #[arg(long, default_value_t = 1024)]
    grid_size: usize,
    #[arg(long)]
    output: PathBuf,
    /// Optional CSV of the search trace (iteration, best ratio)
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Subcommand)]
enum TlCommand {
    /// Ratio interval between two auxiliary-symbol norms.
    Equiv(EquivArgs),
    /// Sup of ||f(A)x|| / ||x|| over a growing H-infinity unit-ball family.
    Hinf(HinfArgs),
    /// Operator norm of the periodic Laplacian vs Littlewood-Paley.
    Laplacian(LaplacianArgs),
    /// Elementary embedding inequalities.
    Embed(EmbedArgs),
    /// Retraction/coretraction identity PJ = I.
    Retract(RetractArgs),
    /// Homogeneous vs inhomogeneous norms and the epsilon shift.
    Shift(ShiftArgs),
}

#[derive(Args)]
struct SuiteArgs {
    #[arg(long, default_value_t = 16)]
    suite: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
    /// Optional CSV of per-input ratios
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct EquivArgs {
    #[arg(long)]
    operator: PathBuf,
    #[arg(long)]
    phi: String,
    #[arg(long)]
    psi: String,
    #[arg(long, default_value_t = 0.0)]
    theta: f64,
    #[arg(long, default_value = "2")]
    s: String,
    #[arg(long, default_value_t = 1)]
    refinements: usize,
    /// Stability threshold for the interval under refinement
    #[arg(long, default_value_t = 0.05)]
    threshold: f64,
    #[command(flatten)]
    suite: SuiteArgs,
}

#[derive(Args)]
struct HinfArgs {
    #[arg(long)]
    operator: PathBuf,
    #[arg(long, default_value = "rho_1")]
    phi: String,
    #[arg(long, default_value_t = 0.0)]
    theta: f64,
    #[arg(long, default_value = "2")]
    s: String,
    /// Comma-separated doubling schedule of family sizes
    #[arg(long, default_value = "4,8,16,32")]
    family_sizes: String,
    #[arg(long, default_value_t = 0.02)]
    threshold: f64,
    #[command(flatten)]
    suite: SuiteArgs,
}

#[derive(Args)]
struct LaplacianArgs {
    #[arg(long, default_value_t = 1024)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    power: u32,
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    #[arg(long, default_value_t = 2.0)]
    s: f64,
    #[arg(long, default_value_t = 0.0)]
    theta: f64,
    #[arg(long, default_value_t = 0.05)]
    threshold: f64,
    #[command(flatten)]
    suite: SuiteArgs,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    operator: PathBuf,
    #[arg(long, default_value = "rho_1")]
    phi: String,
    /// "theta,theta'" with theta' >= theta > 0
    #[arg(long, default_value = "0.3,0.6")]
    theta_pair: String,
    /// "r,s" with r <= s
    #[arg(long, default_value = "1,2")]
    s_pair: String,
    #[command(flatten)]
    suite: SuiteArgs,
}

#[derive(Args)]
struct RetractArgs {
    #[arg(long)]
    operator: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    theta: f64,
    #[arg(long, default_value = "2")]
    s: String,
    #[arg(long, default_value_t = 30)]
    trunc: i32,
    #[command(flatten)]
    suite: SuiteArgs,
}

#[derive(Args)]
struct ShiftArgs {
    #[arg(long)]
    operator: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    eps: f64,
    #[arg(long, default_value_t = 0.5)]
    theta: f64,
    #[arg(long, default_value = "2")]
    s: String,
    #[arg(long, default_value = "rho_1")]
    phi: String,
    #[command(flatten)]
    suite: SuiteArgs,
}

fn main() -> ExitCode {
    configure_threads();
    let cli = Cli::parse();
    match run(cli) {
        Ok(stable) => {
            if stable {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(err) => {
            eprintln!("sectlab-error: {err}");
            ExitCode::from(2)
        }
    }
}

fn configure_threads() {
    let threads = std::env::var("SECTLAB_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|v| *v > 0);
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn load_operator(path: &Path) -> Result<Arc<OperatorHandle>, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let spec: OperatorSpec = serde_json::from_str(&text)?;
    Ok(Arc::new(spec.build()?))
}

fn load_input(path: &Path) -> Result<GridFunction, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let doc: GridDocument = serde_json::from_str(&text)?;
    doc.to_function()
}

fn parse_exponent(text: &str) -> Result<Exponent, Error> {
    Exponent::parse(text)
}

fn parse_pair(text: &str) -> Result<(f64, f64), Error> {
    let mut parts = text.split(',');
    let a = parts
        .next()
        .and_then(|p| p.trim().parse::<f64>().ok())
        .ok_or_else(|| Error::Config(format!("bad pair `{text}`")))?;
    let b = parts
        .next()
        .and_then(|p| p.trim().parse::<f64>().ok())
        .ok_or_else(|| Error::Config(format!("bad pair `{text}`")))?;
    Ok((a, b))
}

fn emit_equivalence(
    report: &EquivalenceReport,
    config: serde_json::Value,
    seed: u64,
    output: &Path,
    csv: Option<&Path>,
) -> Result<bool, Error> {
    if let Some(csv_path) = csv {
        let rows: Vec<(f64, f64)> =
            report.ratios.iter().enumerate().map(|(i, r)| (i as f64, *r)).collect();
        emit_csv(("input_index", "ratio"), &rows, csv_path)?;
    }
    let stable = report.verdict == Verdict::Stable;
    emit_json(&Envelope::new(seed, config, report), output)?;
    Ok(stable)
}

fn run(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Funcalc(args) => {
            let op = load_operator(&args.operator)?;
            let symbol = parse_symbol(&args.symbol)?;
            let x = load_input(&args.input)?;
            let spec = ContourSpec {
                omega: args.omega,
                nodes_per_ray: args.nodes,
                half_width: args.l,
            };
            let y = contour_apply_checked(&op, &symbol, &spec, &x)?;
            emit_json(&GridDocument::from_function(&y), &args.output)?;
            Ok(true)
        }
        Command::Norm(args) => {
            let op = load_operator(&args.operator)?;
            let symbol = parse_symbol(&args.symbol)?;
            let x = load_input(&args.input)?;
            let s = parse_exponent(&args.s)?;
            let mode = match args.mode.as_str() {
                "continuous" => NormMode::Continuous,
                "dyadic" => NormMode::Dyadic,
                "unit_interval" => NormMode::UnitInterval,
                "besov_dyadic" => NormMode::BesovDyadic,
                other => return Err(Error::Config(format!("unknown mode `{other}`"))),
            };
            let mut spec = NormSpec::new(args.theta, s, mode);
            spec.inhomogeneous = args.inhomogeneous;
            if let Some(window) = &args.window {
                let (a, b) = parse_pair(window)?;
                spec = spec.with_window(match mode {
                    NormMode::Dyadic | NormMode::BesovDyadic => {
                        WindowSpec::Dyadic { j_min: a as i32, j_max: b as i32 }
                    }
                    _ => WindowSpec::Continuous { t_min: a, t_max: b },
                });
            }
            let report = NormEvaluator::new(op, &symbol, spec)?.norm(&x)?;
            let config = json!({
                "operator": args.operator.display().to_string(),
                "symbol": args.symbol,
                "theta": args.theta,
                "s": args.s,
                "mode": args.mode,
                "window": args.window,
                "inhomogeneous": args.inhomogeneous,
            });
            emit_json(&Envelope::new(0, config, &report), &args.report)?;
            Ok(report.tail_ok)
        }
        Command::Rsbound(args) => run_rsbound(args),
        Command::Tl(tl) => run_tl(tl),
    }
}

fn run_rsbound(args: RsboundArgs) -> Result<bool, Error> {
    let s = parse_exponent(&args.s)?;
    let p = Exponent::Finite(2.0);
    let max_rank = args.growth_scan.unwrap_or(8);
    let family = match args.family.as_str() {
        "onb-map:S" => OperatorFamily::onb(
            sectlab_core::operators::OnbDirection::S,
            max_rank,
            args.grid_size,
            p,
        )?,
        "onb-map:T" => OperatorFamily::onb(
            sectlab_core::operators::OnbDirection::T,
            max_rank,
            args.grid_size,
            p,
        )?,
        "maximal" => {
            let grid = sectlab_core::grid::MeasureGrid::uniform(args.grid_size, 1.0, p)?;
            OperatorFamily::maximal(grid)?
        }
        text if text.starts_with("resolvent:") => {
            let sigma: f64 = text["resolvent:".len()..]
                .parse()
                .map_err(|_| Error::Config(format!("bad resolvent sigma in `{text}`")))?;
            let op_path = args
                .operator
                .as_ref()
                .ok_or_else(|| Error::Config("resolvent family needs --operator".into()))?;
            let op = load_operator(op_path)?;
            let lambdas = lambda_sample(sigma, 12, 3);
            let report = rs_sectoriality_scan(op, s, sigma, &lambdas, args.budget, args.seed)?;
            let config = json!({
                "family": args.family,
                "s": args.s,
                "budget": args.budget,
                "grid_size": args.grid_size,
            });
            if let Some(trace_path) = &args.trace {
                let rows: Vec<(f64, f64)> =
                    report.trace.iter().enumerate().map(|(i, r)| (i as f64, *r)).collect();
                emit_csv(("iteration", "best_ratio"), &rows, trace_path)?;
            }
            emit_json(&Envelope::new(args.seed, config, &report), &args.output)?;
            return Ok(true);
        }
        path => {
            // operator spec file: one spec or a list of specs
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read family `{path}`: {e}")))?;
            let specs: Vec<OperatorSpec> = match serde_json::from_str::<Vec<OperatorSpec>>(&text) {
                Ok(list) => list,
                Err(_) => vec![serde_json::from_str::<OperatorSpec>(&text)?],
            };
            let mut members: Vec<Arc<dyn sectlab_core::operators::ApplyOp>> = Vec::new();
            let mut grid = None;
            for spec in &specs {
                let op = spec.build()?;
                if grid.is_none() {
                    grid = Some(op.grid().clone());
                }
                members.push(Arc::new(op));
            }
            let grid = grid.ok_or(Error::EmptyFamily)?;
            OperatorFamily::from_members(format!("file:{path}"), members, grid)
        }
    };
    let config = json!({
        "family": args.family,
        "s": args.s,
        "budget": args.budget,
        "growth_scan": args.growth_scan,
        "grid_size": args.grid_size,
    });
    if let Some(n_max) = args.growth_scan {
        let mut sizes = Vec::new();
        let mut n = 2usize;
        while n <= n_max {
            sizes.push(n);
            n *= 2;
        }
        let report = growth_scan(&family, s, &sizes, args.budget, args.seed)?;
        if let Some(trace_path) = &args.trace {
            let rows: Vec<(f64, f64)> =
                report.points.iter().map(|pt| (pt.n as f64, pt.ratio)).collect();
            emit_csv(("tuple_size", "best_ratio"), &rows, trace_path)?;
        }
        emit_json(&Envelope::new(args.seed, config, &report), &args.output)?;
        Ok(true)
    } else {
        let report = estimate_rs_bound(&family, s, args.budget, args.seed, None)?;
        if let Some(trace_path) = &args.trace {
            let rows: Vec<(f64, f64)> =
                report.trace.iter().enumerate().map(|(i, r)| (i as f64, *r)).collect();
            emit_csv(("iteration", "best_ratio"), &rows, trace_path)?;
        }
        emit_json(&Envelope::new(args.seed, config, &report), &args.output)?;
        Ok(true)
    }
}

fn run_tl(tl: TlCommand) -> Result<bool, Error> {
    match tl {
        TlCommand::Equiv(args) => {
            let op = load_operator(&args.operator)?;
            let s = parse_exponent(&args.s)?;
            let phi = parse_symbol(&args.phi)?;
            let psi = parse_symbol(&args.psi)?;
            let suite = input_suite(&op, args.suite.suite, args.suite.seed)?;
            let report = norm_equivalence_experiment(
                &op,
                args.theta,
                s,
                &phi,
                &psi,
                &suite,
                args.refinements,
                args.threshold,
                args.suite.seed,
            )?;
            let config = json!({
                "experiment": "equiv",
                "operator": args.operator.display().to_string(),
                "phi": args.phi,
                "psi": args.psi,
                "theta": args.theta,
                "s": args.s,
                "refinements": args.refinements,
                "threshold": args.threshold,
                "suite": args.suite.suite,
            });
            emit_equivalence(&report, config, args.suite.seed, &args.suite.output, args.suite.csv.as_deref())
        }
        TlCommand::Hinf(args) => {
            let op = load_operator(&args.operator)?;
            let s = parse_exponent(&args.s)?;
            let phi = parse_symbol(&args.phi)?;
            let sizes: Vec<usize> = args
                .family_sizes
                .split(',')
                .map(|t| t.trim().parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|_| Error::Config(format!("bad family sizes `{}`", args.family_sizes)))?;
            let suite = input_suite(&op, args.suite.suite, args.suite.seed)?;
            let report = hinf_tl_bound_experiment(
                &op,
                args.theta,
                s,
                &phi,
                &sizes,
                &suite,
                args.threshold,
                args.suite.seed,
            )?;
            let config = json!({
                "experiment": "hinf",
                "operator": args.operator.display().to_string(),
                "phi": args.phi,
                "theta": args.theta,
                "s": args.s,
                "family_sizes": args.family_sizes,
                "threshold": args.threshold,
                "suite": args.suite.suite,
            });
            emit_equivalence(&report, config, args.suite.seed, &args.suite.output, args.suite.csv.as_deref())
        }
        TlCommand::Laplacian(args) => {
            let cfg = LaplacianLpConfig {
                n: args.n,
                power: args.power,
                p: args.p,
                s: args.s,
                theta: args.theta,
                suite_size: args.suite.suite,
                seed: args.suite.seed,
                threshold: args.threshold,
            };
            let report = laplacian_littlewood_paley_experiment(&cfg)?;
            let config = json!({
                "experiment": "laplacian",
                "n": args.n,
                "power": args.power,
                "p": args.p,
                "s": args.s,
                "theta": args.theta,
                "threshold": args.threshold,
                "suite": args.suite.suite,
            });
            emit_equivalence(&report, config, args.suite.seed, &args.suite.output, args.suite.csv.as_deref())
        }
        TlCommand::Embed(args) => {
            let op = load_operator(&args.operator)?;
            let phi = parse_symbol(&args.phi)?;
            let theta_pair = parse_pair(&args.theta_pair)?;
            let s_pair = parse_pair(&args.s_pair)?;
            let suite = input_suite(&op, args.suite.suite, args.suite.seed)?;
            let report =
                embedding_experiment(&op, theta_pair, s_pair, &phi, &suite, args.suite.seed)?;
            let config = json!({
                "experiment": "embed",
                "operator": args.operator.display().to_string(),
                "phi": args.phi,
                "theta_pair": args.theta_pair,
                "s_pair": args.s_pair,
                "suite": args.suite.suite,
            });
            emit_equivalence(&report, config, args.suite.seed, &args.suite.output, args.suite.csv.as_deref())
        }
        TlCommand::Retract(args) => {
            let op = load_operator(&args.operator)?;
            let s = parse_exponent(&args.s)?;
            let suite = input_suite(&op, args.suite.suite, args.suite.seed)?;
            let outcome = retraction_experiment_full(
                &op,
                args.alpha,
                args.theta,
                s,
                args.trunc,
                &suite,
                args.suite.seed,
            )?;
            let config = json!({
                "experiment": "retract",
                "operator": args.operator.display().to_string(),
                "alpha": args.alpha,
                "theta": args.theta,
                "s": args.s,
                "trunc": args.trunc,
                "suite": args.suite.suite,
            });
            emit_equivalence(
                &outcome.report,
                config,
                args.suite.seed,
                &args.suite.output,
                args.suite.csv.as_deref(),
            )
        }
        TlCommand::Shift(args) => {
            let op = load_operator(&args.operator)?;
            let s = parse_exponent(&args.s)?;
            let phi = parse_symbol(&args.phi)?;
            let text = std::fs::read_to_string(&args.operator)
                .map_err(|e| Error::Config(format!("cannot reread operator spec: {e}")))?;
            let mut spec: OperatorSpec = serde_json::from_str(&text)?;
            spec.shift = Some(spec.shift.unwrap_or(0.0) + args.eps);
            let shifted = Arc::new(spec.build()?);
            let suite = input_suite(&op, args.suite.suite, args.suite.seed)?;
            let report = shift_invariance_experiment(
                &op,
                &shifted,
                args.theta,
                s,
                &phi,
                &suite,
                args.suite.seed,
            )?;
            let config = json!({
                "experiment": "shift",
                "operator": args.operator.display().to_string(),
                "eps": args.eps,
                "theta": args.theta,
                "s": args.s,
                "phi": args.phi,
                "suite": args.suite.suite,
            });
            emit_equivalence(&report, config, args.suite.seed, &args.suite.output, args.suite.csv.as_deref())
        }
    }
}
