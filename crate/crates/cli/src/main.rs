use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use gradflow::harness::{self, converge, emit_table, parse_steps, OracleChoice, RunConfig, SchemeName};
use gradflow::linalg::LinearSolver;
use gradflow::metric::substep_targets;
use gradflow::problems::MetricKind;
use gradflow::tableau::{builtin, Tableau, BUILTIN_NAMES};
use gradflow::verify::{compute_beta, order_of, polish, polish_to, stability_threshold, Convention};

/// Energy-stable multistage schemes for gradient flows.
#[derive(Parser)]
#[command(name = "gradflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a time-step refinement sweep and report errors and observed orders.
    Run(RunArgs),
    /// Check stability thresholds and order conditions of tableaus.
    Verify(VerifyArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// Flat `key = value` file; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    problem: Option<String>,
    /// One of be, si2, si3, fi2, fi3, step2, step3, step2_fi, step3_fi.
    #[arg(long)]
    scheme: Option<SchemeName>,
    /// `2^a..2^b` or a comma list.
    #[arg(long)]
    steps: Option<String>,
    /// Use coefficients polished onto the order conditions.
    #[arg(long)]
    polish: bool,
    /// Points per axis.
    #[arg(long)]
    grid: Option<usize>,
    /// Directory for CSV, table and field output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace the experiment's metric (identity, hminus1, wasserstein, mobility).
    #[arg(long)]
    metric: Option<MetricKind>,
    #[arg(long)]
    final_time: Option<f64>,
    /// Linear solver for stage systems: direct or cg.
    #[arg(long)]
    solver: Option<String>,
    /// Compare against the closed-form solution instead of a reference run.
    #[arg(long, conflicts_with = "reference_steps")]
    exact: bool,
    /// Step count of the reference run.
    #[arg(long)]
    reference_steps: Option<usize>,
    /// Skip writing energy traces.
    #[arg(long)]
    no_monitor: bool,
}

#[derive(clap::Args)]
struct VerifyArgs {
    /// Builtin name or tableau file; all builtins when omitted.
    target: Option<String>,
    /// Polish to this order and report the result.
    #[arg(long)]
    polish: Option<u32>,
    #[arg(long, default_value_t = 1.0)]
    scan_max: f64,
    /// Also print `key=value` lines.
    #[arg(long)]
    machine: bool,
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("GRADFLOW_THREADS") {
        let n: usize = v.parse().with_context(|| format!("GRADFLOW_THREADS={v}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            Some(RunConfig::parse(&text)?)
        }
        None => None,
    };
    let problem = args.problem.clone().or_else(|| cfg.as_ref().map(|c| c.problem.clone()));
    let scheme = args.scheme.or_else(|| cfg.as_ref().map(|c| c.scheme));
    let steps = match &args.steps {
        Some(s) => Some(parse_steps(s)?),
        None => cfg.as_ref().map(|c| c.steps.clone()),
    };
    let (Some(problem), Some(scheme), Some(steps)) = (problem, scheme, steps) else {
        bail!("--problem, --scheme and --steps are required (directly or via --config)");
    };
    let mut c = cfg.take().unwrap_or_else(|| RunConfig::new(&problem, scheme, steps.clone()));
    c.problem = problem;
    c.scheme = scheme;
    c.steps = steps;
    c.polish |= args.polish;
    c.grid = args.grid.or(c.grid);
    c.out = args.out.clone().or(c.out);
    c.metric = args.metric.or(c.metric);
    c.final_time = args.final_time.or(c.final_time);
    if args.no_monitor {
        c.monitor = false;
    }
    if let Some(s) = &args.solver {
        c.solver = match s.as_str() {
            "direct" => LinearSolver::Direct,
            "cg" => LinearSolver::Cg,
            other => bail!("unknown solver '{other}'"),
        };
    }
    if args.exact {
        c.oracle = OracleChoice::Exact;
    } else if let Some(n) = args.reference_steps {
        c.oracle = OracleChoice::Reference { steps: Some(n), refine: 1, extrapolate: true };
    }
    c.validate()?;
    Ok(c)
}

fn cmd_run(args: &RunArgs) -> Result<ExitCode> {
    let cfg = run_config(args)?;
    let report = converge(&cfg)?;
    print!("{}", emit_table(&report));
    if let Some(dir) = &cfg.out {
        println!("wrote {}", dir.display());
    }
    let failed = report.failures().count() > 0;
    Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn load_tableau(target: &str) -> Result<Tableau> {
    if BUILTIN_NAMES.contains(&target) {
        return Ok(builtin(target)?);
    }
    let path = Path::new(target);
    if path.exists() {
        return Ok(Tableau::load(path)?);
    }
    bail!("'{target}' is neither a builtin ({}) nor a file", BUILTIN_NAMES.join(", "))
}

fn cmd_verify(args: &VerifyArgs) -> Result<ExitCode> {
    let Some(target) = &args.target else {
        let report = harness::verify_all(args.scan_max);
        print!("{}", report.text);
        return Ok(if report.ok() { ExitCode::SUCCESS } else { ExitCode::FAILURE });
    };
    let t = load_tableau(target)?;
    let conv = Convention::for_tableau(&t);
    let stab = stability_threshold(&t, args.scan_max);
    let beta = compute_beta(&t, conv)?;
    let order = order_of(&t, 1e-2, conv)?;
    let mut ok = true;
    println!("{stab}");
    println!("  stages {}, claimed order {}, order (tol 1e-2) {order}", t.stages(), t.claimed_order);
    for (r, b) in beta.iter().enumerate() {
        println!("  beta{} = {b:.12}", r + 1);
    }
    if let Some(claimed) = t.claimed_threshold {
        let rel = (stab.threshold - claimed).abs() / claimed;
        ok &= rel <= harness::THRESHOLD_REL_TOL;
        println!("  claimed threshold {claimed:.6e} (relative difference {rel:.3})");
    }
    ok &= order >= t.claimed_order;
    let mut polished = None;
    if let Some(p) = args.polish {
        let result = match substep_targets(&t.label) {
            Some((targets, conv)) if p == t.claimed_order => polish_to(&t, targets, conv, args.scan_max),
            _ => polish(&t, p),
        };
        match result {
            Ok(rep) => {
                println!(
                    "  polished: {} iterations, residual {:.2e}, max gamma change {:.2e}, threshold {:.6e}",
                    rep.iterations, rep.residual, rep.max_gamma_change, rep.threshold_after
                );
                print!("{}", rep.tableau.to_text());
                polished = Some(rep);
            }
            Err(e) => {
                println!("  polish failed: {e}");
                ok = false;
            }
        }
    }
    if args.machine {
        println!("label={}", t.label);
        println!("threshold={:e}", stab.threshold);
        println!("unbounded={}", stab.unbounded);
        println!("feasible_at_zero={}", stab.feasible_at_zero);
        println!("monotone={}", stab.monotone);
        println!("theta_ok={}", stab.theta_ok);
        println!("order={order}");
        for (r, b) in beta.iter().enumerate() {
            println!("beta{}={b:e}", r + 1);
        }
        if let Some(rep) = &polished {
            println!("polish_residual={:e}", rep.residual);
            println!("polish_threshold={:e}", rep.threshold_after);
        }
        println!("ok={ok}");
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Verify(a) => cmd_verify(a),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
