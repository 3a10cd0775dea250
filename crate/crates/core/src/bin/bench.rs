use std::path::PathBuf;
use std::process::ExitCode;

use astpa::bench::{
    emit_report, registry, run_benchmark, verify, BenchmarkSpec, EstimatorKind, Overrides, RunFile, RunReport, Suite,
};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bench", version, about = "Repeated-trial rare-event benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one estimator on one registry problem and write CSV and JSON reports.
    Run(RunArgs),
    /// List the registry problems with their default parameters.
    List,
    /// Run the self-check suites.
    Verify {
        #[arg(long, value_parser = parse_suite)]
        suite: Suite,
        /// Repetitions per row for the tables suite.
        #[arg(long, default_value_t = 10)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "astpa-qnp")]
        estimator: EstimatorKind,
        /// Only rows whose id starts with this prefix.
        #[arg(long)]
        problem: Option<String>,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    estimator: Option<EstimatorKind>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "ASTPA_BENCH_OUT")]
    out: Option<PathBuf>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
    /// Chain length (ASTPA), samples per level (SuS) or sample count (MC).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n_total: Option<u64>,
    #[arg(long)]
    diag_mass: Option<bool>,
    #[arg(long)]
    curvature_threshold: Option<f64>,
    /// Worker threads; 0 uses all cores.
    #[arg(long)]
    parallelism: Option<usize>,
    /// `key = value` file; its entries override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    s.parse().map_err(|e: astpa::Error| e.to_string())
}

fn run(args: RunArgs) -> astpa::Result<()> {
    let file = match &args.config {
        Some(path) => RunFile::read(path)?,
        None => RunFile::default(),
    };
    let problem = file
        .problem
        .clone()
        .or(args.problem)
        .ok_or_else(|| astpa::Error::Config("missing --problem".into()))?;
    let estimator = file.estimator.or(args.estimator).unwrap_or(EstimatorKind::AstpaQnp);
    let mut spec = BenchmarkSpec::new(&problem, estimator)?;
    if let Some(reps) = file.reps.or(args.reps) {
        spec.reps = reps;
    }
    spec.seed_base = file.seed.or(args.seed).unwrap_or(0);
    spec.parallelism = file.parallelism.or(args.parallelism).unwrap_or(0);
    let mut overrides = Overrides {
        sigma: args.sigma,
        q: args.q,
        n: args.n,
        burnin: args.burnin,
        m: args.m,
        n_total: args.n_total,
        diag_mass: args.diag_mass,
        curvature_threshold: args.curvature_threshold,
    };
    file.apply(&mut overrides);
    spec.overrides = overrides;
    let out = file.out.or(args.out).unwrap_or_else(|| PathBuf::from("bench-out"));

    let summary = run_benchmark(&spec)?;
    let fmt = |x: Option<f64>, prec: usize| x.map_or("-".to_string(), |v| format!("{v:.prec$e}"));
    println!(
        "{} {}: E[N_Total] {}  C.o.V {}  E[p] {}  E[analytical C.o.V] {}  ({}/{} completed)",
        summary.problem,
        summary.estimator,
        summary.mean_n_total.map_or("-".into(), |v| format!("{v:.0}")),
        fmt(summary.sampling_cov, 2),
        fmt(summary.mean_p, 3),
        fmt(summary.mean_analytical_cov, 2),
        summary.completed,
        summary.reps
    );
    if let Some(p) = summary.published {
        println!("published: N_Total {:.0}  C.o.V {:.2}  E[p] {:.3e}", p.n_total, p.cov, p.p);
    }
    let files = emit_report(&RunReport::new(&spec, summary), &out)?;
    println!("wrote {} and {}", files.csv.display(), files.json.display());
    Ok(())
}

fn list() {
    println!("{:<12} {:>4} {:>6} {:>5} {:>10} {:>10}", "id", "d", "sigma", "q", "N_Total", "E[p]");
    for p in registry() {
        println!(
            "{:<12} {:>4} {:>6} {:>5} {:>10.0} {:>10.3e}",
            p.id, p.dim, p.params.sigma, p.params.q, p.qnp.n_total, p.qnp.p
        );
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::List => {
            list();
            Ok(())
        }
        Command::Verify { suite, reps, seed, estimator, problem } => {
            let checks = match suite {
                Suite::Properties => verify::properties(seed),
                Suite::Tables => verify::tables(estimator, reps, seed, problem.as_deref()),
            };
            checks.map(|checks| {
                for c in &checks {
                    println!("{c}");
                }
                let failed = checks.iter().filter(|c| !c.passed).count();
                println!("{} checks, {failed} failed", checks.len());
                if failed > 0 {
                    std::process::exit(1);
                }
            })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
