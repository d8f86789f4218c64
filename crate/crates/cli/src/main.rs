use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use cubesparse::experiments::{
    self, check_far_target_probability, check_interior_exactness, lambda_for_multiplier, ExperimentReport,
    SamplingConfig,
};
use cubesparse::io::{read_instance, to_json_string, write_json};
use cubesparse::numeric::loglog_slope;
use cubesparse::proximity::{round_fractional_part, DEFAULT_ENUM_CAP};
use cubesparse::relaxation::{default_epsilon, reduce_to_few_fractionals, solve_relaxation, DEFAULT_MAX_ITERS};
use cubesparse::rng;
use cubesparse::solver::{
    oracle_work, solve_exact, solve_oracle, SupportSizes, Strategy, DEFAULT_ORACLE_CAP, DEFAULT_SUPPORT_GUESS_CAP,
};
use cubesparse::{Error, ProblemInstance, SolverConfig, SparseSolution};

const EXIT_ACCEPTANCE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_CAP: u8 = 3;

/// Exact sparse approximation over the unit cube and its bounded variant.
#[derive(Parser)]
#[command(name = "cubesparse", version)]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve an instance exactly and print the report.
    Solve(SolveArgs),
    /// Solve only the convex relaxation.
    Relax(RelaxArgs),
    /// Brute-force reference solution.
    Oracle(OracleArgs),
    /// Print a random instance.
    Generate(GenerateArgs),
    /// Monte-Carlo checks of the easy-target geometry.
    Experiment {
        #[command(subcommand)]
        kind: ExperimentCommand,
    },
    /// Time the solver over growing `n` at fixed `m`.
    Bench(BenchArgs),
}

#[derive(Args, Clone)]
struct InstanceArgs {
    /// Instance JSON file.
    path: PathBuf,
    /// Replace the sparsity budget.
    #[arg(long)]
    sigma_override: Option<usize>,
    /// Give every variable the upper bound `U`.
    #[arg(long = "u-mode", value_name = "U")]
    u_mode: Option<i64>,
}

impl InstanceArgs {
    fn load(&self) -> Result<ProblemInstance, Error> {
        let mut inst = read_instance(&self.path)?;
        if let Some(s) = self.sigma_override {
            inst = inst.with_sigma(s)?;
        }
        if let Some(u) = self.u_mode {
            inst = inst.with_upper_bounds(vec![u; inst.n()])?;
        }
        Ok(inst)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Grouped,
    PerTarget,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    /// Relaxation accuracy (default `sqrt(m) * ||A||_inf`).
    #[arg(long)]
    epsilon: Option<f64>,
    /// Recorded in the report.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cross-check against the brute-force oracle when it is within its cap.
    #[arg(long)]
    check_oracle: bool,
    /// Accept a result whose search was cut short by a cap.
    #[arg(long)]
    allow_heuristic: bool,
    /// Largest candidate box accepted.
    #[arg(long, default_value_t = DEFAULT_ENUM_CAP)]
    enum_cap: u64,
    /// Most support guesses tried.
    #[arg(long, default_value_t = DEFAULT_SUPPORT_GUESS_CAP)]
    support_cap: u64,
    /// Oracle work cap, in least-squares solves.
    #[arg(long, default_value_t = DEFAULT_ORACLE_CAP)]
    oracle_cap: u64,
    /// Guess every fractional-support size from 0 to min(m, sigma, n) (default).
    #[arg(long = "exhaustive-F", alias = "exhaustive-f", conflicts_with = "full_f")]
    exhaustive_f: bool,
    /// Guess only fractional supports of size min(m, sigma, n).
    #[arg(long = "full-F", visible_alias = "full-f", alias = "paper-F")]
    full_f: bool,
    #[arg(long, value_enum, default_value = "grouped")]
    strategy: StrategyArg,
    /// Keep searching after the relaxation lower bound is met.
    #[arg(long)]
    no_early_stop: bool,
}

#[derive(Args)]
struct RelaxArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    max_iters: usize,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long, default_value_t = DEFAULT_ORACLE_CAP)]
    oracle_cap: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenerateMode {
    /// Target `A x` for a random sparse binary `x`.
    Planted,
    /// Target sampled from a neighborhood of the image polytope.
    Geometric,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    m: usize,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    sigma: usize,
    #[arg(long)]
    amax: i64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "planted")]
    mode: GenerateMode,
    /// Neighborhood radius as a multiple of `m^{3/2} sigma ||A||_inf` (geometric mode).
    #[arg(long, default_value_t = 1.0)]
    lambda_mult: f64,
    /// Write to a file instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ExperimentArgs {
    /// Instance whose matrix and sigma are used; its target is ignored.
    /// Without it a random instance is drawn from the size flags.
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    m: usize,
    /// Default: max(2 sigma, m + 2).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 2)]
    sigma: usize,
    #[arg(long, default_value_t = 1)]
    amax: i64,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for the CSV and summary JSON.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

impl ExperimentArgs {
    fn instance(&self) -> Result<ProblemInstance, Error> {
        match &self.instance {
            Some(p) => read_instance(p),
            None => {
                let n = self.n.unwrap_or((2 * self.sigma).max(self.m + 2));
                let mut r = rng::from_seed(self.seed);
                experiments::random_instance(self.m, n, self.sigma, self.amax, &mut r)
            }
        }
    }
}

#[derive(Subcommand)]
enum ExperimentCommand {
    /// Targets inside the shrunk image polytope; all should be hit exactly.
    Interior(ExperimentArgs),
    /// Targets from the lambda-neighborhood; frequency compared with its bound.
    Far {
        #[command(flatten)]
        common: ExperimentArgs,
        /// Neighborhood radius; overrides `--lambda-mult`.
        #[arg(long)]
        lambda: Option<f64>,
        /// Radius as a multiple of `m^{3/2} sigma ||A||_inf`.
        #[arg(long, default_value_t = 2.0)]
        lambda_mult: f64,
    },
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 2)]
    m: usize,
    #[arg(long, default_value_t = 2)]
    amax: i64,
    #[arg(long, default_value_t = 3)]
    sigma: usize,
    #[arg(long, value_delimiter = ',', default_value = "10,20,40,80")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Timings {
    total_ms: f64,
}

#[derive(Serialize, Deserialize)]
struct RunArtifact<C, R> {
    input: Option<String>,
    command: String,
    config: C,
    results: R,
    timings: Timings,
}

#[derive(Serialize)]
struct SolveResults {
    report: cubesparse::SolveReport,
    oracle: Option<SparseSolution>,
}

#[derive(Serialize)]
struct RelaxResults {
    relaxation: cubesparse::RelaxedSolution,
    epsilon: f64,
    reduced: Vec<f64>,
    rounded: SparseSolution,
}

#[derive(Serialize)]
struct ExperimentSummary {
    summary: experiments::Summary,
    successes: usize,
    trials: usize,
    lambda: f64,
    halfwidth: f64,
    passed: bool,
    csv: String,
    json: String,
}

#[derive(Serialize)]
struct BenchRow {
    n: usize,
    seconds: f64,
    dp_states: u64,
    support_guesses: u64,
    objective: f64,
}

#[derive(Serialize)]
struct BenchResults {
    rows: Vec<BenchRow>,
    time_slope: f64,
    state_slope: f64,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::EnumerationCap { .. } | Error::OracleCap { .. } | Error::RejectionBudget(_) => EXIT_CAP,
            Error::NotCertified { .. } => EXIT_ACCEPTANCE,
            _ => EXIT_USAGE,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

fn print<T: Serialize>(value: &T) -> Result<(), Failure> {
    print!("{}", to_json_string(value)?);
    Ok(())
}

fn artifact<C, R>(input: Option<&Path>, command: &str, config: C, results: R, start: Instant) -> RunArtifact<C, R> {
    RunArtifact {
        input: input.map(|p| p.display().to_string()),
        command: command.to_string(),
        config,
        results,
        timings: Timings {
            total_ms: start.elapsed().as_secs_f64() * 1e3,
        },
    }
}

fn cmd_solve(args: &SolveArgs, threads: Option<usize>) -> Result<(), Failure> {
    let start = Instant::now();
    let inst = args.instance.load()?;
    let config = SolverConfig {
        epsilon: args.epsilon,
        max_iters: DEFAULT_MAX_ITERS,
        support_guess_cap: args.support_cap,
        enum_cap: args.enum_cap,
        support_sizes: if args.full_f {
            SupportSizes::Full
        } else {
            SupportSizes::Exhaustive
        },
        strategy: match args.strategy {
            StrategyArg::Grouped => Strategy::Grouped,
            StrategyArg::PerTarget => Strategy::PerTarget,
        },
        threads,
        early_stop: !args.no_early_stop,
        seed: args.seed,
    };
    let report = solve_exact(&inst, &config)?;
    let oracle = if args.check_oracle && oracle_work(&inst) <= args.oracle_cap as f64 {
        Some(solve_oracle(&inst, args.oracle_cap)?)
    } else {
        None
    };
    let heuristic = report.heuristic;
    let mismatch = oracle
        .as_ref()
        .map(|o| (o.objective - report.best.objective).abs())
        .filter(|d| *d > 1e-6);
    print(&artifact(
        Some(&args.instance.path),
        "solve",
        config,
        SolveResults { report, oracle },
        start,
    ))?;
    if let Some(d) = mismatch {
        return Err(fail(EXIT_ACCEPTANCE, format!("oracle disagrees by {d:e}")));
    }
    if args.check_oracle && oracle_work(&inst) > args.oracle_cap as f64 {
        eprintln!("note: instance exceeds the oracle cap, cross-check skipped");
    }
    if heuristic && !args.allow_heuristic {
        return Err(fail(
            EXIT_CAP,
            "search truncated by the support-guess cap; rerun with --allow-heuristic to accept",
        ));
    }
    Ok(())
}

fn cmd_relax(args: &RelaxArgs) -> Result<(), Failure> {
    let start = Instant::now();
    let inst = args.instance.load()?;
    let epsilon = args.epsilon.unwrap_or_else(|| default_epsilon(&inst));
    let relaxation = solve_relaxation(&inst, epsilon, args.max_iters)?;
    let reduced = reduce_to_few_fractionals(&inst, &relaxation.x_bar)?;
    let rounded = round_fractional_part(&inst, &reduced)?;
    print(&artifact(
        Some(&args.instance.path),
        "relax",
        serde_json::json!({ "epsilon": epsilon, "max_iters": args.max_iters }),
        RelaxResults {
            relaxation,
            epsilon,
            reduced,
            rounded,
        },
        start,
    ))
}

fn cmd_oracle(args: &OracleArgs) -> Result<(), Failure> {
    let start = Instant::now();
    let inst = args.instance.load()?;
    let best = solve_oracle(&inst, args.oracle_cap)?;
    print(&artifact(
        Some(&args.instance.path),
        "oracle",
        serde_json::json!({ "oracle_cap": args.oracle_cap }),
        best,
        start,
    ))
}

fn cmd_generate(args: &GenerateArgs) -> Result<(), Failure> {
    if args.m == 0 || args.n == 0 || args.sigma == 0 || args.amax < 0 {
        return Err(fail(EXIT_USAGE, "m, n and sigma must be positive and amax non-negative"));
    }
    let mut r = rng::from_seed(args.seed);
    let inst = match args.mode {
        GenerateMode::Planted => experiments::planted_instance(args.m, args.n, args.sigma, args.amax, &mut r)?,
        GenerateMode::Geometric => {
            let inst = experiments::random_instance(args.m, args.n, args.sigma, args.amax, &mut r)?;
            let lambda = lambda_for_multiplier(&inst, args.lambda_mult);
            let b = experiments::sample_from_q_plus_ball(&inst, lambda, &mut r)?;
            inst.with_target(b)?
        }
    };
    match &args.output {
        Some(p) => write_json(p, &inst)?,
        None => print(&inst)?,
    }
    Ok(())
}

fn write_experiment(report: &ExperimentReport, args: &ExperimentArgs, passed: bool) -> Result<(), Failure> {
    let stem = match report.kind {
        experiments::ExperimentKind::Interior => "interior",
        experiments::ExperimentKind::Far => "far",
    };
    std::fs::create_dir_all(&args.out_dir).map_err(Error::from)?;
    let csv = args.out_dir.join(format!("{stem}.csv"));
    let json = args.out_dir.join(format!("{stem}_summary.json"));
    std::fs::write(&csv, report.to_csv()).map_err(Error::from)?;
    write_json(&json, &report.summary)?;
    print(&ExperimentSummary {
        summary: report.summary,
        successes: report.successes,
        trials: report.trials.len(),
        lambda: report.lambda,
        halfwidth: report.halfwidth(),
        passed,
        csv: csv.display().to_string(),
        json: json.display().to_string(),
    })
}

fn cmd_experiment(kind: &ExperimentCommand) -> Result<(), Failure> {
    match kind {
        ExperimentCommand::Interior(args) => {
            let inst = args.instance()?;
            let report = check_interior_exactness(&inst, args.trials, args.seed)?;
            let passed = report.summary.frequency == 1.0;
            write_experiment(&report, args, passed)?;
            if !passed {
                return Err(fail(EXIT_ACCEPTANCE, "some interior targets were not hit exactly"));
            }
        }
        ExperimentCommand::Far {
            common,
            lambda,
            lambda_mult,
        } => {
            let inst = common.instance()?;
            let lam = lambda.unwrap_or_else(|| lambda_for_multiplier(&inst, *lambda_mult));
            let report = check_far_target_probability(&SamplingConfig::new(inst, lam, common.trials, common.seed))?;
            let hw = report.halfwidth();
            let freq = report.summary.frequency;
            let mut passed = freq >= report.summary.rho.unwrap_or(0.0) - 3.0 * hw;
            if lambda.is_none() && *lambda_mult >= 2.0 {
                passed &= freq >= 0.5 - 3.0 * hw;
            }
            write_experiment(&report, common, passed)?;
            if !passed {
                return Err(fail(EXIT_ACCEPTANCE, "frequency below the predicted bound"));
            }
        }
    }
    Ok(())
}

fn cmd_bench(args: &BenchArgs, threads: Option<usize>) -> Result<(), Failure> {
    if args.sizes.len() < 2 || args.repeats == 0 {
        return Err(fail(EXIT_USAGE, "need at least two sizes and one repeat"));
    }
    let start = Instant::now();
    let config = SolverConfig {
        early_stop: false,
        threads,
        ..SolverConfig::default()
    };
    let mut rows = Vec::new();
    for &n in &args.sizes {
        let mut r = rng::from_seed(args.seed.wrapping_add(n as u64));
        let inst = experiments::random_target_instance(args.m, n, args.sigma, args.amax, 4.0, &mut r)?;
        let mut seconds = f64::INFINITY;
        let mut last = None;
        for _ in 0..args.repeats {
            let t = Instant::now();
            let report = solve_exact(&inst, &config)?;
            seconds = seconds.min(t.elapsed().as_secs_f64());
            last = Some(report);
        }
        let report = last.expect("at least one repeat");
        rows.push(BenchRow {
            n,
            seconds,
            dp_states: report.stats.dp_states,
            support_guesses: report.stats.support_guesses,
            objective: report.best.objective,
        });
    }
    let ns: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let ts: Vec<f64> = rows.iter().map(|r| r.seconds).collect();
    let ss: Vec<f64> = rows.iter().map(|r| r.dp_states as f64).collect();
    let results = BenchResults {
        time_slope: loglog_slope(&ns, &ts),
        state_slope: loglog_slope(&ns, &ss),
        rows,
    };
    print(&artifact(
        None,
        "bench",
        serde_json::json!({ "m": args.m, "amax": args.amax, "sigma": args.sigma, "repeats": args.repeats, "seed": args.seed }),
        results,
        start,
    ))
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(fail(EXIT_USAGE, "--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| fail(EXIT_USAGE, e.to_string()))?;
    }
    match &cli.command {
        Command::Solve(a) => cmd_solve(a, None),
        Command::Relax(a) => cmd_relax(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Experiment { kind } => cmd_experiment(kind),
        Command::Bench(a) => cmd_bench(a, None),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
