//! `asyncsgd`: run experiments, print bounds and constants, run the
//! verification battery, and sweep filter-fraction / delay grids.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use asyncsgd::experiment::{
    run_experiment, run_sweep, sweep_long_csv, sweep_summary_csv, write_run_outputs, DataSource, Engine,
    ExperimentConfig, ExperimentOutput, FilterSpec, Horizon, Lambda, ObjectiveSpec, Problem, ProblemData,
    RunManifest, SweepConfig, DEFAULT_SOLVER_TOL, DEFAULT_TAU_FACTOR,
};
use asyncsgd::io::{read_kv_document, write_kv_document};
use asyncsgd::schedule::{hogwild_envelope, tau_growth_cap, SgdEnvelope};
use asyncsgd::synthetic::SyntheticSpec;
use asyncsgd::verify::{
    check_collision_inequality, check_filter_unbiased, check_lemma1, check_lemma2, probe_pairs, probe_points,
    VerificationReport, PROBE_NORMS,
};
use asyncsgd::{
    CheckpointPlan, CounterMode, Error, FilterPartition, MaskPolicy, ObjectiveKind, RegularizationMode,
    ScheduleKind, SparsityStats,
};

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "asyncsgd", version, about = "Lock-free asynchronous SGD experiments and bound checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run seeds of one configuration and write traces, manifest and summary.
    Run(RunArgs),
    /// Print constants, thresholds, the τ cap and envelope values.
    Bounds(BoundsArgs),
    /// Run the verification battery; exit code 3 if any gated check fails.
    Verify(VerifyArgs),
    /// Run the cross product of fractions, delays and thread counts.
    Sweep(SweepArgs),
    /// Print problem constants and sparsity statistics.
    Constants(ProblemArgs),
}

#[derive(Args, Debug, Clone)]
struct ProblemArgs {
    /// The two-component toy quadratic f₁ = w²/2, f₂ = w.
    #[arg(long, conflicts_with_all = ["synthetic", "libsvm"])]
    toy: bool,
    /// Synthetic data, e.g. `n=1000,d=50,s=5,p=0.05,seed=7`.
    #[arg(long, value_name = "SPEC", conflicts_with = "libsvm")]
    synthetic: Option<String>,
    /// LIBSVM / SVMlight text file.
    #[arg(long, value_name = "PATH")]
    libsvm: Option<PathBuf>,
    /// Override the dimension inferred from a LIBSVM file.
    #[arg(long, requires = "libsvm")]
    dimension: Option<usize>,
    /// Keep only this many LIBSVM rows, drawn without replacement.
    #[arg(long, requires = "libsvm")]
    subsample: Option<usize>,
    #[arg(long, default_value_t = 0, requires = "subsample")]
    subsample_seed: u64,
    #[arg(long, value_enum)]
    objective: Option<ObjectiveArg>,
    /// `auto` (1/n) or a number.
    #[arg(long, default_value = "auto")]
    lambda: String,
    #[arg(long, value_enum, default_value_t = RegularizationArg::SupportWeighted)]
    regularization: RegularizationArg,
    #[arg(long, value_enum, default_value_t = NormalizeArg::None)]
    normalize: NormalizeArg,
    #[arg(long, default_value_t = DEFAULT_SOLVER_TOL)]
    solver_tol: f64,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum ObjectiveArg {
    Logistic,
    #[value(alias = "least_squares")]
    LeastSquares,
    Toy,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum RegularizationArg {
    #[value(alias = "support_weighted")]
    SupportWeighted,
    Dense,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum NormalizeArg {
    None,
    L2,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum ScheduleArg {
    #[value(alias = "sgd_convex", alias = "sgd")]
    SgdConvex,
    #[value(alias = "sgd_nonconvex")]
    SgdNonconvex,
    Hogwild,
    #[value(alias = "hogwild_nonconvex")]
    HogwildNonconvex,
    #[value(alias = "exp_period")]
    ExpPeriod,
    #[value(alias = "custom_diminishing", alias = "custom")]
    CustomDiminishing,
    Constant,
}

impl From<ScheduleArg> for ScheduleKind {
    fn from(s: ScheduleArg) -> Self {
        match s {
            ScheduleArg::SgdConvex => ScheduleKind::SgdConvex,
            ScheduleArg::SgdNonconvex => ScheduleKind::SgdNonconvex,
            ScheduleArg::Hogwild => ScheduleKind::Hogwild,
            ScheduleArg::HogwildNonconvex => ScheduleKind::HogwildNonconvex,
            ScheduleArg::ExpPeriod => ScheduleKind::ExpPeriod,
            ScheduleArg::CustomDiminishing => ScheduleKind::CustomDiminishing,
            ScheduleArg::Constant => ScheduleKind::Constant,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum EngineArg {
    Sequential,
    Parallel,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum CounterArg {
    Shared,
    Local,
}

#[derive(Args, Debug, Clone)]
struct ScheduleArgs {
    #[arg(long, value_enum, default_value_t = ScheduleArg::Hogwild)]
    schedule: ScheduleArg,
    /// α (the step itself for `constant`).
    #[arg(long)]
    alpha: Option<f64>,
    /// Constant α_t for the Hogwild! kinds.
    #[arg(long)]
    alpha_t: Option<f64>,
    /// E for `custom-diminishing`.
    #[arg(long)]
    custom_e: Option<f64>,
    #[arg(long, default_value_t = 0)]
    tau: u64,
    /// τ(t) = min(τ, √(t·L(t))).
    #[arg(long)]
    growing_tau: bool,
    /// Number of filter blocks D.
    #[arg(long, conflicts_with = "fraction")]
    blocks: Option<usize>,
    /// Filter fraction v ∈ (0, 1]; D = round(1/v).
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    partition_seed: u64,
}

#[derive(Args, Debug, Clone)]
struct ExecArgs {
    /// `all`, `none` or `bernoulli:p` (default `bernoulli:0.5`); simulator only.
    #[arg(long)]
    mask: Option<String>,
    #[arg(long, value_enum, default_value_t = EngineArg::Sequential)]
    engine: EngineArg,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum, default_value_t = CounterArg::Shared)]
    counter_mode: CounterArg,
    /// Parallel runs build E with τ = tau_factor·threads.
    #[arg(long, default_value_t = DEFAULT_TAU_FACTOR)]
    tau_factor: u64,
    #[arg(long, conflicts_with = "epochs")]
    iterations: Option<u64>,
    /// One epoch is n iterations.
    #[arg(long)]
    epochs: Option<u64>,
    /// `1..10` (inclusive) or `1,2,5`.
    #[arg(long, default_value = "1..10")]
    seeds: String,
    /// `geometric:r` or `every:k`.
    #[arg(long, default_value = "geometric:1.3")]
    checkpoints: String,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[command(flatten)]
    exec: ExecArgs,
    /// Replay the configuration stored in a manifest instead of the flags.
    #[arg(long, value_name = "PATH")]
    manifest: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BoundsArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    schedule: ScheduleArgs,
    /// Evaluate the τ-growth cap at these t.
    #[arg(long = "at", value_name = "T")]
    at: Vec<f64>,
    /// Envelope values on the geometric grid up to this t.
    #[arg(long, default_value_t = 100_000)]
    horizon: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Filter block counts to check; defaults to 1, 2, 3 and Δ̄.
    #[arg(long, value_delimiter = ',')]
    blocks: Vec<usize>,
    #[arg(long, default_value_t = 40)]
    probes_per_norm: usize,
    #[arg(long, default_value_t = 3)]
    collision_pairs: usize,
    /// Multiply L before checking (values below 1 falsify the lemmas).
    #[arg(long, default_value_t = 1.0)]
    scale_l: f64,
    #[arg(long, default_value_t = 0)]
    partition_seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[command(flatten)]
    exec: ExecArgs,
    #[arg(long, value_delimiter = ',')]
    fractions: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    taus: Vec<u64>,
    /// Thread counts; implies the parallel engine.
    #[arg(long = "threads-list", value_delimiter = ',')]
    threads_list: Vec<usize>,
    #[arg(long, default_value = "sweep")]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Runtime(String),
    Verification,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) | Error::InvalidSchedule(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Bounds(a) => cmd_bounds(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Constants(a) => cmd_constants(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
        Err(Failure::Verification) => ExitCode::from(EXIT_VERIFY),
    }
}

fn parse_synthetic(text: &str) -> CliResult<SyntheticSpec> {
    let mut spec = SyntheticSpec::default();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| usage(format!("synthetic field {part:?} is not key=value")))?;
        let bad = || usage(format!("bad value {value:?} for synthetic field {key}"));
        match key {
            "n" => spec.n = value.parse().map_err(|_| bad())?,
            "d" => spec.d = value.parse().map_err(|_| bad())?,
            "s" => spec.s = value.parse().map_err(|_| bad())?,
            "p" => spec.p = value.parse().map_err(|_| bad())?,
            "seed" => spec.seed = value.parse().map_err(|_| bad())?,
            _ => return Err(usage(format!("unknown synthetic field {key:?} (expected n, d, s, p, seed)"))),
        }
    }
    spec.validate()?;
    Ok(spec)
}

fn parse_seeds(text: &str) -> CliResult<Vec<u64>> {
    let bad = || usage(format!("seeds must look like `1..10` or `1,2,3`, got {text:?}"));
    let seeds: Vec<u64> = if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect::<CliResult<_>>()?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

fn parse_mask(text: &str) -> CliResult<MaskPolicy> {
    let policy = match text {
        "all" | "all_included" | "all-included" => MaskPolicy::AllIncluded,
        "none" | "none_included" | "none-included" => MaskPolicy::NoneIncluded,
        _ => {
            let p = text
                .strip_prefix("bernoulli:")
                .and_then(|p| p.parse::<f64>().ok())
                .ok_or_else(|| usage(format!("mask must be all, none or bernoulli:p, got {text:?}")))?;
            MaskPolicy::Bernoulli(p)
        }
    };
    // range check on p
    asyncsgd::DelayModel::constant(0, policy)?;
    Ok(policy)
}

fn parse_checkpoints(text: &str) -> CliResult<CheckpointPlan> {
    let bad = || usage(format!("checkpoints must be geometric:r or every:k, got {text:?}"));
    let (kind, value) = text.split_once(':').ok_or_else(bad)?;
    let plan = match kind {
        "geometric" => CheckpointPlan::Geometric(value.parse().map_err(|_| bad())?),
        "every" => CheckpointPlan::Every(value.parse().map_err(|_| bad())?),
        _ => return Err(bad()),
    };
    plan.times(1)?;
    Ok(plan)
}

impl ProblemArgs {
    fn data_source(&self) -> CliResult<DataSource> {
        if self.toy {
            return Ok(DataSource::Toy);
        }
        if let Some(spec) = &self.synthetic {
            return Ok(DataSource::Synthetic(parse_synthetic(spec)?));
        }
        if let Some(path) = &self.libsvm {
            return Ok(DataSource::Libsvm {
                path: path.clone(),
                dimension: self.dimension,
                subsample: self.subsample,
                subsample_seed: self.subsample_seed,
            });
        }
        Err(usage("choose a data source: --toy, --synthetic SPEC or --libsvm PATH"))
    }

    fn objective_spec(&self) -> CliResult<ObjectiveSpec> {
        let kind = match (self.objective, self.toy) {
            (Some(ObjectiveArg::Toy), _) | (None, true) => ObjectiveKind::ToyQuadratic,
            (Some(_), true) => return Err(usage("--toy takes no --objective other than toy")),
            (Some(ObjectiveArg::Logistic), false) | (None, false) => ObjectiveKind::LogisticL2,
            (Some(ObjectiveArg::LeastSquares), false) => ObjectiveKind::LeastSquaresL2,
        };
        Ok(ObjectiveSpec {
            kind,
            lambda: self.lambda.parse::<Lambda>()?,
            mode: match self.regularization {
                RegularizationArg::SupportWeighted => RegularizationMode::SupportWeighted,
                RegularizationArg::Dense => RegularizationMode::Dense,
            },
            normalize: matches!(self.normalize, NormalizeArg::L2),
        })
    }

    fn problem_data(&self) -> CliResult<ProblemData> {
        Ok(ProblemData::build(&self.data_source()?, &self.objective_spec()?, self.solver_tol)?)
    }
}

fn build_config(problem: &ProblemArgs, schedule: &ScheduleArgs, exec: Option<&ExecArgs>) -> CliResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::new(problem.data_source()?, problem.objective_spec()?, schedule.schedule.into());
    cfg.alpha = schedule.alpha;
    cfg.alpha_t = schedule.alpha_t;
    cfg.custom_e = schedule.custom_e;
    cfg.tau = schedule.tau;
    cfg.growing_tau = schedule.growing_tau;
    cfg.filter = match (schedule.blocks, schedule.fraction) {
        (Some(d), _) => FilterSpec::Blocks(d),
        (None, Some(v)) => FilterSpec::Fraction(v),
        (None, None) => FilterSpec::Blocks(1),
    };
    cfg.partition_seed = schedule.partition_seed;
    cfg.solver_tol = problem.solver_tol;
    if let Some(exec) = exec {
        cfg.engine = match exec.engine {
            EngineArg::Sequential => {
                if exec.threads.is_some() {
                    return Err(usage("--threads needs --engine parallel"));
                }
                Engine::Sequential
            }
            EngineArg::Parallel => {
                if exec.mask.is_some() {
                    return Err(usage("the parallel engine takes no --mask: its reads are real"));
                }
                Engine::Parallel {
                    threads: exec.threads.unwrap_or(1),
                    counter_mode: match exec.counter_mode {
                        CounterArg::Shared => CounterMode::SharedAtomic,
                        CounterArg::Local => CounterMode::LocalEstimate,
                    },
                    tau_factor: exec.tau_factor,
                }
            }
        };
        if let Some(m) = &exec.mask {
            cfg.mask = parse_mask(m)?;
        }
        cfg.horizon = match (exec.iterations, exec.epochs) {
            (Some(t), _) => Horizon::Iterations(t),
            (None, Some(e)) => Horizon::Epochs(e),
            (None, None) => Horizon::Iterations(10_000),
        };
        cfg.seeds = parse_seeds(&exec.seeds)?;
        cfg.checkpoints = parse_checkpoints(&exec.checkpoints)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_run(args: RunArgs) -> CliResult<()> {
    let config = match &args.manifest {
        Some(path) => read_kv_document::<RunManifest>(path)?.config,
        None => build_config(&args.problem, &args.schedule, Some(&args.exec))?,
    };
    let output = run_experiment(&config)?;
    let written = write_run_outputs(&output, &args.out)?;
    if let Some(w) = &output.manifest.tau_warning {
        eprintln!("warning: {w}");
    }
    print_run_summary(&output, &args.out, written.len());
    Ok(())
}

fn print_run_summary(output: &ExperimentOutput, dir: &Path, files: usize) {
    let s = &output.summary;
    let r = &output.manifest.resolved;
    println!("lambda = {}", r.lambda);
    println!("L = {}  mu = {}  N = {}  E = {}", r.l, r.mu, r.n_var, r.e);
    println!("seeds = {}  iterations = {}", s.seeds, s.iterations);
    println!("final_gap = {:e}  final_objective = {}  final_squared_distance = {:e}", s.final_gap, s.final_objective, s.final_squared_distance);
    match s.slope {
        Some(v) => println!("slope = {v:.4}"),
        None => println!("slope = n/a ({})", s.slope_note.as_deref().unwrap_or("not fitted")),
    }
    match (s.envelope_pass, &s.envelope) {
        (Some(pass), Some(label)) => println!("envelope ({label}) = {}", if pass { "pass" } else { "fail" }),
        _ => println!("envelope = n/a"),
    }
    if let Some(t) = output.manifest.observed_tau {
        println!("observed_tau = {t}  configured_tau = {}", r.schedule_tau);
    }
    println!("wrote {files} files to {}", dir.display());
}

fn cmd_constants(args: ProblemArgs) -> CliResult<()> {
    let data = args.problem_data()?;
    let obj = &data.objective;
    let c = &data.constants;
    let stats = SparsityStats::compute(obj, 1)?;
    println!("n = {}", obj.n());
    println!("d = {}", obj.dimension());
    println!("lambda = {}", data.lambda);
    println!("L = {}", c.l);
    println!("mu = {}", c.mu);
    println!("kappa = {}", c.kappa);
    println!("N = {}", c.n_var);
    println!("F_star = {}", c.f_star);
    println!("delta_bar = {}", stats.delta_bar);
    println!("mean_support = {}", stats.mean_support);
    println!("delta = {}", stats.delta);
    println!("content_hash = {}", data.content_hash);
    Ok(())
}

fn cmd_bounds(args: BoundsArgs) -> CliResult<()> {
    let mut cfg = build_config(&args.problem, &args.schedule, None)?;
    cfg.horizon = Horizon::Iterations(args.horizon.max(1));
    let problem = Problem::build(&cfg)?;
    let c = problem.constants();
    let s = &problem.schedule;
    let b = problem.bounds()?;
    let st = &problem.stats;
    let mut out = String::new();
    let _ = writeln!(out, "L = {}", c.l);
    let _ = writeln!(out, "mu = {}", c.mu);
    let _ = writeln!(out, "kappa = {}", c.kappa);
    let _ = writeln!(out, "N = {}", c.n_var);
    let _ = writeln!(out, "delta_bar = {}", st.delta_bar);
    let _ = writeln!(out, "delta_bar_D = {}", st.delta_bar_d);
    let _ = writeln!(out, "delta = {}", st.delta);
    let _ = writeln!(out, "D = {}", problem.partition.parameter());
    let _ = writeln!(out, "alpha = {}", s.alpha);
    let _ = writeln!(out, "E = {}", s.e);
    let _ = writeln!(out, "T = {}", b.t_sgd);
    let _ = writeln!(out, "T0 = {}", b.t0);
    let _ = writeln!(out, "T1 = {}{}", b.t1, if b.n_is_zero { " (N = 0)" } else { "" });
    for &t in &args.at {
        match tau_growth_cap(t) {
            Ok(v) => {
                let _ = writeln!(out, "tau_cap({t}) = {v}");
            }
            Err(e) => {
                let _ = writeln!(out, "tau_cap({t}) = undefined ({e})");
            }
        }
    }
    let times = CheckpointPlan::default().times(args.horizon.max(1))?;
    let mut table = String::from("t,envelope,remainder_estimate\n");
    match s.kind {
        ScheduleKind::SgdConvex | ScheduleKind::SgdNonconvex => {
            let env = SgdEnvelope::new(c, s.alpha, &problem.w0, problem.convexity())?;
            for t in times.into_iter().filter(|&t| t as f64 >= env.t_threshold) {
                let _ = writeln!(table, "{t},{:?},", env.eval(t)?);
            }
        }
        ScheduleKind::Hogwild | ScheduleKind::HogwildNonconvex | ScheduleKind::ExpPeriod => {
            for t in times.into_iter().filter(|&t| t >= 1) {
                let v = hogwild_envelope(c, s.alpha, problem.partition.parameter(), s.e, t)?;
                let _ = writeln!(table, "{t},{:?},{:?}", v.leading, v.remainder_estimate);
            }
        }
        _ => {}
    }
    print!("{out}");
    print!("{table}");
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
        fs::write(dir.join("bounds.txt"), &out).map_err(|e| Failure::Runtime(e.to_string()))?;
        fs::write(dir.join("envelope.csv"), &table).map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct VerifyDocument {
    reports: Vec<VerificationReport>,
}

fn cmd_verify(args: VerifyArgs) -> CliResult<()> {
    if !(args.scale_l > 0.0) {
        return Err(usage("--scale-l must be > 0"));
    }
    let data = args.problem.problem_data()?;
    let obj = &data.objective;
    let mut c = data.constants.clone();
    c.l *= args.scale_l;
    c.kappa = c.l / c.mu;
    let w0 = asyncsgd::DenseVector::zeros(obj.dimension());
    let probes = probe_points(&c, &w0, &PROBE_NORMS, args.probes_per_norm);
    let mut reports = Vec::new();
    if c.convex_realizations {
        reports.push(check_lemma1(obj, &c, &probes)?);
    }
    reports.push(check_lemma2(obj, &c, &probes)?);
    let delta_bar = SparsityStats::compute(obj, 1)?.delta_bar;
    let mut blocks = if args.blocks.is_empty() { vec![1, 2, 3, delta_bar] } else { args.blocks.clone() };
    blocks.sort_unstable();
    blocks.dedup();
    for d in blocks {
        let part = FilterPartition::build(obj, d, args.partition_seed)?;
        reports.push(check_filter_unbiased(obj, &part));
    }
    if args.collision_pairs > 0 {
        let mut pairs = probe_pairs(&c, 1.0, args.collision_pairs, 1);
        pairs.push((c.w_star.clone(), c.w_star.clone()));
        reports.push(check_collision_inequality(obj, &pairs)?);
    }
    let mut all_pass = true;
    for r in &reports {
        all_pass &= r.pass;
        println!(
            "[{}] {} ({}): worst margin {:e}, worst relative margin {:e}, {} failures",
            if r.pass { "PASS" } else { "FAIL" },
            r.check,
            r.population,
            r.worst_margin,
            r.worst_relative_margin,
            r.failures.len()
        );
    }
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
        write_kv_document(&VerifyDocument { reports }, &dir.join("verify.toml"))?;
    }
    if all_pass {
        Ok(())
    } else {
        Err(Failure::Verification)
    }
}

fn cmd_sweep(args: SweepArgs) -> CliResult<()> {
    let base = build_config(&args.problem, &args.schedule, Some(&args.exec))?;
    let sweep = SweepConfig {
        base,
        fractions: args.fractions.clone(),
        taus: args.taus.clone(),
        threads: args.threads_list.clone(),
    };
    let results = run_sweep(&sweep)?;
    fs::create_dir_all(&args.out).map_err(|e| Failure::Runtime(format!("{}: {e}", args.out.display())))?;
    let summary = sweep_summary_csv(&results);
    let write = |name: &str, text: &str| {
        fs::write(args.out.join(name), text).map_err(|e| Failure::Runtime(format!("{name}: {e}")))
    };
    write("sweep_long.csv", &sweep_long_csv(&results))?;
    write("sweep_summary.csv", &summary)?;
    write_kv_document(&sweep, &args.out.join("sweep.toml"))?;
    print!("{summary}");
    let failed: Vec<String> = results
        .iter()
        .filter_map(|r| r.outcome.as_ref().err().map(|e| format!("cell {}: {e}", r.cell.cell_id)))
        .collect();
    for f in &failed {
        eprintln!("error: {f}");
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(format!("{} of {} cells failed", failed.len(), results.len())))
    }
}
