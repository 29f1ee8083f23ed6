//! Experiment harness: resolve a configuration into a problem, run seeds on
//! either engine, summarize, persist, replay from a manifest, and sweep grids.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::filters::{blocks_for_fraction, FilterPartition, SparsityStats};
use crate::io::{write_kv_document, write_trace_csv};
use crate::libsvm::{parse_libsvm, LabelRule};
use crate::objective::{Objective, ObjectiveKind, ProblemConstants, RegularizationMode};
use crate::parallel::{run_parallel, CounterMode, ParallelConfig};
use crate::schedule::{
    hogwild_envelope, make_schedule, thresholds, BoundReport, Convexity, ScheduleKind, ScheduleOptions,
    SgdEnvelope, StepSchedule,
};
use crate::sim::{run_sequential, DelayModel, DelayRule, MaskPolicy, SequentialConfig};
use crate::synthetic::{generate_synthetic, subsample, SyntheticSpec};
use crate::trace::{CheckpointPlan, Trace};
use crate::vector::DenseVector;
use crate::verify::{check_envelope_domination, fit_rate_slope, RateAxis, MIN_ENVELOPE_SEEDS};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const DEFAULT_SOLVER_TOL: f64 = 1e-10;
pub const DEFAULT_TAIL_FRACTION: f64 = 0.5;
/// Parallel runs build E with τ = c·P.
pub const DEFAULT_TAU_FACTOR: u64 = 2;
pub const SNAPSHOT_NOTE: &str =
    "interior checkpoints are coordinate-wise atomic snapshots taken while workers run; they are not consistent across coordinates";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Toy,
    Synthetic(SyntheticSpec),
    Libsvm {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dimension: Option<usize>,
        /// Keep this many rows, drawn without replacement.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        subsample: Option<usize>,
        #[serde(default)]
        subsample_seed: u64,
    },
}

/// λ, or `auto` for 1/n.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Lambda {
    #[default]
    Auto,
    Value(f64),
}

impl Lambda {
    pub fn resolve(self, n: usize) -> f64 {
        match self {
            Lambda::Auto => 1.0 / n as f64,
            Lambda::Value(v) => v,
        }
    }
}

impl std::str::FromStr for Lambda {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Lambda::Auto);
        }
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite() && *v >= 0.0)
            .map(Lambda::Value)
            .ok_or_else(|| Error::InvalidConfig(format!("lambda must be `auto` or a number >= 0, got {s:?}")))
    }
}

impl Serialize for Lambda {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Lambda::Auto => s.serialize_str("auto"),
            Lambda::Value(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Lambda {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Int(i64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Lambda::Value(v)),
            Raw::Int(v) => Ok(Lambda::Value(v as f64)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    #[serde(default)]
    pub lambda: Lambda,
    #[serde(default)]
    pub mode: RegularizationMode,
    /// Scale every sample to unit ℓ2 norm before building the objective.
    #[serde(default)]
    pub normalize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterSpec {
    Blocks(usize),
    /// Block size ≈ v·|D_ξ|, realized as D = round(1/v).
    Fraction(f64),
}

impl FilterSpec {
    pub fn blocks(self) -> Result<usize> {
        match self {
            FilterSpec::Blocks(0) => Err(Error::InvalidConfig("D must be >= 1".into())),
            FilterSpec::Blocks(d) => Ok(d),
            FilterSpec::Fraction(v) => blocks_for_fraction(v),
        }
    }

    pub fn fraction(self) -> Option<f64> {
        match self {
            FilterSpec::Fraction(v) => Some(v),
            FilterSpec::Blocks(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Sequential,
    Parallel {
        threads: usize,
        #[serde(default)]
        counter_mode: CounterMode,
        /// E is built with τ = tau_factor·threads.
        #[serde(default = "default_tau_factor")]
        tau_factor: u64,
    },
}

fn default_tau_factor() -> u64 {
    DEFAULT_TAU_FACTOR
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    Iterations(u64),
    /// One epoch is n iterations.
    Epochs(u64),
}

impl Horizon {
    pub fn iterations(self, n: usize) -> u64 {
        match self {
            Horizon::Iterations(t) => t,
            Horizon::Epochs(e) => e * n as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub objective: ObjectiveSpec,
    pub schedule: ScheduleKind,
    /// α (or η for `constant`); `None` takes the kind's default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_t: Option<f64>,
    /// E for `custom_diminishing`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom_e: Option<f64>,
    pub tau: u64,
    /// τ(t) = min(tau, √(t·L(t))) instead of a constant τ.
    #[serde(default)]
    pub growing_tau: bool,
    pub filter: FilterSpec,
    pub partition_seed: u64,
    pub mask: MaskPolicy,
    pub engine: Engine,
    pub horizon: Horizon,
    pub seeds: Vec<u64>,
    pub checkpoints: CheckpointPlan,
    pub solver_tol: f64,
    /// Starting point; zeros when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w0: Option<Vec<f64>>,
}

impl ExperimentConfig {
    /// Defaults of the sequential protocol on the given data.
    pub fn new(data: DataSource, objective: ObjectiveSpec, schedule: ScheduleKind) -> Self {
        ExperimentConfig {
            data,
            objective,
            schedule,
            alpha: None,
            alpha_t: None,
            custom_e: None,
            tau: 0,
            growing_tau: false,
            filter: FilterSpec::Blocks(1),
            partition_seed: 0,
            mask: MaskPolicy::default(),
            engine: Engine::Sequential,
            horizon: Horizon::Iterations(10_000),
            seeds: (1..=10).collect(),
            checkpoints: CheckpointPlan::default(),
            solver_tol: DEFAULT_SOLVER_TOL,
            w0: None,
        }
    }

    pub fn toy(schedule: ScheduleKind) -> Self {
        let objective = ObjectiveSpec {
            kind: ObjectiveKind::ToyQuadratic,
            lambda: Lambda::Auto,
            mode: RegularizationMode::default(),
            normalize: false,
        };
        Self::new(DataSource::Toy, objective, schedule)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one seed is required".into()));
        }
        if self.horizon.iterations(1) == 0 {
            return Err(Error::InvalidConfig("horizon must be >= 1".into()));
        }
        if let FilterSpec::Fraction(v) = self.filter {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::InvalidConfig(format!("fraction v must lie in (0, 1], got {v}")));
            }
        }
        if let Engine::Parallel { threads, .. } = self.engine {
            if threads == 0 {
                return Err(Error::InvalidConfig("threads must be >= 1".into()));
            }
            if self.growing_tau {
                return Err(Error::InvalidConfig("growing tau is a simulator option".into()));
            }
        }
        let toy_data = matches!(self.data, DataSource::Toy);
        let toy_kind = self.objective.kind == ObjectiveKind::ToyQuadratic;
        if toy_data != toy_kind {
            return Err(Error::InvalidConfig("the toy objective and the toy data source go together".into()));
        }
        if !(self.solver_tol > 0.0) {
            return Err(Error::InvalidConfig("solver tolerance must be > 0".into()));
        }
        Ok(())
    }
}

/// The objective and its reference solution: everything that does not
/// depend on the filter, delay or schedule.
#[derive(Debug, Clone)]
pub struct ProblemData {
    pub objective: Objective,
    pub constants: ProblemConstants,
    pub lambda: f64,
    pub label_rule: LabelRule,
    pub content_hash: String,
}

impl ProblemData {
    pub fn build(data: &DataSource, spec: &ObjectiveSpec, solver_tol: f64) -> Result<Self> {
        let (objective, lambda, label_rule, content_hash) = match data {
            DataSource::Toy => {
                if spec.kind != ObjectiveKind::ToyQuadratic {
                    return Err(Error::InvalidConfig("the toy data source needs the toy objective".into()));
                }
                (Objective::toy_quadratic(), 0.0, LabelRule::Identity, "toy_quadratic".to_string())
            }
            _ => {
                let (dataset, label_rule) = load_dataset(data)?;
                let dataset = if spec.normalize { dataset.normalized_l2() } else { dataset };
                let lambda = spec.lambda.resolve(dataset.len());
                let hash = dataset.content_hash();
                let objective = match spec.kind {
                    ObjectiveKind::LogisticL2 => Objective::logistic(dataset, lambda, spec.mode)?,
                    ObjectiveKind::LeastSquaresL2 => Objective::least_squares(dataset, lambda, spec.mode)?,
                    ObjectiveKind::ToyQuadratic => {
                        return Err(Error::InvalidConfig("the toy objective takes no dataset".into()))
                    }
                };
                (objective, lambda, label_rule, hash)
            }
        };
        let constants = ProblemConstants::compute(&objective, solver_tol)?;
        Ok(ProblemData { objective, constants, lambda, label_rule, content_hash })
    }
}

pub fn load_dataset(data: &DataSource) -> Result<(Dataset, LabelRule)> {
    match data {
        DataSource::Toy => Err(Error::InvalidConfig("the toy objective has no dataset".into())),
        DataSource::Synthetic(spec) => Ok((generate_synthetic(spec)?, LabelRule::Identity)),
        DataSource::Libsvm { path, dimension, subsample: rows, subsample_seed } => {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            let parsed = parse_libsvm(BufReader::new(file), *dimension)?;
            let dataset = match rows {
                Some(m) if *m < parsed.dataset.len() => subsample(&parsed.dataset, *m, *subsample_seed)?,
                _ => parsed.dataset,
            };
            Ok((dataset, parsed.label_rule))
        }
    }
}

/// A fully resolved run: data, partition and schedule.
#[derive(Debug, Clone)]
pub struct Problem {
    pub config: ExperimentConfig,
    pub data: Arc<ProblemData>,
    pub partition: FilterPartition,
    pub stats: SparsityStats,
    pub schedule: StepSchedule,
    pub delay: DelayModel,
    pub w0: DenseVector,
    pub iterations: u64,
}

impl Problem {
    pub fn build(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let data = ProblemData::build(&config.data, &config.objective, config.solver_tol)?;
        Self::assemble(config, Arc::new(data))
    }

    /// Builds the per-configuration parts on top of already solved data.
    pub fn assemble(config: &ExperimentConfig, data: Arc<ProblemData>) -> Result<Self> {
        config.validate()?;
        let obj = &data.objective;
        let d_blocks = config.filter.blocks()?;
        let partition = FilterPartition::build(obj, d_blocks, config.partition_seed)?;
        let stats = SparsityStats::compute(obj, d_blocks)?;
        let schedule_tau = match config.engine {
            Engine::Sequential => config.tau,
            Engine::Parallel { threads, tau_factor, .. } => tau_factor * threads as u64,
        };
        let schedule = build_schedule(config, &data.constants, schedule_tau, d_blocks)?;
        let rule = if config.growing_tau {
            DelayRule::Growing { cap: config.tau }
        } else {
            DelayRule::Constant(config.tau)
        };
        let delay = match config.engine {
            Engine::Sequential => DelayModel::new(rule, config.mask)?,
            Engine::Parallel { .. } => DelayModel::consistent(),
        };
        let d = obj.dimension();
        let w0 = match &config.w0 {
            Some(v) => {
                let w = DenseVector::from_vec(v.clone());
                w.check_len(d)?;
                w
            }
            None => DenseVector::zeros(d),
        };
        let iterations = config.horizon.iterations(obj.n());
        if iterations == 0 {
            return Err(Error::InvalidConfig("horizon resolves to zero iterations".into()));
        }
        Ok(Problem { config: config.clone(), data, partition, stats, schedule, delay, w0, iterations })
    }

    pub fn objective(&self) -> &Objective {
        &self.data.objective
    }

    pub fn constants(&self) -> &ProblemConstants {
        &self.data.constants
    }

    pub fn convexity(&self) -> Convexity {
        match self.schedule.kind {
            ScheduleKind::SgdNonconvex | ScheduleKind::HogwildNonconvex => Convexity::General,
            _ => Convexity::ConvexRealizations,
        }
    }

    pub fn bounds(&self) -> Result<BoundReport> {
        thresholds(
            self.constants(),
            self.schedule.alpha,
            self.partition.parameter(),
            &self.w0,
            self.stats.delta,
            self.convexity(),
        )
    }

    /// One seed on the configured engine; the observed τ̂ accompanies
    /// parallel runs.
    pub fn run_seed(&self, seed: u64) -> Result<(Trace, Option<u64>)> {
        match self.config.engine {
            Engine::Sequential => {
                let cfg = SequentialConfig { iterations: self.iterations, checkpoints: self.config.checkpoints, seed };
                let trace = run_sequential(
                    self.objective(),
                    &self.partition,
                    &self.schedule,
                    &self.delay,
                    self.constants(),
                    &self.w0,
                    &cfg,
                )?;
                Ok((trace, None))
            }
            Engine::Parallel { threads, counter_mode, .. } => {
                let cfg = ParallelConfig {
                    threads,
                    schedule: self.schedule.clone(),
                    total_iterations: self.iterations,
                    seed_base: parallel_seed_base(seed),
                    counter_mode,
                    checkpoints: self.config.checkpoints,
                };
                let out = run_parallel(self.objective(), &self.partition, self.constants(), &cfg, &self.w0)?;
                let mut trace = out.trace;
                trace.seed = crate::trace::TraceSeed::Seed(seed);
                Ok((trace, Some(out.observed_tau)))
            }
        }
    }
}

/// Worker streams of distinct seeds never overlap for up to 2¹⁶ threads.
pub fn parallel_seed_base(seed: u64) -> u64 {
    seed << 16
}

fn build_schedule(
    config: &ExperimentConfig,
    constants: &ProblemConstants,
    tau: u64,
    d_blocks: usize,
) -> Result<StepSchedule> {
    match config.schedule {
        ScheduleKind::CustomDiminishing => {
            let alpha = config
                .alpha
                .ok_or_else(|| Error::InvalidConfig("custom_diminishing needs alpha".into()))?;
            let e = config
                .custom_e
                .ok_or_else(|| Error::InvalidConfig("custom_diminishing needs custom_e".into()))?;
            StepSchedule::custom(alpha, constants.mu, e)
        }
        ScheduleKind::Constant => {
            let eta = config.alpha.ok_or_else(|| Error::InvalidConfig("constant schedule needs alpha".into()))?;
            StepSchedule::constant(eta)
        }
        kind => {
            let opts = ScheduleOptions { alpha: config.alpha, alpha_t: config.alpha_t, growing_tau: config.growing_tau };
            make_schedule(kind, constants, tau, d_blocks, opts)
        }
    }
}

/// Resolved values recorded next to the configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedValues {
    pub n: usize,
    pub d: usize,
    pub content_hash: String,
    pub label_rule: LabelRule,
    pub lambda: f64,
    pub l: f64,
    pub mu: f64,
    pub kappa: f64,
    pub n_var: f64,
    pub f_star: f64,
    pub delta_bar: usize,
    pub delta_bar_d: f64,
    pub mean_support: f64,
    pub delta: f64,
    pub blocks: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
    pub e: f64,
    pub schedule_tau: u64,
    pub iterations: u64,
    pub t_threshold: f64,
    pub t0: f64,
    pub t1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub engine_kind: String,
    pub threads: usize,
    pub config: ExperimentConfig,
    pub resolved: ResolvedValues,
    /// Largest τ̂ over the parallel seeds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed_tau: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_warning: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_note: Option<String>,
}

impl RunManifest {
    pub fn new(problem: &Problem, observed_tau: Option<u64>) -> Result<Self> {
        let c = problem.constants();
        let obj = problem.objective();
        let bounds = problem.bounds()?;
        let (engine_kind, threads) = match problem.config.engine {
            Engine::Sequential => ("sequential".to_string(), 1),
            Engine::Parallel { threads, .. } => ("parallel".to_string(), threads),
        };
        let tau_warning = observed_tau.filter(|&o| o > problem.schedule.tau).map(|o| {
            format!("observed tau {o} exceeded the configured tau {} used for E", problem.schedule.tau)
        });
        Ok(RunManifest {
            version: VERSION.to_string(),
            engine_kind,
            threads,
            config: problem.config.clone(),
            resolved: ResolvedValues {
                n: obj.n(),
                d: obj.dimension(),
                content_hash: problem.data.content_hash.clone(),
                label_rule: problem.data.label_rule,
                lambda: problem.data.lambda,
                l: c.l,
                mu: c.mu,
                kappa: c.kappa,
                n_var: c.n_var,
                f_star: c.f_star,
                delta_bar: problem.stats.delta_bar,
                delta_bar_d: problem.stats.delta_bar_d,
                mean_support: problem.stats.mean_support,
                delta: problem.stats.delta,
                blocks: problem.partition.parameter(),
                fraction: problem.config.filter.fraction(),
                e: problem.schedule.e,
                schedule_tau: problem.schedule.tau,
                iterations: problem.iterations,
                t_threshold: bounds.t_sgd,
                t0: bounds.t0,
                t1: bounds.t1,
            },
            observed_tau,
            tau_warning,
            snapshot_note: matches!(problem.config.engine, Engine::Parallel { .. }).then(|| SNAPSHOT_NOTE.to_string()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seeds: usize,
    pub iterations: u64,
    pub initial_gap: f64,
    /// Seed-mean F(w_T) − F*.
    pub final_gap: f64,
    /// Seed-mean F(w_T).
    pub final_objective: f64,
    pub final_squared_distance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope_note: Option<String>,
    /// Which envelope was checked and from which t.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope_pass: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope_worst_margin: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub problem: Problem,
    pub traces: Vec<Trace>,
    pub mean: Trace,
    pub summary: RunSummary,
    pub manifest: RunManifest,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    run_problem(Problem::build(config)?)
}

/// Seeds of a sequential run execute concurrently; parallel runs go one
/// seed at a time.
pub fn run_problem(problem: Problem) -> Result<ExperimentOutput> {
    let results: Vec<(Trace, Option<u64>)> = match problem.config.engine {
        Engine::Sequential => problem.config.seeds.par_iter().map(|&s| problem.run_seed(s)).collect::<Result<_>>()?,
        Engine::Parallel { .. } => problem.config.seeds.iter().map(|&s| problem.run_seed(s)).collect::<Result<_>>()?,
    };
    let observed_tau = results.iter().filter_map(|r| r.1).max();
    let traces: Vec<Trace> = results.into_iter().map(|r| r.0).collect();
    let mean = Trace::mean(&traces)?;
    let summary = summarize(&problem, &traces, &mean)?;
    let manifest = RunManifest::new(&problem, observed_tau)?;
    Ok(ExperimentOutput { problem, traces, mean, summary, manifest })
}

fn summarize(problem: &Problem, traces: &[Trace], mean: &Trace) -> Result<RunSummary> {
    let first = mean.first().ok_or_else(|| Error::Verification("empty trace".into()))?;
    let last = mean.last().ok_or_else(|| Error::Verification("empty trace".into()))?;
    let (slope, slope_note) = match fit_rate_slope(traces, DEFAULT_TAIL_FRACTION, RateAxis::Iterations) {
        Ok(fit) => (Some(fit.slope), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let (envelope, envelope_pass, envelope_worst_margin) = match envelope_check(problem, traces)? {
        Some((label, report)) => (Some(label), Some(report.pass), Some(report.worst_margin)),
        None => (None, None, None),
    };
    Ok(RunSummary {
        seeds: traces.len(),
        iterations: problem.iterations,
        initial_gap: first.objective_gap,
        final_gap: last.objective_gap,
        final_objective: last.objective_gap + problem.constants().f_star,
        final_squared_distance: last.squared_distance,
        slope,
        slope_note,
        envelope,
        envelope_pass,
        envelope_worst_margin,
    })
}

/// The envelope that certifies the configured schedule, gated from
/// max(T, 0) for SGD and from max(T₁, 10·E) for Hogwild!.
fn envelope_check(
    problem: &Problem,
    traces: &[Trace],
) -> Result<Option<(String, crate::verify::VerificationReport)>> {
    if traces.len() < MIN_ENVELOPE_SEEDS {
        return Ok(None);
    }
    let c = problem.constants();
    let sched = &problem.schedule;
    let last_t = problem.iterations;
    match sched.kind {
        ScheduleKind::SgdConvex | ScheduleKind::SgdNonconvex
            if problem.delay.rule.max_tau() == 0 && problem.partition.parameter() == 1 =>
        {
            let env = SgdEnvelope::new(c, sched.alpha, &problem.w0, problem.convexity())?;
            let from = env.t_threshold.max(0.0).ceil() as u64;
            if from > last_t {
                return Ok(None);
            }
            let report = check_envelope_domination(traces, |t| env.eval(t), from)?;
            Ok(Some((format!("sgd from t = {from}"), report)))
        }
        ScheduleKind::Hogwild | ScheduleKind::HogwildNonconvex => {
            let bounds = problem.bounds()?;
            let from = bounds.t1.max(10.0 * sched.e).ceil().max(1.0) as u64;
            if from > last_t {
                return Ok(None);
            }
            let d = problem.partition.parameter();
            let report = check_envelope_domination(
                traces,
                |t| Ok(hogwild_envelope(c, sched.alpha, d, sched.e, t)?.leading),
                from,
            )?;
            Ok(Some((format!("hogwild leading term from t = {from}"), report)))
        }
        _ => Ok(None),
    }
}

/// Writes `trace_seed_{s}.csv`, `trace_mean.csv`, `manifest.toml` and
/// `summary.toml`.
pub fn write_run_outputs(output: &ExperimentOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (seed, trace) in output.problem.config.seeds.iter().zip(&output.traces) {
        let path = dir.join(format!("trace_seed_{seed}.csv"));
        write_trace_csv(trace, &path)?;
        written.push(path);
    }
    let path = dir.join("trace_mean.csv");
    write_trace_csv(&output.mean, &path)?;
    written.push(path);
    let path = dir.join("manifest.toml");
    write_kv_document(&output.manifest, &path)?;
    written.push(path);
    let path = dir.join("summary.toml");
    write_kv_document(&output.summary, &path)?;
    written.push(path);
    Ok(written)
}

/// Re-runs the configuration in a manifest and checks that the data and
/// constants it resolves to are the recorded ones.
pub fn replay(manifest: &RunManifest) -> Result<ExperimentOutput> {
    let out = run_experiment(&manifest.config)?;
    let now = &out.manifest.resolved;
    let then = &manifest.resolved;
    if now.content_hash != then.content_hash {
        return Err(Error::Manifest(format!(
            "dataset hash {} differs from the recorded {}",
            now.content_hash, then.content_hash
        )));
    }
    if now.l != then.l || now.mu != then.mu || now.f_star != then.f_star || now.e != then.e {
        return Err(Error::Manifest("resolved constants differ from the recorded ones".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub base: ExperimentConfig,
    /// Filter fractions v; empty keeps the base filter.
    #[serde(default)]
    pub fractions: Vec<f64>,
    /// Delays τ; empty keeps the base τ.
    #[serde(default)]
    pub taus: Vec<u64>,
    /// Thread counts for the parallel engine; empty keeps the base engine.
    #[serde(default)]
    pub threads: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub cell_id: usize,
    pub fraction: Option<f64>,
    pub blocks: usize,
    pub tau: u64,
    pub threads: usize,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone)]
pub struct SweepCellResult {
    pub cell: SweepCell,
    pub outcome: std::result::Result<(Trace, RunSummary), String>,
}

impl SweepConfig {
    pub fn cells(&self) -> Result<Vec<SweepCell>> {
        if self.fractions.is_empty() && self.taus.is_empty() && self.threads.is_empty() {
            return Err(Error::InvalidConfig("sweep grid is empty".into()));
        }
        let fractions: Vec<Option<f64>> = if self.fractions.is_empty() {
            vec![None]
        } else {
            self.fractions.iter().map(|&v| Some(v)).collect()
        };
        let taus = if self.taus.is_empty() { vec![self.base.tau] } else { self.taus.clone() };
        let threads: Vec<Option<usize>> = if self.threads.is_empty() {
            vec![None]
        } else {
            self.threads.iter().map(|&p| Some(p)).collect()
        };
        let mut cells = Vec::new();
        for &v in &fractions {
            for &tau in &taus {
                for &p in &threads {
                    let mut config = self.base.clone();
                    if let Some(v) = v {
                        config.filter = FilterSpec::Fraction(v);
                    }
                    config.tau = tau;
                    if let Some(p) = p {
                        config.engine = match config.engine {
                            Engine::Parallel { counter_mode, tau_factor, .. } => {
                                Engine::Parallel { threads: p, counter_mode, tau_factor }
                            }
                            Engine::Sequential => Engine::Parallel {
                                threads: p,
                                counter_mode: CounterMode::default(),
                                tau_factor: DEFAULT_TAU_FACTOR,
                            },
                        };
                    }
                    config.validate()?;
                    let threads = match config.engine {
                        Engine::Sequential => 1,
                        Engine::Parallel { threads, .. } => threads,
                    };
                    cells.push(SweepCell {
                        cell_id: cells.len(),
                        fraction: config.filter.fraction(),
                        blocks: config.filter.blocks()?,
                        tau,
                        threads,
                        config,
                    });
                }
            }
        }
        Ok(cells)
    }
}

/// Runs every cell on one solved problem. A failing cell is recorded and
/// the remaining cells still run.
pub fn run_sweep(sweep: &SweepConfig) -> Result<Vec<SweepCellResult>> {
    let cells = sweep.cells()?;
    let data = Arc::new(ProblemData::build(&sweep.base.data, &sweep.base.objective, sweep.base.solver_tol)?);
    Ok(cells
        .into_iter()
        .map(|cell| {
            let outcome = Problem::assemble(&cell.config, Arc::clone(&data))
                .and_then(run_problem)
                .map(|out| (out.mean, out.summary))
                .map_err(|e| e.to_string());
            SweepCellResult { cell, outcome }
        })
        .collect())
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

/// `cell_id,v,D,tau,P,t,t_prime,objective_gap,squared_distance` over the
/// seed-mean curves of the successful cells.
pub fn sweep_long_csv(results: &[SweepCellResult]) -> String {
    let mut s = String::from("cell_id,v,D,tau,P,t,t_prime,objective_gap,squared_distance\n");
    for r in results {
        if let Ok((trace, _)) = &r.outcome {
            let c = &r.cell;
            for cp in &trace.checkpoints {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{:?},{:?},{:?}",
                    c.cell_id,
                    opt_f64(c.fraction),
                    c.blocks,
                    c.tau,
                    c.threads,
                    cp.t,
                    cp.t_prime,
                    cp.objective_gap,
                    cp.squared_distance
                );
            }
        }
    }
    s
}

/// `cell_id,v,D,tau,P,final_gap,slope,envelope_pass`; failed cells carry
/// `failed` in the last column and empty numeric fields.
pub fn sweep_summary_csv(results: &[SweepCellResult]) -> String {
    let mut s = String::from("cell_id,v,D,tau,P,final_gap,slope,envelope_pass\n");
    for r in results {
        let c = &r.cell;
        let (gap, slope, pass) = match &r.outcome {
            Ok((_, sum)) => (
                format!("{:?}", sum.final_gap),
                opt_f64(sum.slope),
                sum.envelope_pass.map(|b| b.to_string()).unwrap_or_else(|| "n/a".into()),
            ),
            Err(_) => (String::new(), String::new(), "failed".into()),
        };
        let _ = writeln!(s, "{},{},{},{},{},{gap},{slope},{pass}", c.cell_id, opt_f64(c.fraction), c.blocks, c.tau, c.threads);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{from_kv_document, to_kv_document};

    fn synthetic_config() -> ExperimentConfig {
        let spec = SyntheticSpec { n: 200, d: 20, s: 4, p: 0.05, seed: 3 };
        let obj = ObjectiveSpec {
            kind: ObjectiveKind::LogisticL2,
            lambda: Lambda::Value(0.05),
            mode: RegularizationMode::SupportWeighted,
            normalize: false,
        };
        let mut cfg = ExperimentConfig::new(DataSource::Synthetic(spec), obj, ScheduleKind::Hogwild);
        cfg.tau = 3;
        cfg.filter = FilterSpec::Fraction(0.5);
        cfg.horizon = Horizon::Iterations(2000);
        cfg.seeds = vec![1, 2];
        cfg
    }

    #[test]
    fn lambda_parsing_and_serde() {
        assert_eq!("auto".parse::<Lambda>().unwrap(), Lambda::Auto);
        assert_eq!("0.5".parse::<Lambda>().unwrap(), Lambda::Value(0.5));
        assert!("-1".parse::<Lambda>().is_err());
        assert_eq!(Lambda::Auto.resolve(1000), 0.001);
    }

    #[test]
    fn config_round_trips_through_kv_document() {
        let mut cfg = synthetic_config();
        cfg.engine = Engine::Parallel { threads: 2, counter_mode: CounterMode::LocalEstimate, tau_factor: 2 };
        cfg.mask = MaskPolicy::Bernoulli(0.25);
        let text = to_kv_document(&cfg).unwrap();
        let back: ExperimentConfig = from_kv_document(&text).unwrap();
        assert_eq!(back, cfg);
        let toy = ExperimentConfig::toy(ScheduleKind::SgdConvex);
        let back: ExperimentConfig = from_kv_document(&to_kv_document(&toy).unwrap()).unwrap();
        assert_eq!(back, toy);
    }

    #[test]
    fn toy_run_reports_constants_and_envelope() {
        let mut cfg = ExperimentConfig::toy(ScheduleKind::SgdConvex);
        cfg.horizon = Horizon::Iterations(2000);
        let out = run_experiment(&cfg).unwrap();
        let r = &out.manifest.resolved;
        assert_eq!((r.l, r.mu, r.e), (1.0, 0.5, 8.0));
        assert_eq!(r.t_threshold, 0.0);
        assert_eq!(out.traces.len(), 10);
        assert_eq!(out.summary.envelope_pass, Some(true));
        assert!(out.summary.final_gap < out.summary.initial_gap);
    }

    #[test]
    fn auto_lambda_is_recorded() {
        let mut cfg = synthetic_config();
        cfg.objective.lambda = Lambda::Auto;
        let p = Problem::build(&cfg).unwrap();
        let m = RunManifest::new(&p, None).unwrap();
        assert_eq!(m.resolved.lambda, 1.0 / 200.0);
        assert_eq!(m.resolved.blocks, 2);
    }

    #[test]
    fn manifest_replay_is_bit_exact() {
        let out = run_experiment(&synthetic_config()).unwrap();
        let text = to_kv_document(&out.manifest).unwrap();
        let manifest: RunManifest = from_kv_document(&text).unwrap();
        let again = replay(&manifest).unwrap();
        assert_eq!(again.traces, out.traces);
    }

    #[test]
    fn parallel_manifest_records_tau_and_snapshot_note() {
        let mut cfg = synthetic_config();
        cfg.engine = Engine::Parallel { threads: 2, counter_mode: CounterMode::SharedAtomic, tau_factor: 2 };
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.manifest.resolved.schedule_tau, 4);
        assert!(out.manifest.observed_tau.is_some());
        assert!(out.manifest.snapshot_note.is_some());
    }

    #[test]
    fn sweep_grid_and_csvs() {
        let sweep = SweepConfig {
            base: synthetic_config(),
            fractions: vec![1.0, 0.5],
            taus: vec![1, 10],
            threads: vec![],
        };
        let results = run_sweep(&sweep).unwrap();
        assert_eq!(results.len(), 4);
        let summary = sweep_summary_csv(&results);
        assert_eq!(summary.lines().count(), 5);
        assert!(summary.starts_with("cell_id,v,D,tau,P,final_gap,slope,envelope_pass\n"));
        let long = sweep_long_csv(&results);
        let per_cell = results[0].outcome.as_ref().unwrap().0.checkpoints.len();
        assert_eq!(long.lines().count(), 1 + 4 * per_cell);
    }

    #[test]
    fn failed_cell_is_marked_and_others_run() {
        let mut base = synthetic_config();
        base.growing_tau = true;
        base.alpha = Some(4.0);
        // growing τ forces α_t ≥ 12 > α, so every cell fails at assembly
        let sweep = SweepConfig { base, fractions: vec![1.0], taus: vec![1, 2], threads: vec![] };
        let results = run_sweep(&sweep).unwrap();
        assert!(results.iter().all(|r| r.outcome.is_err()));
        assert!(sweep_summary_csv(&results).lines().skip(1).all(|l| l.ends_with(",failed")));
    }

    #[test]
    fn empty_sweep_is_rejected() {
        let sweep = SweepConfig { base: synthetic_config(), fractions: vec![], taus: vec![], threads: vec![] };
        assert!(matches!(sweep.cells(), Err(Error::InvalidConfig(_))));
    }
}
