//! End-to-end acceptance criteria. Each criterion prints one PASS/FAIL line.

use std::fs;
use std::io::BufReader;
use std::thread;
use std::time::Instant;

use asyncsgd::experiment::{
    run_experiment, write_run_outputs, DataSource, Engine, ExperimentConfig, FilterSpec, Horizon, Lambda,
    ObjectiveSpec, Problem,
};
use asyncsgd::io::read_kv_document;
use asyncsgd::libsvm::{parse_libsvm, write_libsvm};
use asyncsgd::parallel::{atomic_coordinate_add, SharedState};
use asyncsgd::schedule::tau_growth_cap;
use asyncsgd::synthetic::{generate_synthetic, subsample, SyntheticSpec};
use asyncsgd::verify::{
    check_filter_unbiased, check_lemma1, fit_rate_slope, probe_points, RateAxis, PROBE_NORMS,
};
use asyncsgd::{
    make_schedule, CheckpointPlan, CounterMode, DenseVector, FilterPartition, MaskPolicy, Objective,
    ObjectiveKind, ProblemConstants, RegularizationMode, ScheduleKind, ScheduleOptions, SparsityStats, Trace,
};

fn report(id: u32, name: &str, pass: bool, detail: String) {
    println!("criterion {id:>2} [{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {id} failed: {detail}");
}

const N: usize = 1000;

fn synthetic_spec() -> SyntheticSpec {
    SyntheticSpec { n: N, d: 50, s: 5, p: 0.05, seed: 7 }
}

fn logistic_spec() -> ObjectiveSpec {
    ObjectiveSpec {
        kind: ObjectiveKind::LogisticL2,
        lambda: Lambda::Auto,
        mode: RegularizationMode::SupportWeighted,
        normalize: false,
    }
}

/// The §5 protocol: α = α_t = 4, E = max{2τ, 16LD/μ}, 10 seeds, 50 epochs.
fn protocol(tau: u64, v: f64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(DataSource::Synthetic(synthetic_spec()), logistic_spec(), ScheduleKind::Hogwild);
    cfg.alpha = Some(4.0);
    cfg.tau = tau;
    cfg.filter = FilterSpec::Fraction(v);
    cfg.mask = MaskPolicy::Bernoulli(0.5);
    cfg.horizon = Horizon::Epochs(50);
    cfg.seeds = (1..=10).collect();
    cfg.checkpoints = CheckpointPlan::Every(1000);
    cfg
}

#[test]
fn criterion_1() {
    let start = Instant::now();
    let toy = Objective::toy_quadratic();
    let toy_c = ProblemConstants::compute(&toy, 1e-12).unwrap();
    let toy_probes = probe_points(&toy_c, &DenseVector::zeros(1), &PROBE_NORMS, 40);
    let toy_r = check_lemma1(&toy, &toy_c, &toy_probes).unwrap();

    let ds = generate_synthetic(&synthetic_spec()).unwrap();
    let obj = Objective::logistic(ds, 1.0 / N as f64, RegularizationMode::SupportWeighted).unwrap();
    let c = ProblemConstants::compute(&obj, 1e-10).unwrap();
    let probes = probe_points(&c, &DenseVector::zeros(50), &PROBE_NORMS, 40);
    let r = check_lemma1(&obj, &c, &probes).unwrap();
    let far = probes.iter().map(|w| w.distance_sq(&c.w_star).sqrt()).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    let pass = toy_r.pass && r.pass && probes.len() >= 200 && toy_probes.len() >= 200 && far >= 999.0 && secs < 60.0;
    report(
        1,
        "Lemma 1 second-moment bound",
        pass,
        format!(
            "toy {} probes worst rel margin {:.3e}; logistic {} probes (max radius {far:.0}) worst rel margin {:.3e}; {secs:.1}s",
            toy_probes.len(),
            toy_r.worst_relative_margin,
            probes.len(),
            r.worst_relative_margin
        ),
    );
}

#[test]
fn criterion_2() {
    let ds = generate_synthetic(&synthetic_spec()).unwrap();
    let obj = Objective::logistic(ds, 1.0 / N as f64, RegularizationMode::SupportWeighted).unwrap();
    let delta_bar = SparsityStats::compute(&obj, 1).unwrap().delta_bar;
    let mut pass = true;
    let mut checked = Vec::new();
    for d in [1, 2, 3, delta_bar] {
        let part = FilterPartition::build(&obj, d, 11).unwrap();
        let r = check_filter_unbiased(&obj, &part);
        pass &= r.pass;
        checked.push(format!("synthetic D={d}:{}", r.failures.len()));
    }

    // a LIBSVM file with covtype-like shape, parsed back and subsampled
    let big = generate_synthetic(&SyntheticSpec { n: 8000, d: 54, s: 12, p: 0.1, seed: 21 }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.libsvm");
    write_libsvm(&big, fs::File::create(&path).unwrap()).unwrap();
    let parsed = parse_libsvm(BufReader::new(fs::File::open(&path).unwrap()), None).unwrap();
    let sub = subsample(&parsed.dataset, 5000, 5).unwrap();
    let rows = sub.len();
    let obj = Objective::logistic(sub, 1.0 / rows as f64, RegularizationMode::SupportWeighted).unwrap();
    let delta_bar = SparsityStats::compute(&obj, 1).unwrap().delta_bar;
    for d in [1, 2, 3, delta_bar] {
        let part = FilterPartition::build(&obj, d, 11).unwrap();
        let r = check_filter_unbiased(&obj, &part);
        pass &= r.pass && r.tolerance == 0.0;
        checked.push(format!("libsvm[{rows}] D={d}:{}", r.failures.len()));
    }
    report(2, "filter unbiasedness (integer identity)", pass, format!("failures per case {}", checked.join(" ")));
}

#[test]
fn criterion_3() {
    let start = Instant::now();
    let mut cfg = ExperimentConfig::toy(ScheduleKind::SgdConvex);
    cfg.horizon = Horizon::Iterations(100_000);
    cfg.seeds = (1..=30).collect();
    let out = run_experiment(&cfg).unwrap();
    let s = &out.problem.schedule;
    let consts_ok = out.manifest.resolved.l == 1.0
        && out.manifest.resolved.mu == 0.5
        && (out.manifest.resolved.n_var - 2.0).abs() < 1e-9
        && s.e == 8.0
        && out.manifest.resolved.t_threshold == 0.0
        && s.step(0) == 2.0 / (0.5 * 8.0);
    let k = out.traces.len() as f64;
    let mut worst = f64::INFINITY;
    let mut points = 0;
    for (c, cp) in out.traces[0].checkpoints.iter().enumerate() {
        if cp.t < 10 {
            continue;
        }
        let vals: Vec<f64> = out.traces.iter().map(|tr| tr.checkpoints[c].squared_distance).collect();
        let mean = vals.iter().sum::<f64>() / k;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
        let lower = mean - 3.0 * (var / k).sqrt();
        let envelope = 128.0 / (cp.t as f64 + 8.0);
        worst = worst.min(envelope - lower);
        points += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        3,
        "SGD envelope 128/(t+8) on the toy quadratic",
        consts_ok && worst >= 0.0 && secs < 60.0,
        format!("{points} checkpoints from t = 10, worst margin {worst:.3e}, 30 seeds, {secs:.1}s"),
    );
}

fn slope_of(out_traces: &[Trace]) -> f64 {
    fit_rate_slope(out_traces, 0.5, RateAxis::Iterations).unwrap().slope
}

/// Ungated: the same protocol on ℓ2-normalized features.
fn normalized_slope(v: f64) -> f64 {
    let mut cfg = protocol(10, v);
    cfg.objective.normalize = true;
    let out = run_experiment(&cfg).unwrap();
    fit_rate_slope(&out.traces, 0.5, RateAxis::CoordinateUpdates).unwrap().slope
}

#[test]
fn criterion_4() {
    let start = Instant::now();
    let out = run_experiment(&protocol(10, 1.0)).unwrap();
    let slope = slope_of(&out.traces);
    let r = &out.manifest.resolved;
    let expected_e = (2.0 * 10.0f64).max(16.0 * r.l * r.blocks as f64 / r.mu);
    let secs = start.elapsed().as_secs_f64();
    report(
        4,
        "sublinear rate under the protocol schedule",
        (-1.3..=-0.7).contains(&slope) && (out.problem.schedule.e - expected_e).abs() <= 1e-9 * expected_e && secs < 300.0,
        format!(
            "tail slope {slope:.3}; L = {:.4}, mu = {:.1e}, E = {:.0}, iterations = {}; {secs:.1}s; \
             ungated diagnostic, l2-normalized features: slope {:.3}",
            r.l,
            r.mu,
            r.e,
            r.iterations,
            normalized_slope(1.0)
        ),
    );
}

#[test]
fn criterion_5() {
    let gaps: Vec<(u64, f64)> = [1, 10, 100]
        .into_iter()
        .map(|tau| (tau, run_experiment(&protocol(tau, 1.0)).unwrap().summary.final_gap))
        .collect();
    let max = gaps.iter().map(|g| g.1).fold(f64::MIN, f64::max);
    let min = gaps.iter().map(|g| g.1).fold(f64::MAX, f64::min);
    let spread = (max - min) / min;
    report(
        5,
        "tau-insensitivity of the final gap",
        spread <= 0.10,
        format!(
            "final gaps {}; relative spread {spread:.4}",
            gaps.iter().map(|(t, g)| format!("tau={t}:{g:.5e}")).collect::<Vec<_>>().join(" ")
        ),
    );
}

#[test]
fn criterion_6() {
    let mut pass = true;
    let mut cells = Vec::new();
    for v in [1.0, 0.75, 2.0 / 3.0, 0.5, 1.0 / 3.0, 0.25] {
        let out = run_experiment(&protocol(10, v)).unwrap();
        let fit = fit_rate_slope(&out.traces, 0.5, RateAxis::CoordinateUpdates).unwrap();
        let ratio = out.summary.final_gap / out.summary.initial_gap;
        let ok = ratio < 0.1 && (-1.3..=-0.7).contains(&fit.slope);
        pass &= ok;
        cells.push(format!("v={v:.3}(D={}):gap ratio {ratio:.3} slope {:.3}", out.manifest.resolved.blocks, fit.slope));
    }
    let diag: Vec<String> =
        [1.0, 0.5, 0.25].into_iter().map(|v| format!("v={v}:{:.3}", normalized_slope(v))).collect();
    report(
        6,
        "fraction sweep converges at a sublinear rate in t'",
        pass,
        format!("{}; ungated diagnostic, l2-normalized slopes {}", cells.join("; "), diag.join(" ")),
    );
}

#[test]
fn criterion_7() {
    let start = Instant::now();
    let ijcnn1 = tau_growth_cap(50.0 * 91701.0).unwrap();
    let covtype = tau_growth_cap(50.0 * 406709.0).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let e1 = (ijcnn1 - 524.0).abs() / 524.0;
    let e2 = (covtype - 1058.0).abs() / 1058.0;
    report(
        7,
        "tau-cap reproduction",
        e1 <= 0.02 && e2 <= 0.02 && elapsed < 1e-3,
        format!("{ijcnn1:.1} vs 524 ({:.2}%), {covtype:.1} vs 1058 ({:.2}%)", 100.0 * e1, 100.0 * e2),
    );
}

#[test]
fn criterion_8() {
    let start = Instant::now();
    let state = SharedState::new(&DenseVector::zeros(1));
    thread::scope(|s| {
        for _ in 0..8 {
            s.spawn(|| {
                for _ in 0..1_000_000 {
                    atomic_coordinate_add(&state, 0, 1.0);
                }
            });
        }
    });
    let total = state.load(0);
    let stress_ok = total == 8_000_000.0;

    let mut finals = Vec::new();
    for p in [1usize, 2, 4, 8] {
        let mut cfg = ExperimentConfig::new(DataSource::Synthetic(synthetic_spec()), logistic_spec(), ScheduleKind::ExpPeriod);
        cfg.filter = FilterSpec::Blocks(1);
        cfg.engine = Engine::Parallel { threads: p, counter_mode: CounterMode::SharedAtomic, tau_factor: 2 };
        cfg.horizon = Horizon::Epochs(200);
        cfg.seeds = (1..=40).collect();
        cfg.checkpoints = CheckpointPlan::Every(5000);
        let out = run_experiment(&cfg).unwrap();
        finals.push((p, out.summary.final_squared_distance, out.manifest.observed_tau.unwrap_or(0)));
    }
    let base = finals[0].1;
    let parity = finals.iter().all(|&(_, v, _)| (v - base).abs() <= 0.2 * base);
    let secs = start.elapsed().as_secs_f64();
    report(
        8,
        "lock-free engine: exact atomics and P-parity",
        stress_ok && parity && secs < 300.0,
        format!(
            "stress total {total}; final mean squared distance {}; {secs:.1}s",
            finals
                .iter()
                .map(|(p, v, t)| format!("P={p}:{v:.4e} (tau^={t}, {:+.1}%)", 100.0 * (v - base) / base))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    );
}

#[test]
fn criterion_9() {
    let toy = ProblemConstants::compute(&Objective::toy_quadratic(), 1e-12).unwrap();
    let cfg = protocol(10, 1.0);
    let syn = Problem::build(&cfg).unwrap().data.constants.clone();
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, c, tau, d) in [("toy", &toy, 10, 1), ("synthetic", &syn, 10, 1), ("synthetic D=4", &syn, 100, 4)] {
        let s = make_schedule(ScheduleKind::ExpPeriod, c, tau, d, ScheduleOptions::default()).unwrap();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for t in 0..=1_000_000u64 {
            let a = s.implied_alpha(t);
            // independent oracle: η·μ·(t+E) from the step itself
            let b = s.step(t) * s.mu * (t as f64 + s.e);
            pass &= (4.0..8.0).contains(&a) && (a - b).abs() <= 1e-12 * a;
            lo = lo.min(a);
            hi = hi.max(a);
        }
        detail.push(format!("{name} (E = {:.0}): alpha_t in [{lo}, {hi}]", s.e));
    }
    report(9, "exponential-period alpha_t in [4, 8)", pass, detail.join("; "));
}

#[test]
fn criterion_10() {
    let mut cfg = protocol(10, 0.5);
    cfg.horizon = Horizon::Iterations(5000);
    cfg.seeds = vec![3, 4];
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    write_run_outputs(&run_experiment(&cfg).unwrap(), &a).unwrap();
    let manifest: asyncsgd::experiment::RunManifest = read_kv_document(&a.join("manifest.toml")).unwrap();
    write_run_outputs(&run_experiment(&manifest.config).unwrap(), &b).unwrap();
    let mut pass = true;
    let mut files = 0;
    for name in ["trace_seed_3.csv", "trace_seed_4.csv", "trace_mean.csv"] {
        pass &= fs::read(a.join(name)).unwrap() == fs::read(b.join(name)).unwrap();
        files += 1;
    }
    report(10, "determinism from a manifest", pass, format!("{files} trace CSVs compared byte for byte"));
}
