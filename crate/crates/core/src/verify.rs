//! Deterministic checks of the second-moment lemmas, filter unbiasedness,
//! the collision inequality, fitted rates, and envelope domination.
//!
//! Every expectation over samples here is an exact finite-sum enumeration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{FilterPartition, SparsityStats};
use crate::objective::{Objective, ProblemConstants};
use crate::trace::{check_same_grid, Trace};
use crate::vector::{DenseVector, SparseVector};

/// Relative slack allowed on the lemma checks.
pub const LEMMA_TOLERANCE: f64 = 1e-8;
/// Standard errors subtracted from the seed mean before comparing to an envelope.
pub const ENVELOPE_SLACK_SE: f64 = 3.0;
pub const MIN_ENVELOPE_SEEDS: usize = 10;
pub const MIN_FIT_POINTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub index: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub check: String,
    pub population: String,
    pub pass: bool,
    /// min over the population of RHS − LHS
    pub worst_margin: f64,
    /// min over the population of (RHS − LHS)/(1 + |RHS|)
    pub worst_relative_margin: f64,
    pub tolerance: f64,
    pub failures: Vec<Failure>,
}

impl VerificationReport {
    fn from_pairs(check: &str, population: String, pairs: &[(f64, f64)], tolerance: f64) -> Self {
        let mut worst_margin = f64::INFINITY;
        let mut worst_relative_margin = f64::INFINITY;
        let mut failures = Vec::new();
        for (index, &(lhs, rhs)) in pairs.iter().enumerate() {
            let margin = rhs - lhs;
            let rel = margin / (1.0 + rhs.abs());
            worst_margin = worst_margin.min(margin);
            worst_relative_margin = worst_relative_margin.min(rel);
            if !(rel >= -tolerance) {
                failures.push(Failure { index, lhs, rhs, note: String::new() });
            }
        }
        VerificationReport {
            check: check.to_string(),
            population,
            pass: failures.is_empty(),
            worst_margin,
            worst_relative_margin,
            tolerance,
            failures,
        }
    }
}

/// E‖∇f(w; ξ)‖² = (1/n) Σ_i ‖∇f_i(w)‖².
pub fn second_moment(obj: &Objective, w: &DenseVector) -> Result<f64> {
    w.check_len(obj.dimension())?;
    let n = obj.n();
    let total: f64 = (0..n).map(|i| obj.gradient_from_slice(i, w.as_slice()).norm_sq()).sum();
    Ok(total / n as f64)
}

fn lemma_pairs(
    obj: &Objective,
    constants: &ProblemConstants,
    probes: &[DenseVector],
    factor: f64,
) -> Result<Vec<(f64, f64)>> {
    probes
        .iter()
        .map(|w| {
            let lhs = second_moment(obj, w)?;
            let gap = obj.full_objective(w)? - constants.f_star;
            Ok((lhs, 4.0 * factor * gap + constants.n_var))
        })
        .collect()
}

/// E‖∇f(w; ξ)‖² ≤ 4L[F(w) − F(w*)] + N at every probe. Needs convex components.
pub fn check_lemma1(
    obj: &Objective,
    constants: &ProblemConstants,
    probes: &[DenseVector],
) -> Result<VerificationReport> {
    if !constants.convex_realizations {
        return Err(Error::Verification(
            "components are not convex; use check_lemma2".into(),
        ));
    }
    let pairs = lemma_pairs(obj, constants, probes, constants.l)?;
    Ok(VerificationReport::from_pairs(
        "lemma1_second_moment",
        format!("{} probe points", probes.len()),
        &pairs,
        LEMMA_TOLERANCE,
    ))
}

/// E‖∇f(w; ξ)‖² ≤ 4Lκ[F(w) − F(w*)] + N; no component convexity required.
pub fn check_lemma2(
    obj: &Objective,
    constants: &ProblemConstants,
    probes: &[DenseVector],
) -> Result<VerificationReport> {
    let pairs = lemma_pairs(obj, constants, probes, constants.l * constants.kappa)?;
    Ok(VerificationReport::from_pairs(
        "lemma2_second_moment",
        format!("{} probe points", probes.len()),
        &pairs,
        LEMMA_TOLERANCE,
    ))
}

/// Deterministic probes: w*, w₀, and `per_norm` quasi-random directions
/// (additive recurrence on the golden-ratio family, mapped to [−1, 1]) at each
/// norm, placed around w*.
pub fn probe_points(
    constants: &ProblemConstants,
    w0: &DenseVector,
    norms: &[f64],
    per_norm: usize,
) -> Vec<DenseVector> {
    let d = constants.w_star.len();
    // generalized golden ratio for dimension d: the root of x^{d+1} = x + 1
    let mut phi = 2.0f64;
    for _ in 0..64 {
        phi = (1.0 + phi).powf(1.0 / (d as f64 + 1.0));
    }
    let alphas: Vec<f64> = (1..=d).map(|j| (1.0 / phi.powi(j as i32)).fract()).collect();
    let mut out = vec![constants.w_star.clone(), w0.clone()];
    let mut k = 0usize;
    for &r in norms {
        for _ in 0..per_norm {
            k += 1;
            let mut dir: Vec<f64> = alphas
                .iter()
                .map(|a| 2.0 * (0.5 + a * k as f64).fract() - 1.0)
                .collect();
            let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            if len == 0.0 {
                dir[0] = 1.0;
            } else {
                dir.iter_mut().for_each(|v| *v /= len);
            }
            // alternate sign so d = 1 probes both sides
            let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
            let mut w = constants.w_star.clone();
            for (j, v) in dir.iter().enumerate() {
                w[j] += sign * r * v;
            }
            out.push(w);
        }
    }
    out
}

/// Default norms {0.1, 1, 10, 100, 1000}.
pub const PROBE_NORMS: [f64; 5] = [0.1, 1.0, 10.0, 100.0, 1000.0];

/// d_ξ × (mean block indicator) = D_ξ indicator, by integer counting.
pub fn check_filter_unbiased(obj: &Objective, partition: &FilterPartition) -> VerificationReport {
    let mut failures = Vec::new();
    let mut counts = vec![0usize; obj.dimension()];
    for i in 0..partition.n() {
        let support = obj.support_unchecked(i);
        let blocks = partition.blocks(i);
        let k = blocks.len();
        for b in blocks {
            for &j in b {
                counts[j] += 1;
            }
        }
        let scale = partition.scale(i);
        let mut bad = None;
        for &j in support {
            // scale · count_j / k must equal 1
            if counts[j] * scale != k {
                bad = Some(format!("coordinate {j}: count {} scale {scale} blocks {k}", counts[j]));
            }
        }
        let covered: usize = blocks.iter().map(Vec::len).sum();
        if covered != support.len() && bad.is_none() {
            bad = Some(format!("blocks cover {covered} entries, support has {}", support.len()));
        }
        for b in blocks {
            for &j in b {
                if support.binary_search(&j).is_err() && bad.is_none() {
                    bad = Some(format!("block coordinate {j} outside D_xi"));
                }
                counts[j] = 0;
            }
        }
        if let Some(note) = bad {
            failures.push(Failure { index: i, lhs: 0.0, rhs: 0.0, note });
        }
    }
    VerificationReport {
        check: "filter_unbiased".into(),
        population: format!("{} samples, D = {}", partition.n(), partition.parameter()),
        pass: failures.is_empty(),
        worst_margin: if failures.is_empty() { 0.0 } else { -1.0 },
        worst_relative_margin: if failures.is_empty() { 0.0 } else { -1.0 },
        tolerance: 0.0,
        failures,
    }
}

/// E|⟨∇f(w₁; ξ₁), ∇f(w₂; ξ₂)⟩| ≤ (√Δ/2)(E‖∇f(w₁; ξ₁)‖² + E‖∇f(w₂; ξ₂)‖²)
/// over independent uniform ξ₁, ξ₂, enumerating all n² pairs.
pub fn check_collision_inequality(
    obj: &Objective,
    pairs: &[(DenseVector, DenseVector)],
) -> Result<VerificationReport> {
    let delta = SparsityStats::compute(obj, 1)?.delta;
    let n = obj.n();
    let results = pairs
        .iter()
        .map(|(w1, w2)| {
            w1.check_len(obj.dimension())?;
            w2.check_len(obj.dimension())?;
            let g1: Vec<SparseVector> = (0..n).map(|i| obj.gradient_from_slice(i, w1.as_slice())).collect();
            let g2: Vec<SparseVector> = (0..n).map(|i| obj.gradient_from_slice(i, w2.as_slice())).collect();
            let mut lhs = 0.0;
            for a in &g1 {
                for b in &g2 {
                    lhs += a.dot(b).abs();
                }
            }
            lhs /= (n * n) as f64;
            let m1 = g1.iter().map(SparseVector::norm_sq).sum::<f64>() / n as f64;
            let m2 = g2.iter().map(SparseVector::norm_sq).sum::<f64>() / n as f64;
            Ok((lhs, 0.5 * delta.sqrt() * (m1 + m2)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VerificationReport::from_pairs(
        "collision_inequality",
        format!("{} point pairs, Delta = {delta}", pairs.len()),
        &results,
        LEMMA_TOLERANCE,
    ))
}

/// Random probe pairs around w* at the given radius.
pub fn probe_pairs(constants: &ProblemConstants, radius: f64, count: usize, seed: u64) -> Vec<(DenseVector, DenseVector)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = constants.w_star.len();
    let point = |rng: &mut ChaCha8Rng| {
        let mut w = constants.w_star.clone();
        for j in 0..d {
            w[j] += radius * (2.0 * rng.random::<f64>() - 1.0);
        }
        w
    };
    (0..count).map(|_| (point(&mut rng), point(&mut rng))).collect()
}

/// Time axis for slope fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RateAxis {
    #[default]
    Iterations,
    /// t′ = t·Δ̄_D/D
    CoordinateUpdates,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub points: usize,
    /// Checkpoints inside the window dropped for non-positive values.
    pub excluded: usize,
}

/// Least-squares slope of log(squared distance) against log t over the last
/// `tail_fraction` of the seed-averaged checkpoints (t = 0 is never used).
pub fn fit_rate_slope(traces: &[Trace], tail_fraction: f64, axis: RateAxis) -> Result<SlopeFit> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!("tail fraction must lie in (0, 1], got {tail_fraction}")));
    }
    let mean = Trace::mean(traces)?;
    let usable: Vec<_> = mean.checkpoints.iter().filter(|c| c.t > 0).collect();
    let take = ((usable.len() as f64) * tail_fraction).ceil() as usize;
    let window = &usable[usable.len() - take.min(usable.len())..];
    let mut xs = Vec::with_capacity(window.len());
    let mut ys = Vec::with_capacity(window.len());
    let mut excluded = 0;
    for c in window {
        let x = match axis {
            RateAxis::Iterations => c.t as f64,
            RateAxis::CoordinateUpdates => c.t_prime,
        };
        if c.squared_distance > 0.0 && x > 0.0 {
            xs.push(x.ln());
            ys.push(c.squared_distance.ln());
        } else {
            excluded += 1;
        }
    }
    if xs.len() < MIN_FIT_POINTS {
        return Err(Error::Verification(format!(
            "need at least {MIN_FIT_POINTS} positive checkpoints in the tail window, have {}",
            xs.len()
        )));
    }
    let (slope, intercept) = least_squares_line(&xs, &ys);
    Ok(SlopeFit { slope, intercept, points: xs.len(), excluded })
}

fn least_squares_line(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// At every checkpoint t ≥ `from_t`: seed mean − 3 standard errors of the
/// squared distance must not exceed `envelope(t)`.
pub fn check_envelope_domination<F>(traces: &[Trace], envelope: F, from_t: u64) -> Result<VerificationReport>
where
    F: Fn(u64) -> Result<f64>,
{
    if traces.len() < MIN_ENVELOPE_SEEDS {
        return Err(Error::Verification(format!(
            "envelope domination needs at least {MIN_ENVELOPE_SEEDS} seeds, got {}",
            traces.len()
        )));
    }
    check_same_grid(traces)?;
    let k = traces.len() as f64;
    let mut pairs = Vec::new();
    let mut ts = Vec::new();
    for (c, cp) in traces[0].checkpoints.iter().enumerate() {
        if cp.t < from_t {
            continue;
        }
        let vals: Vec<f64> = traces.iter().map(|tr| tr.checkpoints[c].squared_distance).collect();
        let mean = vals.iter().sum::<f64>() / k;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0);
        let se = (var / k).sqrt();
        pairs.push((mean - ENVELOPE_SLACK_SE * se, envelope(cp.t)?));
        ts.push(cp.t);
    }
    if pairs.is_empty() {
        return Err(Error::Verification(format!("no checkpoints at or after t = {from_t}")));
    }
    let mut report = VerificationReport::from_pairs(
        "envelope_domination",
        format!("{} seeds, {} checkpoints from t = {from_t}", traces.len(), pairs.len()),
        &pairs,
        0.0,
    );
    // absolute comparison: fail on any positive excess
    report.failures = pairs
        .iter()
        .zip(&ts)
        .enumerate()
        .filter(|(_, ((lhs, rhs), _))| lhs > rhs)
        .map(|(index, (&(lhs, rhs), t))| Failure { index, lhs, rhs, note: format!("t = {t}") })
        .collect();
    report.pass = report.failures.is_empty();
    report.worst_relative_margin = report.worst_margin;
    Ok(report)
}
