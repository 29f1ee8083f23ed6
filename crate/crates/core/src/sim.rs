//! Deterministic single-threaded simulator of the filtered recursion
//!
//! w_{t+1} = w_t − η_t d_ξ S_u ∇f(ŵ_t; ξ_t)
//!
//! where ŵ_t is w_{t−τ} plus a masked subset of the updates made during
//! iterations t−τ, …, t−1. With τ = 0 and D = 1 this is plain SGD.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{FilterPartition, SparsityStats};
use crate::objective::{Objective, ProblemConstants};
use crate::schedule::{tau_growth_cap, StepSchedule};
use crate::trace::{Checkpoint, CheckpointPlan, Trace, TraceSeed};
use crate::vector::{DenseVector, SparseVector};

/// Which pending (last τ) updates a read sees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskPolicy {
    AllIncluded,
    NoneIncluded,
    /// Each pending coordinate update is seen independently with probability p.
    Bernoulli(f64),
}

impl Default for MaskPolicy {
    fn default() -> Self {
        MaskPolicy::Bernoulli(0.5)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayRule {
    Constant(u64),
    /// τ(t) = min(cap, ⌊√(t·L(t))⌋), zero while the growth cap is undefined.
    Growing { cap: u64 },
}

impl DelayRule {
    pub fn max_tau(&self) -> u64 {
        match *self {
            DelayRule::Constant(tau) => tau,
            DelayRule::Growing { cap } => cap,
        }
    }

    pub fn tau_at(&self, t: u64) -> u64 {
        match *self {
            DelayRule::Constant(tau) => tau,
            DelayRule::Growing { cap } => match tau_growth_cap(t as f64) {
                Ok(g) => cap.min(g.floor() as u64),
                Err(_) => 0,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayModel {
    pub rule: DelayRule,
    pub mask: MaskPolicy,
}

impl DelayModel {
    pub fn new(rule: DelayRule, mask: MaskPolicy) -> Result<Self> {
        if let MaskPolicy::Bernoulli(p) = mask {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("mask probability must lie in [0, 1], got {p}")));
            }
        }
        Ok(DelayModel { rule, mask })
    }

    pub fn constant(tau: u64, mask: MaskPolicy) -> Result<Self> {
        Self::new(DelayRule::Constant(tau), mask)
    }

    /// τ = 0: every read is consistent.
    pub fn consistent() -> Self {
        DelayModel { rule: DelayRule::Constant(0), mask: MaskPolicy::AllIncluded }
    }
}

/// One applied update: w_{j+1} = w_j + delta.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateRecord {
    pub iteration: u64,
    pub block: Vec<usize>,
    pub delta: SparseVector,
}

/// Iterate plus the update history needed to synthesize delayed reads.
#[derive(Debug, Clone)]
pub struct SimState {
    w: DenseVector,
    /// w_{t − capacity}, advanced by exactly the additions that built `w`.
    base: DenseVector,
    history: VecDeque<UpdateRecord>,
    capacity: usize,
    t: u64,
}

impl SimState {
    pub fn new(w0: DenseVector, max_tau: u64) -> Self {
        SimState {
            base: w0.clone(),
            w: w0,
            history: VecDeque::with_capacity(max_tau as usize + 1),
            capacity: max_tau as usize,
            t: 0,
        }
    }

    pub fn w(&self) -> &DenseVector {
        &self.w
    }

    pub fn iteration(&self) -> u64 {
        self.t
    }

    pub fn history(&self) -> impl Iterator<Item = &UpdateRecord> {
        self.history.iter()
    }

    /// ŵ_t: w_{t−τ} plus the pending updates from [t−τ, t) kept by freshly
    /// drawn masks. Updates older than t−τ are always included.
    pub fn read_inconsistent<R: Rng + ?Sized>(&self, delay: &DelayModel, rng: &mut R) -> Result<DenseVector> {
        let t = self.t;
        let tau = delay.rule.tau_at(t).min(self.capacity as u64);
        if tau == 0 || delay.mask == MaskPolicy::AllIncluded {
            return Ok(self.w.clone());
        }
        let window_start = t.saturating_sub(tau);
        let oldest_needed = window_start;
        if let Some(front) = self.history.front() {
            let base_iteration = t - self.history.len() as u64;
            if front.iteration != base_iteration || base_iteration > oldest_needed {
                return Err(Error::HistoryUnderflow { t, needed: oldest_needed, oldest: front.iteration });
            }
        }
        let mut out = self.base.clone();
        for rec in &self.history {
            if rec.iteration < window_start {
                out.axpy_sparse(1.0, &rec.delta);
                continue;
            }
            match delay.mask {
                MaskPolicy::AllIncluded => out.axpy_sparse(1.0, &rec.delta),
                MaskPolicy::NoneIncluded => {}
                MaskPolicy::Bernoulli(p) => {
                    for (j, v) in rec.delta.iter() {
                        if rng.random_bool(p) {
                            out[j] += v;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// w[h] ← w[h] − η·scale·g[h] on the support of `grad_block` (which must
    /// lie inside `block`). Returns the applied delta.
    pub fn apply_update(
        &mut self,
        block: &[usize],
        scale: usize,
        grad_block: &SparseVector,
        eta: f64,
    ) -> Result<SparseVector> {
        debug_assert!(grad_block.indices().iter().all(|j| block.binary_search(j).is_ok()));
        let factor = -eta * scale as f64;
        let delta = grad_block.scaled(factor);
        if delta.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { t: self.t });
        }
        self.w.axpy_sparse(1.0, &delta);
        if self.capacity > 0 {
            self.history.push_back(UpdateRecord {
                iteration: self.t,
                block: block.to_vec(),
                delta: delta.clone(),
            });
            if self.history.len() > self.capacity {
                let old = self.history.pop_front().expect("non-empty history");
                self.base.axpy_sparse(1.0, &old.delta);
            }
        }
        self.t += 1;
        Ok(delta)
    }
}

/// Independent generator streams of one run.
pub(crate) struct RunRngs {
    pub sample: ChaCha8Rng,
    pub filter: ChaCha8Rng,
    pub mask: ChaCha8Rng,
}

impl RunRngs {
    pub fn new(seed: u64) -> Self {
        let stream = |s| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(s);
            r
        };
        RunRngs { sample: stream(0), filter: stream(1), mask: stream(2) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequentialConfig {
    pub iterations: u64,
    pub checkpoints: CheckpointPlan,
    pub seed: u64,
}

/// Evaluates checkpoint metrics against the reference solution.
pub(crate) fn checkpoint(
    obj: &Objective,
    constants: &ProblemConstants,
    t: u64,
    t_prime_factor: f64,
    w: &DenseVector,
) -> Result<Checkpoint> {
    Ok(Checkpoint {
        t,
        t_prime: t as f64 * t_prime_factor,
        objective_gap: obj.full_objective(w)? - constants.f_star,
        squared_distance: w.distance_sq(&constants.w_star),
    })
}

/// Δ̄_D / D for the partition.
pub(crate) fn t_prime_factor(obj: &Objective, partition: &FilterPartition) -> Result<f64> {
    let stats = SparsityStats::compute(obj, partition.parameter())?;
    Ok(stats.delta_bar_d / partition.parameter() as f64)
}

pub(crate) fn check_components(
    obj: &Objective,
    partition: &FilterPartition,
    schedule: &StepSchedule,
    constants: &ProblemConstants,
    w0: &DenseVector,
) -> Result<()> {
    w0.check_len(obj.dimension())?;
    constants.w_star.check_len(obj.dimension())?;
    if partition.n() != obj.n() {
        return Err(Error::InvalidConfig(format!(
            "partition covers {} samples, objective has {}",
            partition.n(),
            obj.n()
        )));
    }
    if schedule.mu.is_finite() && schedule.mu != constants.mu {
        return Err(Error::InvalidConfig(format!(
            "schedule mu = {} does not match problem mu = {}",
            schedule.mu, constants.mu
        )));
    }
    if schedule.l.is_finite() && schedule.l != constants.l {
        return Err(Error::InvalidConfig(format!(
            "schedule L = {} does not match problem L = {}",
            schedule.l, constants.l
        )));
    }
    Ok(())
}

/// Runs the recursion for `cfg.iterations` steps and records checkpoints.
pub fn run_sequential(
    obj: &Objective,
    partition: &FilterPartition,
    schedule: &StepSchedule,
    delay: &DelayModel,
    constants: &ProblemConstants,
    w0: &DenseVector,
    cfg: &SequentialConfig,
) -> Result<Trace> {
    check_components(obj, partition, schedule, constants, w0)?;
    if cfg.iterations == 0 {
        return Err(Error::InvalidConfig("iterations must be >= 1".into()));
    }
    let factor = t_prime_factor(obj, partition)?;
    let times = cfg.checkpoints.times(cfg.iterations)?;
    let mut next = times.iter().copied().peekable();
    let mut rngs = RunRngs::new(cfg.seed);
    let mut state = SimState::new(w0.clone(), delay.rule.max_tau());
    let n = obj.n();
    let mut checkpoints = Vec::with_capacity(times.len());

    for t in 0..=cfg.iterations {
        if next.peek() == Some(&t) {
            checkpoints.push(checkpoint(obj, constants, t, factor, state.w())?);
            next.next();
        }
        if t == cfg.iterations {
            break;
        }
        let i = rngs.sample.random_range(0..n);
        let w_hat = state.read_inconsistent(delay, &mut rngs.mask)?;
        let (block, scale) = partition.sample_filter(i, &mut rngs.filter);
        let grad = obj.gradient_from_slice(i, w_hat.as_slice());
        let grad_block = if scale == 1 { grad } else { grad.restrict_to(block) };
        state.apply_update(block, scale, &grad_block, schedule.step(t))?;
    }
    Ok(Trace { seed: TraceSeed::Seed(cfg.seed), checkpoints })
}

/// E_{ξ,u}[d_ξ S_u ∇f(w; ξ)] by exact enumeration over samples and blocks.
pub fn filtered_gradient_expectation(
    obj: &Objective,
    partition: &FilterPartition,
    w: &DenseVector,
) -> Result<DenseVector> {
    w.check_len(obj.dimension())?;
    let n = obj.n();
    let mut acc = DenseVector::zeros(obj.dimension());
    for i in 0..n {
        let g = obj.gradient_from_slice(i, w.as_slice());
        let blocks = partition.blocks(i);
        let weight = partition.scale(i) as f64 / blocks.len() as f64 / n as f64;
        for b in blocks {
            acc.axpy_sparse(weight, &g.restrict_to(b));
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::solve_reference;
    use crate::schedule::{make_schedule, ScheduleKind, ScheduleOptions};

    fn toy_setup() -> (Objective, FilterPartition, ProblemConstants) {
        let obj = Objective::toy_quadratic();
        let part = FilterPartition::build(&obj, 1, 0).unwrap();
        let c = ProblemConstants::compute(&obj, 1e-12).unwrap();
        (obj, part, c)
    }

    fn spike(j: usize, v: f64) -> SparseVector {
        SparseVector::new(vec![j], vec![v]).unwrap()
    }

    #[test]
    fn all_included_reads_current_iterate() {
        let mut st = SimState::new(DenseVector::zeros(4), 3);
        let delay = DelayModel::constant(3, MaskPolicy::AllIncluded).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in 0..6 {
            st.apply_update(&[t % 4], 1, &spike(t % 4, 1.0 + t as f64), 0.1).unwrap();
            assert_eq!(&st.read_inconsistent(&delay, &mut rng).unwrap(), st.w());
        }
    }

    #[test]
    fn none_included_reads_delayed_iterate_exactly() {
        let mut st = SimState::new(DenseVector::zeros(3), 3);
        let delay = DelayModel::constant(3, MaskPolicy::NoneIncluded).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut past = vec![st.w().clone()];
        for t in 0..10 {
            st.apply_update(&[t % 3], 1, &spike(t % 3, 0.37 * (t as f64 + 1.0)), 0.3).unwrap();
            past.push(st.w().clone());
            let read = st.read_inconsistent(&delay, &mut rng).unwrap();
            let lag = (t + 1).saturating_sub(3);
            assert_eq!(read, past[lag]);
        }
    }

    #[test]
    fn bernoulli_single_pending_update_two_outcomes() {
        let mut st = SimState::new(DenseVector::zeros(3), 1);
        let delta = st.apply_update(&[2], 1, &spike(2, 4.0), 0.5).unwrap();
        let delay = DelayModel::constant(1, MaskPolicy::Bernoulli(0.5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trials = 4000;
        let mut current = 0;
        for _ in 0..trials {
            let r = st.read_inconsistent(&delay, &mut rng).unwrap();
            if &r == st.w() {
                current += 1;
            } else {
                let mut prev = st.w().clone();
                prev.axpy_sparse(-1.0, &delta);
                assert_eq!(r, prev);
            }
        }
        let frac = current as f64 / trials as f64;
        assert!((frac - 0.5).abs() < 0.03, "{frac}");
    }

    #[test]
    fn apply_update_examples() {
        let mut st = SimState::new(DenseVector::zeros(1), 0);
        st.apply_update(&[0], 2, &spike(0, 1.0), 0.25).unwrap();
        assert_eq!(st.w()[0], -0.5);
        let before = st.w().clone();
        let d = st.apply_update(&[0], 1, &SparseVector::empty(), 0.25).unwrap();
        assert!(d.is_empty());
        assert_eq!(st.w(), &before);
        let err = st.apply_update(&[0], 1, &spike(0, f64::MAX), f64::MAX).unwrap_err();
        assert!(matches!(err, Error::NonFinite { t: 2 }));
    }

    #[test]
    fn delayed_reads_are_sub_sums_of_the_window() {
        let mut st = SimState::new(DenseVector::zeros(2), 4);
        let delay = DelayModel::constant(4, MaskPolicy::Bernoulli(0.5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut past = vec![st.w().clone()];
        let mut deltas = Vec::new();
        for t in 0..30usize {
            let g = SparseVector::new(vec![0, 1], vec![1.0 + t as f64, -2.0]).unwrap();
            deltas.push(st.apply_update(&[0, 1], 1, &g, 0.01).unwrap());
            past.push(st.w().clone());
            let now = t + 1;
            let read = st.read_inconsistent(&delay, &mut rng).unwrap();
            let lag = now.saturating_sub(4);
            // coordinate-wise, read − w_{t−τ} must equal some subset sum of window deltas
            for j in 0..2 {
                let target = read[j] - past[lag][j];
                let window: Vec<f64> = deltas[lag..now].iter().map(|d| d.get(j)).collect();
                let found = (0u32..(1 << window.len())).any(|mask| {
                    let s: f64 = window
                        .iter()
                        .enumerate()
                        .filter(|(b, _)| mask & (1 << b) != 0)
                        .map(|(_, v)| v)
                        .sum();
                    (s - target).abs() <= 1e-12
                });
                assert!(found, "t = {now}, coord {j}");
            }
        }
    }

    #[test]
    fn filtered_gradient_is_unbiased_on_toy() {
        let (obj, part, _) = toy_setup();
        for w in [-3.0, 0.0, 2.5] {
            let w = DenseVector::from_vec(vec![w]);
            let e = filtered_gradient_expectation(&obj, &part, &w).unwrap();
            let g = obj.full_gradient(&w).unwrap();
            assert!((e[0] - g[0]).abs() < 1e-15);
        }
    }

    #[test]
    fn toy_sgd_run_is_deterministic_and_converges() {
        let (obj, part, c) = toy_setup();
        let sched = make_schedule(ScheduleKind::SgdConvex, &c, 0, 1, ScheduleOptions::default()).unwrap();
        let cfg = SequentialConfig { iterations: 5000, checkpoints: CheckpointPlan::Every(500), seed: 4 };
        let delay = DelayModel::consistent();
        let w0 = DenseVector::zeros(1);
        let a = run_sequential(&obj, &part, &sched, &delay, &c, &w0, &cfg).unwrap();
        let b = run_sequential(&obj, &part, &sched, &delay, &c, &w0, &cfg).unwrap();
        assert_eq!(a, b);
        assert!((a.checkpoints[0].squared_distance - 1.0).abs() < 1e-9);
        assert!(a.last().unwrap().squared_distance < 0.1);
    }

    #[test]
    fn schedule_mismatch_is_rejected() {
        let (obj, part, c) = toy_setup();
        let mut other = c.clone();
        other.mu = 0.25;
        let sched = make_schedule(ScheduleKind::SgdConvex, &other, 0, 1, ScheduleOptions::default()).unwrap();
        let cfg = SequentialConfig { iterations: 10, checkpoints: CheckpointPlan::Every(5), seed: 0 };
        let err = run_sequential(&obj, &part, &sched, &DelayModel::consistent(), &c, &DenseVector::zeros(1), &cfg)
            .unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
        let (w, _) = solve_reference(&obj, 1e-9).unwrap();
        assert!(run_sequential(&obj, &part, &sched, &DelayModel::consistent(), &c, &w, &SequentialConfig {
            iterations: 0,
            ..cfg
        })
        .is_err());
    }

    #[test]
    fn growing_delay_rule() {
        let rule = DelayRule::Growing { cap: 50 };
        assert_eq!(rule.tau_at(2), 0);
        assert_eq!(rule.tau_at(100), tau_growth_cap(100.0).unwrap().floor() as u64);
        assert_eq!(rule.tau_at(100_000_000), 50);
    }
}
