//! Lock-free multi-threaded Hogwild!: workers share one parameter vector
//! with per-coordinate atomic reads and compare-and-swap adds.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::thread;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::FilterPartition;
use crate::objective::{Objective, ProblemConstants};
use crate::schedule::StepSchedule;
use crate::sim::{check_components, checkpoint, t_prime_factor, RunRngs};
use crate::trace::{CheckpointPlan, Trace, TraceSeed};
use crate::vector::DenseVector;

/// An `f64` cell updated through its bit pattern.
#[derive(Debug, Default)]
pub struct AtomicF64(AtomicU64);

impl AtomicF64 {
    pub fn new(v: f64) -> Self {
        AtomicF64(AtomicU64::new(v.to_bits()))
    }

    pub fn load(&self) -> f64 {
        f64::from_bits(self.0.load(Ordering::Relaxed))
    }

    pub fn store(&self, v: f64) {
        self.0.store(v.to_bits(), Ordering::Relaxed)
    }

    /// Adds `delta`, returning the previous value.
    pub fn fetch_add(&self, delta: f64) -> f64 {
        let mut old = self.0.load(Ordering::Relaxed);
        loop {
            let new = (f64::from_bits(old) + delta).to_bits();
            match self.0.compare_exchange_weak(old, new, Ordering::Relaxed, Ordering::Relaxed) {
                Ok(prev) => return f64::from_bits(prev),
                Err(actual) => old = actual,
            }
        }
    }
}

/// Shared parameter vector and iteration counter.
#[derive(Debug)]
pub struct SharedState {
    params: Vec<AtomicF64>,
    counter: AtomicU64,
}

impl SharedState {
    pub fn new(w0: &DenseVector) -> Self {
        SharedState {
            params: w0.as_slice().iter().map(|&v| AtomicF64::new(v)).collect(),
            counter: AtomicU64::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn load(&self, index: usize) -> f64 {
        self.params[index].load()
    }

    /// Coordinate-wise snapshot; not consistent across coordinates while
    /// workers run.
    pub fn snapshot(&self) -> DenseVector {
        DenseVector::from_vec(self.params.iter().map(AtomicF64::load).collect())
    }

    pub fn iteration(&self) -> u64 {
        self.counter.load(Ordering::Relaxed)
    }
}

/// Adds `delta` to one coordinate; concurrent adds are never lost.
pub fn atomic_coordinate_add(state: &SharedState, index: usize, delta: f64) {
    state.params[index].fetch_add(delta);
}

/// Source of the iteration number a worker feeds into the step size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterMode {
    /// The globally allocated iteration number.
    #[default]
    SharedAtomic,
    /// Local iterations × P: each worker advances its own period exponent.
    LocalEstimate,
}

#[derive(Debug, Clone)]
pub struct ParallelConfig {
    pub threads: usize,
    pub schedule: StepSchedule,
    pub total_iterations: u64,
    /// Worker `i` seeds its generators with `seed_base + i`.
    pub seed_base: u64,
    pub counter_mode: CounterMode,
    pub checkpoints: CheckpointPlan,
}

#[derive(Debug, Clone)]
pub struct ParallelOutput {
    /// Checkpoints before the final one are coordinate-wise inconsistent
    /// snapshots; the final one is taken after all workers joined.
    pub trace: Trace,
    pub final_w: DenseVector,
    /// Largest observed gap between a read and the oldest update still in
    /// flight at that moment.
    pub observed_tau: u64,
    /// τ the schedule's E was built with.
    pub configured_tau: u64,
}

impl ParallelOutput {
    pub fn tau_exceeded(&self) -> bool {
        self.observed_tau > self.configured_tau
    }
}

const IDLE: u64 = u64::MAX;

struct WorkerResult {
    snapshots: Vec<(u64, DenseVector)>,
    observed_tau: u64,
}

pub fn run_parallel(
    obj: &Objective,
    partition: &FilterPartition,
    constants: &ProblemConstants,
    config: &ParallelConfig,
    w0: &DenseVector,
) -> Result<ParallelOutput> {
    let schedule = &config.schedule;
    check_components(obj, partition, schedule, constants, w0)?;
    let p = config.threads;
    if p == 0 {
        return Err(Error::InvalidConfig("threads must be >= 1".into()));
    }
    if config.total_iterations < p as u64 {
        return Err(Error::InvalidConfig(format!(
            "total iterations {} < threads {p}",
            config.total_iterations
        )));
    }
    let factor = t_prime_factor(obj, partition)?;
    let times = config.checkpoints.times(config.total_iterations)?;
    let interior: Vec<u64> = times[..times.len() - 1].to_vec();

    let state = SharedState::new(w0);
    let in_flight: Vec<AtomicU64> = (0..p).map(|_| AtomicU64::new(IDLE)).collect();
    let abort = AtomicBool::new(false);
    let failed_at = AtomicU64::new(IDLE);
    let total = config.total_iterations;
    let n = obj.n();

    let results: Vec<WorkerResult> = thread::scope(|scope| {
        let mut handles = Vec::with_capacity(p);
        for id in 0..p {
            let (state, in_flight, abort, failed_at, interior) =
                (&state, &in_flight, &abort, &failed_at, &interior);
            let spawned = thread::Builder::new()
                .name(format!("hogwild-{id}"))
                .spawn_scoped(scope, move || {
                    let mut rngs = RunRngs::new(config.seed_base + id as u64);
                    let mut buf = vec![0.0; state.len()];
                    let mut snapshots = Vec::new();
                    let mut observed_tau = 0;
                    let mut local = 0u64;
                    while !abort.load(Ordering::Relaxed) {
                        let t = state.counter.fetch_add(1, Ordering::SeqCst);
                        if t >= total {
                            break;
                        }
                        in_flight[id].store(t, Ordering::SeqCst);
                        if interior.binary_search(&t).is_ok() {
                            snapshots.push((t, state.snapshot()));
                        }
                        for (other, slot) in in_flight.iter().enumerate() {
                            let o = slot.load(Ordering::SeqCst);
                            if other != id && o < t {
                                observed_tau = observed_tau.max(t - o);
                            }
                        }
                        let i = rngs.sample.random_range(0..n);
                        let support = obj.support_unchecked(i);
                        for &j in support {
                            buf[j] = state.load(j);
                        }
                        let (block, scale) = partition.sample_filter(i, &mut rngs.filter);
                        let grad = obj.gradient_from_slice(i, &buf);
                        let grad = if scale == 1 { grad } else { grad.restrict_to(block) };
                        let step_t = match config.counter_mode {
                            CounterMode::SharedAtomic => t,
                            CounterMode::LocalEstimate => local * p as u64,
                        };
                        let factor = -schedule.step(step_t) * scale as f64;
                        for (h, g) in grad.iter() {
                            let delta = factor * g;
                            if !delta.is_finite() {
                                failed_at.fetch_min(t, Ordering::SeqCst);
                                abort.store(true, Ordering::SeqCst);
                                break;
                            }
                            atomic_coordinate_add(state, h, delta);
                        }
                        in_flight[id].store(IDLE, Ordering::SeqCst);
                        local += 1;
                    }
                    WorkerResult { snapshots, observed_tau }
                });
            match spawned {
                Ok(h) => handles.push(h),
                Err(e) => {
                    abort.store(true, Ordering::SeqCst);
                    return Err(Error::Thread(format!("failed to spawn worker {id}: {e}")));
                }
            }
        }
        handles
            .into_iter()
            .map(|h| h.join().map_err(|_| Error::Thread("worker panicked".into())))
            .collect::<Result<Vec<_>>>()
    })?;

    let t_fail = failed_at.load(Ordering::SeqCst);
    if t_fail != IDLE {
        return Err(Error::NonFinite { t: t_fail });
    }

    let observed_tau = results.iter().map(|r| r.observed_tau).max().unwrap_or(0);
    let mut snaps: Vec<(u64, DenseVector)> = results.into_iter().flat_map(|r| r.snapshots).collect();
    snaps.sort_by_key(|(t, _)| *t);
    let final_w = state.snapshot();
    let mut checkpoints = Vec::with_capacity(snaps.len() + 1);
    for (t, w) in &snaps {
        checkpoints.push(checkpoint(obj, constants, *t, factor, w)?);
    }
    checkpoints.push(checkpoint(obj, constants, total, factor, &final_w)?);
    Ok(ParallelOutput {
        trace: Trace { seed: TraceSeed::Seed(config.seed_base), checkpoints },
        final_w,
        observed_tau,
        configured_tau: schedule.tau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn two_adds_commute() {
        let s = Arc::new(SharedState::new(&DenseVector::zeros(1)));
        let hs: Vec<_> = [1.0, 2.0]
            .into_iter()
            .map(|v| {
                let s = Arc::clone(&s);
                thread::spawn(move || atomic_coordinate_add(&s, 0, v))
            })
            .collect();
        hs.into_iter().for_each(|h| h.join().unwrap());
        assert_eq!(s.load(0), 3.0);
    }

    #[test]
    fn distinct_coordinates_do_not_interact() {
        let s = SharedState::new(&DenseVector::zeros(4));
        thread::scope(|sc| {
            for j in 0..4 {
                let s = &s;
                sc.spawn(move || {
                    for _ in 0..10_000 {
                        atomic_coordinate_add(s, j, (j + 1) as f64);
                    }
                });
            }
        });
        for j in 0..4 {
            assert_eq!(s.load(j), 10_000.0 * (j + 1) as f64);
        }
    }

    #[test]
    fn fetch_add_returns_previous() {
        let c = AtomicF64::new(1.5);
        assert_eq!(c.fetch_add(2.0), 1.5);
        assert_eq!(c.load(), 3.5);
        c.store(-1.0);
        assert_eq!(c.load(), -1.0);
    }
}
