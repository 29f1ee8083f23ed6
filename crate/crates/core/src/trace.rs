//! Checkpointed time series of a run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub t: u64,
    /// Expected single-coordinate updates so far, t·Δ̄_D/D.
    pub t_prime: f64,
    /// F(w_t) − F*
    pub objective_gap: f64,
    /// ‖w_t − w*‖²
    pub squared_distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceSeed {
    Seed(u64),
    /// Pointwise mean over several seeds.
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub seed: TraceSeed,
    pub checkpoints: Vec<Checkpoint>,
}

impl Trace {
    pub fn last(&self) -> Option<&Checkpoint> {
        self.checkpoints.last()
    }

    pub fn first(&self) -> Option<&Checkpoint> {
        self.checkpoints.first()
    }

    /// Pointwise mean over traces sharing one checkpoint grid.
    pub fn mean(traces: &[Trace]) -> Result<Trace> {
        let first = traces
            .first()
            .ok_or_else(|| Error::InvalidConfig("cannot average zero traces".into()))?;
        check_same_grid(traces)?;
        let k = traces.len() as f64;
        let checkpoints = first
            .checkpoints
            .iter()
            .enumerate()
            .map(|(c, cp)| {
                let (gap, dist) = traces.iter().fold((0.0, 0.0), |(g, d), tr| {
                    (g + tr.checkpoints[c].objective_gap, d + tr.checkpoints[c].squared_distance)
                });
                Checkpoint { t: cp.t, t_prime: cp.t_prime, objective_gap: gap / k, squared_distance: dist / k }
            })
            .collect();
        Ok(Trace { seed: TraceSeed::Mean, checkpoints })
    }
}

pub(crate) fn check_same_grid(traces: &[Trace]) -> Result<()> {
    let Some(first) = traces.first() else { return Ok(()) };
    for tr in &traces[1..] {
        if tr.checkpoints.len() != first.checkpoints.len()
            || tr.checkpoints.iter().zip(&first.checkpoints).any(|(a, b)| a.t != b.t)
        {
            return Err(Error::InvalidConfig("traces do not share a checkpoint grid".into()));
        }
    }
    Ok(())
}

/// When to record checkpoints during a run of `iterations` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointPlan {
    /// t ∈ {0} ∪ {⌈r^k⌉} ∪ {iterations}
    Geometric(f64),
    /// t ∈ {0, k, 2k, …} ∪ {iterations}
    Every(u64),
}

impl Default for CheckpointPlan {
    fn default() -> Self {
        CheckpointPlan::Geometric(1.3)
    }
}

impl CheckpointPlan {
    pub fn times(&self, iterations: u64) -> Result<Vec<u64>> {
        let mut out = vec![0u64];
        match *self {
            CheckpointPlan::Geometric(r) => {
                if !(r > 1.0 && r.is_finite()) {
                    return Err(Error::InvalidConfig(format!("geometric ratio must be > 1, got {r}")));
                }
                let mut x = 1.0f64;
                loop {
                    let t = x.ceil() as u64;
                    if t >= iterations {
                        break;
                    }
                    if t > *out.last().unwrap() {
                        out.push(t);
                    }
                    x *= r;
                }
            }
            CheckpointPlan::Every(k) => {
                if k == 0 {
                    return Err(Error::InvalidConfig("checkpoint cadence must be >= 1".into()));
                }
                out.extend((1..).map(|m| m * k).take_while(|&t| t < iterations));
            }
        }
        if iterations > 0 {
            out.push(iterations);
        }
        Ok(out)
    }
}
