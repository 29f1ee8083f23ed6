//! Seeded sparse binary-classification problems.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::vector::SparseVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    /// Nonzeros per sample.
    pub s: usize,
    /// Label flip probability.
    pub p: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec { n: 1000, d: 50, s: 5, p: 0.05, seed: 7 }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidConfig("synthetic n must be >= 1".into()));
        }
        if !(1 <= self.s && self.s <= self.d) {
            return Err(Error::InvalidConfig(format!(
                "synthetic support size must satisfy 1 <= s <= d (s = {}, d = {})",
                self.s, self.d
            )));
        }
        if !(0.0..0.5).contains(&self.p) {
            return Err(Error::InvalidConfig(format!("label noise must lie in [0, 0.5), got {}", self.p)));
        }
        Ok(())
    }
}

/// Samples with `s` uniformly placed standard-normal entries, labelled by a
/// hidden unit-norm hyperplane and flipped with probability `p`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let hidden = draw_hyperplane(&mut rng, spec.d);
    let samples = (0..spec.n)
        .map(|_| {
            let mut idx = index::sample(&mut rng, spec.d, spec.s).into_vec();
            idx.sort_unstable();
            let values: Vec<f64> = idx.iter().map(|_| rng.sample(StandardNormal)).collect();
            let margin: f64 = idx.iter().zip(&values).map(|(&j, v)| hidden[j] * v).sum();
            let clean = if margin >= 0.0 { 1.0 } else { -1.0 };
            let label = if rng.random_bool(spec.p) { -clean } else { clean };
            Sample { features: SparseVector::from_parts_unchecked(idx, values), label }
        })
        .collect();
    Dataset::new(samples, spec.d)
}

/// The hyperplane labels were drawn from (before noise).
pub fn hidden_hyperplane(spec: &SyntheticSpec) -> Vec<f64> {
    draw_hyperplane(&mut ChaCha8Rng::seed_from_u64(spec.seed), spec.d)
}

fn draw_hyperplane<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    let mut hidden: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let norm = hidden.iter().map(|v| v * v).sum::<f64>().sqrt();
    hidden.iter_mut().for_each(|v| *v /= norm);
    hidden
}

/// `m` distinct rows chosen uniformly, kept in their original order.
pub fn subsample(dataset: &Dataset, m: usize, seed: u64) -> Result<Dataset> {
    if m == 0 || m > dataset.len() {
        return Err(Error::InvalidConfig(format!(
            "subsample size {m} must lie in [1, {}]",
            dataset.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = index::sample(&mut rng, dataset.len(), m).into_vec();
    rows.sort_unstable();
    dataset.subset(&rows)
}
