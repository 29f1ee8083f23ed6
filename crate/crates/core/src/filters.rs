//! A-priori partitions of each sample's support into near-equal filter
//! blocks, uniform block sampling, and the sparsity statistics Δ̄, Δ̄_D, Δ.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::Objective;

/// Per-sample partition of D_ξ into `min(D, |D_ξ|)` disjoint blocks whose
/// sizes are ⌊|D_ξ|/D⌋ or ⌈|D_ξ|/D⌉; the scale d_ξ is the block count.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterPartition {
    blocks: Vec<Vec<Vec<usize>>>,
    d: usize,
}

impl FilterPartition {
    /// Shuffles every sample's support once with a seeded generator, then
    /// cuts it into contiguous blocks (larger blocks first).
    pub fn build(obj: &Objective, d: usize, seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidConfig("partition parameter D must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = (0..obj.n())
            .map(|i| {
                let support = obj.support_unchecked(i);
                if support.is_empty() {
                    return Err(Error::EmptySupport(i));
                }
                let mut coords = support.to_vec();
                coords.shuffle(&mut rng);
                Ok(split_even(&coords, d))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FilterPartition { blocks, d })
    }

    /// The partition parameter D.
    pub fn parameter(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.blocks.len()
    }

    /// Blocks of sample `i`, each sorted ascending.
    pub fn blocks(&self, i: usize) -> &[Vec<usize>] {
        &self.blocks[i]
    }

    /// d_ξ for sample `i`.
    pub fn scale(&self, i: usize) -> usize {
        self.blocks[i].len()
    }

    /// Uniformly chosen block of sample `i` together with d_ξ.
    pub fn sample_filter<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> (&[usize], usize) {
        let blocks = &self.blocks[i];
        let k = blocks.len();
        let u = if k == 1 { 0 } else { rng.random_range(0..k) };
        (&blocks[u], k)
    }
}

fn split_even(coords: &[usize], d: usize) -> Vec<Vec<usize>> {
    let k = d.min(coords.len());
    let base = coords.len() / k;
    let extra = coords.len() % k;
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for b in 0..k {
        let len = base + usize::from(b < extra);
        let mut block = coords[start..start + len].to_vec();
        block.sort_unstable();
        out.push(block);
        start += len;
    }
    out
}

/// D = round(1/v): filter blocks cover about a fraction v of each support.
pub fn blocks_for_fraction(v: f64) -> Result<usize> {
    if !(v > 0.0 && v <= 1.0) {
        return Err(Error::InvalidConfig(format!("fraction v must lie in (0, 1], got {v}")));
    }
    Ok(((1.0 / v).round() as usize).max(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityStats {
    /// Δ̄ = max_ξ |D_ξ|
    pub delta_bar: usize,
    /// Δ̄_D = D · E⌈|D_ξ|/D⌉
    pub delta_bar_d: f64,
    /// E|D_ξ|
    pub mean_support: f64,
    /// Δ = max_j P(j ∈ D_ξ)
    pub delta: f64,
}

impl SparsityStats {
    pub fn compute(obj: &Objective, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidConfig("partition parameter D must be >= 1".into()));
        }
        let n = obj.n();
        let mut counts = vec![0usize; obj.dimension()];
        let mut delta_bar = 0;
        let mut ceil_sum = 0usize;
        let mut size_sum = 0usize;
        for i in 0..n {
            let s = obj.support_unchecked(i);
            delta_bar = delta_bar.max(s.len());
            ceil_sum += s.len().div_ceil(d);
            size_sum += s.len();
            for &j in s {
                counts[j] += 1;
            }
        }
        let max_count = counts.iter().copied().max().unwrap_or(0);
        Ok(SparsityStats {
            delta_bar,
            delta_bar_d: d as f64 * ceil_sum as f64 / n as f64,
            mean_support: size_sum as f64 / n as f64,
            delta: max_count as f64 / n as f64,
        })
    }
}
