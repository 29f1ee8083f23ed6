//! Finite training sets of sparse feature vectors with real labels.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::vector::SparseVector;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: SparseVector,
    pub label: f64,
}

/// Immutable set of samples over `dimension` coordinates.
///
/// `coordinate_counts[j]` is the number of samples whose stored feature
/// indices contain `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    dimension: usize,
    coordinate_counts: Vec<usize>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, dimension: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidDataset("no samples".into()));
        }
        if dimension == 0 {
            return Err(Error::InvalidDataset("dimension must be at least 1".into()));
        }
        let mut coordinate_counts = vec![0usize; dimension];
        for (i, s) in samples.iter().enumerate() {
            if !s.label.is_finite() {
                return Err(Error::InvalidDataset(format!("sample {i} has a non-finite label")));
            }
            if let Some(max) = s.features.max_index() {
                if max >= dimension {
                    return Err(Error::InvalidDataset(format!(
                        "sample {i} has feature index {max} >= dimension {dimension}"
                    )));
                }
            }
            for &j in s.features.indices() {
                coordinate_counts[j] += 1;
            }
        }
        Ok(Dataset { samples, dimension, coordinate_counts })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> Result<&Sample> {
        self.samples
            .get(i)
            .ok_or(Error::SampleOutOfRange { index: i, n: self.samples.len() })
    }

    pub fn coordinate_counts(&self) -> &[usize] {
        &self.coordinate_counts
    }

    /// Same samples over a larger coordinate space.
    pub fn with_dimension(self, dimension: usize) -> Result<Self> {
        if dimension < self.dimension {
            return Err(Error::InvalidDataset(format!(
                "dimension override {dimension} is smaller than {}",
                self.dimension
            )));
        }
        Dataset::new(self.samples, dimension)
    }

    /// Rows `indices` (in the given order) as a new dataset of the same dimension.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let samples = indices
            .iter()
            .map(|&i| self.sample(i).cloned())
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(samples, self.dimension)
    }

    /// Scales every sample to unit Euclidean norm (zero rows are left alone).
    pub fn normalized_l2(&self) -> Self {
        let samples = self
            .samples
            .iter()
            .map(|s| {
                let norm = s.features.norm_sq().sqrt();
                let features = if norm > 0.0 { s.features.scaled(1.0 / norm) } else { s.features.clone() };
                Sample { features, label: s.label }
            })
            .collect();
        Dataset {
            samples,
            dimension: self.dimension,
            coordinate_counts: self.coordinate_counts.clone(),
        }
    }

    /// Hex SHA-256 over dimension, labels and feature entries (bit patterns).
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dimension as u64).to_le_bytes());
        h.update((self.samples.len() as u64).to_le_bytes());
        for s in &self.samples {
            h.update(s.label.to_bits().to_le_bytes());
            h.update((s.features.nnz() as u64).to_le_bytes());
            for (j, v) in s.features.iter() {
                h.update((j as u64).to_le_bytes());
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(idx: &[usize], vals: &[f64], y: f64) -> Sample {
        Sample { features: SparseVector::new(idx.to_vec(), vals.to_vec()).unwrap(), label: y }
    }

    #[test]
    fn counts_are_exact() {
        let ds = Dataset::new(
            vec![sample(&[0, 2], &[1.0, 1.0], 1.0), sample(&[2, 3], &[1.0, 1.0], -1.0)],
            5,
        )
        .unwrap();
        assert_eq!(ds.coordinate_counts(), &[1, 0, 2, 1, 0]);
    }

    #[test]
    fn rejects_out_of_range_index() {
        let err = Dataset::new(vec![sample(&[4], &[1.0], 1.0)], 4).unwrap_err();
        assert!(matches!(err, Error::InvalidDataset(_)));
    }

    #[test]
    fn hash_tracks_content() {
        let a = Dataset::new(vec![sample(&[0], &[1.0], 1.0)], 2).unwrap();
        let b = Dataset::new(vec![sample(&[0], &[1.0], -1.0)], 2).unwrap();
        assert_ne!(a.content_hash(), b.content_hash());
        assert_eq!(a.content_hash(), a.clone().content_hash());
    }
}
