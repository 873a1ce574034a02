use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureVector;

/// Symmetric, zero-diagonal, non-negative `n x n` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(n: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::InvalidParameter(format!(
                "distance matrix of size {n} needs {} entries, got {}",
                n * n,
                entries.len()
            )));
        }
        for i in 0..n {
            if entries[i * n + i] != 0.0 {
                return Err(Error::InvalidParameter(format!("non-zero diagonal at {i}")));
            }
            for j in 0..n {
                let v = entries[i * n + j];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidParameter(format!("invalid entry {v} at ({i}, {j})")));
                }
                if v != entries[j * n + i] {
                    return Err(Error::InvalidParameter(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        Ok(DistanceMatrix { n, entries })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Off-diagonal entries `(i, j)` with `i < j`.
    pub fn upper_triangle(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).flat_map(move |i| (i + 1..self.n).map(move |j| self.get(i, j)))
    }
}

fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Euclidean distance between every pair of vectors.
pub fn pairwise_distances(vectors: &[FeatureVector]) -> Result<DistanceMatrix> {
    let n = vectors.len();
    if n == 0 {
        return Err(Error::InvalidParameter("no vectors".into()));
    }
    let dim = vectors[0].dim();
    if let Some(v) = vectors.iter().find(|v| v.dim() != dim) {
        return Err(Error::VectorDimension(dim, v.dim()));
    }
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = euclidean(vectors[i].as_slice(), vectors[j].as_slice());
            entries[i * n + j] = d;
            entries[j * n + i] = d;
        }
    }
    Ok(DistanceMatrix { n, entries })
}

/// Weight of the local distance matrix in the fused matrix.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct FusionWeight(f64);

impl FusionWeight {
    pub const DEFAULT: FusionWeight = FusionWeight(0.44);

    pub fn new(alpha: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&alpha) {
            Ok(FusionWeight(alpha))
        } else {
            Err(Error::InvalidParameter(format!("alpha must lie in [0, 1], got {alpha}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for FusionWeight {
    fn default() -> Self {
        FusionWeight::DEFAULT
    }
}

impl TryFrom<f64> for FusionWeight {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        FusionWeight::new(v)
    }
}

impl From<FusionWeight> for f64 {
    fn from(w: FusionWeight) -> f64 {
        w.0
    }
}

/// `alpha * local + (1 - alpha) * global`, entrywise.
pub fn fuse(local: &DistanceMatrix, global: &DistanceMatrix, w: FusionWeight) -> Result<DistanceMatrix> {
    if local.n != global.n {
        return Err(Error::InvalidParameter(format!(
            "size mismatch: {} vs {}",
            local.n, global.n
        )));
    }
    let a = w.0;
    let entries = local
        .entries
        .iter()
        .zip(&global.entries)
        .map(|(&l, &g)| a * l + (1.0 - a) * g)
        .collect();
    Ok(DistanceMatrix { n: local.n, entries })
}
