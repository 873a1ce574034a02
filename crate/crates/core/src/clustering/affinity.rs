//! Affinity Propagation over a distance matrix.
//!
//! Similarities are negated distances. Responsibilities and availabilities
//! are exchanged with damping until the exemplar set holds still for a
//! window of iterations.

use serde::{Deserialize, Serialize};

use super::{Clustering, DistanceMatrix};
use crate::error::{Error, Result};

/// Self-similarity assigned to every item.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preference {
    /// Median of the off-diagonal similarities.
    Median,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApConfig {
    pub damping: f64,
    pub max_iterations: usize,
    pub convergence_window: usize,
    pub preference: Preference,
}

impl Default for ApConfig {
    fn default() -> Self {
        ApConfig {
            damping: 0.5,
            max_iterations: 500,
            convergence_window: 50,
            preference: Preference::Median,
        }
    }
}

impl ApConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.5..1.0).contains(&self.damping) {
            return Err(Error::InvalidParameter(format!(
                "damping must lie in [0.5, 1), got {}",
                self.damping
            )));
        }
        if self.convergence_window < 1 || self.max_iterations < self.convergence_window {
            return Err(Error::InvalidParameter(format!(
                "need max_iterations >= convergence_window >= 1, got {} and {}",
                self.max_iterations, self.convergence_window
            )));
        }
        if let Preference::Fixed(p) = self.preference {
            if p.is_nan() {
                return Err(Error::InvalidParameter("preference is NaN".into()));
            }
        }
        Ok(())
    }
}

/// Median as numpy computes it: mean of the two middle values for even counts.
pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Similarity matrix `-D` with preferences on the diagonal.
pub fn similarity_matrix(d: &DistanceMatrix, preference: Preference) -> Vec<f64> {
    let n = d.len();
    let mut s: Vec<f64> = d.entries().iter().map(|&v| -v).collect();
    let pref = match preference {
        Preference::Fixed(p) => p,
        Preference::Median if n > 1 => {
            let mut off: Vec<f64> = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| s[i * n + j])
                .collect();
            median(&mut off)
        }
        Preference::Median => 0.0,
    };
    for i in 0..n {
        s[i * n + i] = pref;
    }
    s
}

pub fn affinity_propagation(d: &DistanceMatrix, cfg: &ApConfig) -> Result<Clustering> {
    cfg.validate()?;
    let s = similarity_matrix(d, cfg.preference);
    Ok(affinity_propagation_similarities(&s, d.len(), cfg))
}

/// Runs the message passing on an explicit `n x n` similarity matrix whose
/// diagonal holds the preferences.
pub fn affinity_propagation_similarities(s: &[f64], n: usize, cfg: &ApConfig) -> Clustering {
    if n == 0 {
        return Clustering::new(vec![], Some(vec![]), true);
    }
    if n == 1 {
        return Clustering::new(vec![0], Some(vec![0]), true);
    }
    if let Some(c) = degenerate(s, n) {
        return c;
    }

    let lambda = cfg.damping;
    let mut r = vec![0.0f64; n * n];
    let mut a = vec![0.0f64; n * n];
    let mut tmp = vec![0.0f64; n * n];
    let mut colsum = vec![0.0f64; n];
    let mut exemplars = vec![false; n];
    let mut stable = 0usize;
    let mut converged = false;

    for _ in 0..cfg.max_iterations {
        for i in 0..n {
            let row = i * n;
            let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            let mut arg = 0;
            for k in 0..n {
                let v = a[row + k] + s[row + k];
                if v > first {
                    second = first;
                    first = v;
                    arg = k;
                } else if v > second {
                    second = v;
                }
            }
            for k in 0..n {
                let competitor = if k == arg { second } else { first };
                let fresh = s[row + k] - competitor;
                r[row + k] = lambda * r[row + k] + (1.0 - lambda) * fresh;
            }
        }

        colsum.iter_mut().for_each(|c| *c = 0.0);
        for i in 0..n {
            for k in 0..n {
                let v = r[i * n + k];
                let kept = if i == k { v } else { v.max(0.0) };
                tmp[i * n + k] = kept;
                colsum[k] += kept;
            }
        }
        for i in 0..n {
            for k in 0..n {
                let mut fresh = colsum[k] - tmp[i * n + k];
                if i != k {
                    fresh = fresh.min(0.0);
                }
                a[i * n + k] = lambda * a[i * n + k] + (1.0 - lambda) * fresh;
            }
        }

        let current: Vec<bool> = (0..n).map(|k| a[k * n + k] + r[k * n + k] > 0.0).collect();
        if current == exemplars {
            stable += 1;
        } else {
            exemplars = current;
            stable = 1;
        }
        if stable >= cfg.convergence_window && exemplars.iter().any(|&e| e) {
            converged = true;
            break;
        }
    }

    let mut chosen: Vec<usize> = (0..n).filter(|&k| exemplars[k]).collect();
    if chosen.is_empty() {
        let best = (0..n)
            .max_by(|&x, &y| {
                let vx = a[x * n + x] + r[x * n + x];
                let vy = a[y * n + y] + r[y * n + y];
                vx.total_cmp(&vy).then(y.cmp(&x))
            })
            .expect("n > 1");
        chosen.push(best);
    }
    assign(s, n, chosen, converged)
}

/// Labels every item with its most similar exemplar.
fn assign(s: &[f64], n: usize, exemplars: Vec<usize>, converged: bool) -> Clustering {
    let labels = (0..n)
        .map(|i| {
            if let Some(pos) = exemplars.iter().position(|&k| k == i) {
                return pos as i64;
            }
            let mut best = 0;
            for (pos, &k) in exemplars.iter().enumerate() {
                if s[i * n + k] > s[i * n + exemplars[best]] {
                    best = pos;
                }
            }
            best as i64
        })
        .collect();
    Clustering::new(labels, Some(exemplars), converged)
}

/// When every off-diagonal similarity is equal and every preference is
/// equal, message passing cannot break the symmetry: the answer is all
/// singletons if the preference exceeds the similarity, one cluster
/// otherwise.
fn degenerate(s: &[f64], n: usize) -> Option<Clustering> {
    let off = s[1];
    let pref = s[0];
    let same = (0..n).all(|i| {
        (0..n).all(|j| {
            let v = s[i * n + j];
            if i == j {
                v == pref
            } else {
                v == off
            }
        })
    });
    if !same {
        return None;
    }
    if pref > off {
        Some(Clustering::new(
            (0..n as i64).collect(),
            Some((0..n).collect()),
            true,
        ))
    } else {
        Some(Clustering::new(vec![0; n], Some(vec![0]), true))
    }
}
