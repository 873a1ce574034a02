use std::collections::HashMap;

use crate::error::{Error, Result};

/// Predicted and ground-truth labels of the same items.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionPair {
    predicted: Vec<i64>,
    truth: Vec<i64>,
}

impl PartitionPair {
    pub fn new(predicted: Vec<i64>, truth: Vec<i64>) -> Result<Self> {
        if predicted.len() != truth.len() || predicted.is_empty() {
            return Err(Error::LabelLength {
                predicted: predicted.len(),
                truth: truth.len(),
            });
        }
        if truth.iter().any(|&t| t < 0) {
            return Err(Error::InvalidParameter("ground truth contains noise labels".into()));
        }
        Ok(PartitionPair { predicted, truth })
    }

    pub fn predicted(&self) -> &[i64] {
        &self.predicted
    }

    pub fn truth(&self) -> &[i64] {
        &self.truth
    }

    pub fn ari(&self) -> f64 {
        ari_unchecked(&self.predicted, &self.truth)
    }

    pub fn nmi(&self) -> f64 {
        nmi_unchecked(&self.predicted, &self.truth)
    }
}

/// Replaces every negative (noise) label with a fresh singleton label.
pub fn noise_to_singletons(labels: &[i64]) -> Vec<i64> {
    let mut next = labels.iter().copied().max().unwrap_or(0).max(0) + 1;
    labels
        .iter()
        .map(|&l| {
            if l >= 0 {
                l
            } else {
                next += 1;
                next - 1
            }
        })
        .collect()
}

fn sorted_counts<K>(m: HashMap<K, usize>) -> Vec<f64> {
    let mut v: Vec<f64> = m.into_values().map(|c| c as f64).collect();
    v.sort_by(|x, y| x.total_cmp(y));
    v
}

struct Contingency {
    n: f64,
    cells: Vec<f64>,
    rows: Vec<f64>,
    cols: Vec<f64>,
}

fn contingency(a: &[i64], b: &[i64]) -> Contingency {
    let a = noise_to_singletons(a);
    let b = noise_to_singletons(b);
    let mut cells: HashMap<(i64, i64), usize> = HashMap::new();
    let mut rows: HashMap<i64, usize> = HashMap::new();
    let mut cols: HashMap<i64, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(&b) {
        *cells.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    Contingency {
        n: a.len() as f64,
        cells: sorted_counts(cells),
        rows: sorted_counts(rows),
        cols: sorted_counts(cols),
    }
}

fn comb2(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

fn ari_unchecked(a: &[i64], b: &[i64]) -> f64 {
    if a.len() <= 1 {
        return 1.0;
    }
    let c = contingency(a, b);
    let index: f64 = c.cells.iter().map(|&v| comb2(v)).sum();
    let sum_a: f64 = c.rows.iter().map(|&v| comb2(v)).sum();
    let sum_b: f64 = c.cols.iter().map(|&v| comb2(v)).sum();
    let expected = sum_a * sum_b / comb2(c.n);
    let max = (sum_a + sum_b) / 2.0;
    if max == expected {
        // both partitions are a single cluster, or both are all singletons
        return 1.0;
    }
    (index - expected) / (max - expected)
}

fn entropy(counts: &[f64], n: f64) -> f64 {
    -counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| (c / n) * (c / n).ln())
        .sum::<f64>()
}

fn nmi_unchecked(a: &[i64], b: &[i64]) -> f64 {
    let a = noise_to_singletons(a);
    let b = noise_to_singletons(b);
    let n = a.len() as f64;
    let mut cells: HashMap<(i64, i64), f64> = HashMap::new();
    let mut rows: HashMap<i64, f64> = HashMap::new();
    let mut cols: HashMap<i64, f64> = HashMap::new();
    for (&x, &y) in a.iter().zip(&b) {
        *cells.entry((x, y)).or_default() += 1.0;
        *rows.entry(x).or_default() += 1.0;
        *cols.entry(y).or_default() += 1.0;
    }
    let mut row_counts: Vec<f64> = rows.values().copied().collect();
    let mut col_counts: Vec<f64> = cols.values().copied().collect();
    row_counts.sort_by(|x, y| x.total_cmp(y));
    col_counts.sort_by(|x, y| x.total_cmp(y));
    let h_a = entropy(&row_counts, n);
    let h_b = entropy(&col_counts, n);
    if h_a == 0.0 && h_b == 0.0 {
        return 1.0;
    }
    let mut terms: Vec<f64> = cells
        .iter()
        .map(|(&(x, y), &nij)| (nij / n) * ((n * nij) / (rows[&x] * cols[&y])).ln())
        .collect();
    terms.sort_by(|x, y| x.total_cmp(y));
    let mi: f64 = terms.iter().sum::<f64>().max(0.0);
    (mi / ((h_a + h_b) / 2.0)).clamp(0.0, 1.0)
}

/// Adjusted Rand index from the contingency table. Noise labels count as
/// singleton clusters.
pub fn adjusted_rand_index(predicted: &[i64], truth: &[i64]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::LabelLength {
            predicted: predicted.len(),
            truth: truth.len(),
        });
    }
    Ok(ari_unchecked(predicted, truth))
}

/// Mutual information normalized by the arithmetic mean of the two entropies
/// (natural log). Noise labels count as singleton clusters.
pub fn normalized_mutual_info(predicted: &[i64], truth: &[i64]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::LabelLength {
            predicted: predicted.len(),
            truth: truth.len(),
        });
    }
    if predicted.is_empty() {
        return Ok(1.0);
    }
    Ok(nmi_unchecked(predicted, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_partitions() {
        let p = [0, 0, 1, 1, 2];
        assert_eq!(adjusted_rand_index(&p, &p).unwrap(), 1.0);
        assert!((normalized_mutual_info(&p, &p).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_cluster_vs_singletons() {
        let pred = [0; 5];
        let truth = [0, 1, 2, 3, 4];
        assert_eq!(adjusted_rand_index(&pred, &truth).unwrap(), 0.0);
        assert_eq!(normalized_mutual_info(&pred, &truth).unwrap(), 0.0);
    }

    #[test]
    fn small_fixture_matches_pair_count() {
        // pairs: 6; same-in-pred {01, 23}; same-in-truth {01, 02, 12};
        // same-in-both {01}. E = 2*3/6 = 1, max = 2.5 -> (1-1)/(2.5-1) = 0
        let ari = adjusted_rand_index(&[0, 0, 1, 1], &[0, 0, 0, 1]).unwrap();
        assert!(ari.abs() < 1e-15);
    }

    #[test]
    fn independent_partitions_have_zero_nmi() {
        let nmi = normalized_mutual_info(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
        assert!(nmi.abs() < 1e-12);
    }

    #[test]
    fn both_single_cluster() {
        assert_eq!(adjusted_rand_index(&[3, 3, 3], &[0, 0, 0]).unwrap(), 1.0);
        assert_eq!(normalized_mutual_info(&[3, 3, 3], &[0, 0, 0]).unwrap(), 1.0);
    }

    #[test]
    fn noise_becomes_singletons() {
        assert_eq!(noise_to_singletons(&[-1, 0, -1, 2]), vec![3, 0, 4, 2]);
        let a = adjusted_rand_index(&[-1, -1, 0, 0], &[0, 1, 2, 2]).unwrap();
        assert_eq!(a, 1.0);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            adjusted_rand_index(&[0], &[0, 1]),
            Err(Error::LabelLength { predicted: 1, truth: 2 })
        ));
        assert!(normalized_mutual_info(&[0, 1], &[0]).is_err());
        assert!(PartitionPair::new(vec![0], vec![-1]).is_err());
    }
}
