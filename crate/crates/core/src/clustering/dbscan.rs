use std::collections::VecDeque;

use super::{Clustering, DistanceMatrix, NOISE};
use crate::error::{Error, Result};

const UNSEEN: i64 = -2;

/// Density-based clustering. A point is core when at least `min_pts` points
/// (itself included) lie within `eps`. Clusters grow from cores in index
/// order; unreachable points are noise.
pub fn dbscan(d: &DistanceMatrix, eps: f64, min_pts: usize) -> Result<Clustering> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be > 0, got {eps}")));
    }
    if min_pts < 1 {
        return Err(Error::InvalidParameter("min_pts must be >= 1".into()));
    }
    let n = d.len();
    let neighbors = |i: usize| -> Vec<usize> { (0..n).filter(|&j| d.get(i, j) <= eps).collect() };
    let mut labels = vec![UNSEEN; n];
    let mut cluster = 0i64;
    let mut queue = VecDeque::new();

    for i in 0..n {
        if labels[i] != UNSEEN {
            continue;
        }
        let nb = neighbors(i);
        if nb.len() < min_pts {
            labels[i] = NOISE;
            continue;
        }
        labels[i] = cluster;
        queue.extend(nb.into_iter().filter(|&j| j != i));
        while let Some(j) = queue.pop_front() {
            if labels[j] == NOISE {
                labels[j] = cluster;
            }
            if labels[j] != UNSEEN {
                continue;
            }
            labels[j] = cluster;
            let nb = neighbors(j);
            if nb.len() >= min_pts {
                queue.extend(nb);
            }
        }
        cluster += 1;
    }
    Ok(Clustering::new(labels, None, true))
}

/// Median over points of the distance to their `k`-th nearest other point.
/// Participants with `k` or fewer items use their farthest neighbour.
pub fn median_knn_distance(d: &DistanceMatrix, k: usize) -> f64 {
    let n = d.len();
    if n < 2 {
        return 0.0;
    }
    let mut per_point: Vec<f64> = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| d.get(i, j)).collect();
            row.sort_by(|a, b| a.total_cmp(b));
            row[k.clamp(1, row.len()) - 1]
        })
        .collect();
    super::affinity::median(&mut per_point)
}
