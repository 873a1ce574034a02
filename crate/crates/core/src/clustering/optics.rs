//! OPTICS ordering with ξ-steep cluster extraction.
//!
//! The extraction follows the widely used formulation with the two known
//! corrections to the original definitions (steep-down comparison direction
//! and the end-of-cluster search in criterion 4c), an infinite sentinel
//! appended to the reachability plot, and predecessor correction.

use super::{Clustering, DistanceMatrix, NOISE};
use crate::error::{Error, Result};

/// Reachability ordering of a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct OpticsOrdering {
    /// Item indices in processing order.
    pub ordering: Vec<usize>,
    /// Reachability distance per item (not per position); infinite when the
    /// item was never reached.
    pub reachability: Vec<f64>,
    /// Distance to the `min_samples`-th nearest item, counting the item itself.
    pub core_distances: Vec<f64>,
    pub predecessor: Vec<Option<usize>>,
}

pub fn core_distances(d: &DistanceMatrix, min_samples: usize) -> Vec<f64> {
    (0..d.len())
        .map(|i| {
            let mut row = d.row(i).to_vec();
            row.sort_by(|a, b| a.total_cmp(b));
            row.get(min_samples - 1).copied().unwrap_or(f64::INFINITY)
        })
        .collect()
}

/// Processes items by smallest current reachability, lowest index first
/// among ties.
pub fn optics_ordering(d: &DistanceMatrix, min_samples: usize) -> OpticsOrdering {
    let n = d.len();
    let core = core_distances(d, min_samples);
    let mut reach = vec![f64::INFINITY; n];
    let mut pred = vec![None; n];
    let mut processed = vec![false; n];
    let mut ordering = Vec::with_capacity(n);
    for _ in 0..n {
        let point = (0..n)
            .filter(|&i| !processed[i])
            .min_by(|&a, &b| reach[a].total_cmp(&reach[b]).then(a.cmp(&b)))
            .expect("unprocessed item remains");
        processed[point] = true;
        ordering.push(point);
        if core[point].is_finite() {
            for j in 0..n {
                if processed[j] {
                    continue;
                }
                let r = d.get(point, j).max(core[point]);
                if r < reach[j] {
                    reach[j] = r;
                    pred[j] = Some(point);
                }
            }
        }
    }
    OpticsOrdering {
        ordering,
        reachability: reach,
        core_distances: core,
        predecessor: pred,
    }
}

fn extend_region(steep: &[bool], xward: &[bool], start: usize, min_samples: usize) -> usize {
    let n = steep.len();
    let mut non_xward = 0;
    let mut end = start;
    let mut index = start;
    while index < n {
        if steep[index] {
            non_xward = 0;
            end = index;
        } else if !xward[index] {
            // neither steep nor moving the other way
            non_xward += 1;
            if non_xward > min_samples {
                break;
            }
        } else {
            return end;
        }
        index += 1;
    }
    end
}

struct SteepDown {
    start: usize,
    end: usize,
    mib: f64,
}

fn update_filter_sdas(sdas: Vec<SteepDown>, mib: f64, xi_complement: f64, plot: &[f64]) -> Vec<SteepDown> {
    if mib.is_infinite() {
        return Vec::new();
    }
    sdas.into_iter()
        .filter(|sda| mib <= plot[sda.start] * xi_complement)
        .map(|mut sda| {
            sda.mib = sda.mib.max(mib);
            sda
        })
        .collect()
}

fn correct_predecessor(
    plot: &[f64],
    pred_plot: &[Option<usize>],
    ordering: &[usize],
    s: usize,
    mut e: usize,
) -> Option<(usize, usize)> {
    while s < e {
        if plot[s] > plot[e] {
            return Some((s, e));
        }
        let p_e = pred_plot[e];
        if (s..e).any(|i| p_e == Some(ordering[i])) {
            return Some((s, e));
        }
        e -= 1;
    }
    None
}

/// Candidate clusters as inclusive ranges of ordering positions, smaller
/// (nested) clusters before the ones containing them.
pub fn xi_clusters(ord: &OpticsOrdering, xi: f64, min_samples: usize, min_cluster_size: usize) -> Vec<(usize, usize)> {
    let n = ord.ordering.len();
    let mut plot: Vec<f64> = ord.ordering.iter().map(|&i| ord.reachability[i]).collect();
    plot.push(f64::INFINITY);
    let pred_plot: Vec<Option<usize>> = ord.ordering.iter().map(|&i| ord.predecessor[i]).collect();

    let xi_complement = 1.0 - xi;
    let ratio: Vec<f64> = (0..n).map(|i| plot[i] / plot[i + 1]).collect();
    let steep_up: Vec<bool> = ratio.iter().map(|&r| r <= xi_complement).collect();
    let steep_down: Vec<bool> = ratio.iter().map(|&r| r >= 1.0 / xi_complement).collect();
    let down: Vec<bool> = ratio.iter().map(|&r| r > 1.0).collect();
    let up: Vec<bool> = ratio.iter().map(|&r| r < 1.0).collect();

    let mut sdas: Vec<SteepDown> = Vec::new();
    let mut clusters = Vec::new();
    let mut index = 0usize;
    let mut mib = 0.0f64;

    for steep_index in (0..n).filter(|&i| steep_up[i] || steep_down[i]) {
        if steep_index < index {
            continue;
        }
        mib = plot[index..=steep_index].iter().cloned().fold(mib, f64::max);

        if steep_down[steep_index] {
            sdas = update_filter_sdas(sdas, mib, xi_complement, &plot);
            let d_end = extend_region(&steep_down, &up, steep_index, min_samples);
            sdas.push(SteepDown {
                start: steep_index,
                end: d_end,
                mib: 0.0,
            });
            index = d_end + 1;
            mib = plot[index];
        } else {
            sdas = update_filter_sdas(sdas, mib, xi_complement, &plot);
            let u_start = steep_index;
            let u_end = extend_region(&steep_up, &down, u_start, min_samples);
            index = u_end + 1;
            mib = plot[index];

            let mut found = Vec::new();
            for sda in &sdas {
                let mut c_start = sda.start;
                let mut c_end = u_end;

                if plot[c_end + 1] * xi_complement < sda.mib {
                    continue;
                }
                let d_max = plot[sda.start];
                if d_max * xi_complement >= plot[c_end + 1] {
                    while plot[c_start + 1] > plot[c_end + 1] && c_start < sda.end {
                        c_start += 1;
                    }
                } else if plot[c_end + 1] * xi_complement >= d_max {
                    while plot[c_end - 1] > d_max && c_end > u_start {
                        c_end -= 1;
                    }
                }

                match correct_predecessor(&plot, &pred_plot, &ord.ordering, c_start, c_end) {
                    Some((s, e)) => {
                        c_start = s;
                        c_end = e;
                    }
                    None => continue,
                }
                if c_end + 1 - c_start < min_cluster_size {
                    continue;
                }
                if c_start > sda.end {
                    continue;
                }
                if c_end < u_start {
                    continue;
                }
                found.push((c_start, c_end));
            }
            found.reverse();
            clusters.extend(found);
        }
    }
    clusters
}

/// Assigns labels from xi clusters: a cluster is taken only if none of its
/// positions is already labelled, so the innermost clusters win.
pub fn labels_from_clusters(ordering: &[usize], clusters: &[(usize, usize)]) -> Vec<i64> {
    let mut by_position = vec![NOISE; ordering.len()];
    let mut label = 0;
    for &(s, e) in clusters {
        if by_position[s..=e].iter().all(|&l| l == NOISE) {
            by_position[s..=e].iter_mut().for_each(|l| *l = label);
            label += 1;
        }
    }
    let mut labels = vec![NOISE; ordering.len()];
    for (pos, &item) in ordering.iter().enumerate() {
        labels[item] = by_position[pos];
    }
    labels
}

/// OPTICS with ξ extraction; the minimum cluster size equals `min_samples`.
pub fn optics(d: &DistanceMatrix, min_samples: usize, xi: f64) -> Result<Clustering> {
    if min_samples < 2 {
        return Err(Error::InvalidParameter(format!(
            "min_samples must be >= 2, got {min_samples}"
        )));
    }
    if !(xi > 0.0 && xi < 1.0) {
        return Err(Error::InvalidParameter(format!("xi must lie in (0, 1), got {xi}")));
    }
    let n = d.len();
    if n < min_samples {
        return Ok(Clustering::new(vec![NOISE; n], None, true));
    }
    let ord = optics_ordering(d, min_samples);
    let clusters = xi_clusters(&ord, xi, min_samples, min_samples);
    Ok(Clustering::new(
        labels_from_clusters(&ord.ordering, &clusters),
        None,
        true,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::pairwise_distances;
    use crate::features::FeatureVector;

    fn pts(p: &[[f32; 2]]) -> DistanceMatrix {
        pairwise_distances(&p.iter().map(|x| FeatureVector(x.to_vec())).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn too_few_points_all_noise() {
        let c = optics(&pts(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]), 4, 0.05).unwrap();
        assert_eq!(c.labels, vec![NOISE; 3]);
    }

    #[test]
    fn parameter_checks() {
        let d = pts(&[[0.0, 0.0]; 3]);
        assert!(optics(&d, 1, 0.05).is_err());
        assert!(optics(&d, 2, 0.0).is_err());
        assert!(optics(&d, 2, 1.0).is_err());
    }

    #[test]
    fn ordering_visits_every_item_once() {
        let d = pts(&[[0.0, 0.0], [0.5, 0.0], [3.0, 0.0], [3.2, 0.1], [9.0, 9.0]]);
        let ord = optics_ordering(&d, 2);
        let mut seen = ord.ordering.clone();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
        assert_eq!(ord.ordering[0], 0);
        assert!(ord.reachability[0].is_infinite());
    }

    #[test]
    fn nested_clusters_prefer_inner() {
        let labels = labels_from_clusters(&[2, 0, 1, 3], &[(0, 1), (0, 3)]);
        assert_eq!(labels, vec![0, NOISE, 0, NOISE]);
    }
}
