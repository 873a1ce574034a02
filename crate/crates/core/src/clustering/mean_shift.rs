use super::Clustering;
use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 300;
const TOLERANCE: f64 = 1e-4;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Shifts `start` to the mean of the points inside the flat kernel until the
/// step falls below `1e-4 * bandwidth` or the iteration cap is hit.
pub fn find_mode(points: &[Vec<f64>], start: &[f64], bandwidth: f64) -> Vec<f64> {
    let mut x = start.to_vec();
    for _ in 0..MAX_ITERATIONS {
        let mut sum = vec![0.0; x.len()];
        let mut count = 0usize;
        for p in points {
            if dist(p, &x) <= bandwidth {
                count += 1;
                sum.iter_mut().zip(p).for_each(|(s, v)| *s += v);
            }
        }
        if count == 0 {
            break;
        }
        let next: Vec<f64> = sum.into_iter().map(|s| s / count as f64).collect();
        let shift = dist(&next, &x);
        x = next;
        if shift < TOLERANCE * bandwidth {
            break;
        }
    }
    x
}

/// Flat-kernel mean shift. Modes are visited by descending support (points
/// within `bandwidth`), a mode closer than `bandwidth / 2` to an already kept
/// one is merged into it, and every point takes the label of its nearest
/// kept mode.
pub fn mean_shift(points: &[Vec<f64>], bandwidth: f64) -> Result<Clustering> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "bandwidth must be > 0, got {bandwidth}"
        )));
    }
    if let Some(first) = points.first() {
        if let Some(p) = points.iter().find(|p| p.len() != first.len()) {
            return Err(Error::VectorDimension(first.len(), p.len()));
        }
    }
    let modes: Vec<Vec<f64>> = points.iter().map(|p| find_mode(points, p, bandwidth)).collect();
    let support: Vec<usize> = modes
        .iter()
        .map(|m| points.iter().filter(|p| dist(p, m) <= bandwidth).count())
        .collect();
    let mut order: Vec<usize> = (0..modes.len()).collect();
    order.sort_by(|&a, &b| support[b].cmp(&support[a]).then(a.cmp(&b)));

    let mut kept: Vec<&Vec<f64>> = Vec::new();
    for i in order {
        if kept.iter().all(|k| dist(k, &modes[i]) >= bandwidth / 2.0) {
            kept.push(&modes[i]);
        }
    }
    let labels = points
        .iter()
        .map(|p| {
            let mut best = 0;
            for (j, k) in kept.iter().enumerate() {
                if dist(p, k) < dist(p, kept[best]) {
                    best = j;
                }
            }
            best as i64
        })
        .collect();
    Ok(Clustering::new(labels, None, true))
}
