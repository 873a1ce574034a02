//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use scene_cluster::model::{BinarySaliencyMask, Image};

/// ARI by counting agreements over every unordered pair of items.
pub fn ari_pairs(a: &[i64], b: &[i64]) -> f64 {
    let a = singletons(a);
    let b = singletons(b);
    let n = a.len();
    let (mut ss, mut sd, mut ds, mut dd) = (0f64, 0f64, 0f64, 0f64);
    for i in 0..n {
        for j in i + 1..n {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => ss += 1.0,
                (true, false) => sd += 1.0,
                (false, true) => ds += 1.0,
                (false, false) => dd += 1.0,
            }
        }
    }
    let den = (ss + sd) * (sd + dd) + (ss + ds) * (ds + dd);
    if den == 0.0 {
        return 1.0;
    }
    2.0 * (ss * dd - sd * ds) / den
}

/// NMI (arithmetic-mean normalization) from the joint label distribution.
pub fn nmi_entropy(a: &[i64], b: &[i64]) -> f64 {
    let a = singletons(a);
    let b = singletons(b);
    let n = a.len() as f64;
    if a.is_empty() {
        return 1.0;
    }
    let mut joint: BTreeMap<(i64, i64), f64> = BTreeMap::new();
    let mut pa: BTreeMap<i64, f64> = BTreeMap::new();
    let mut pb: BTreeMap<i64, f64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(&b) {
        *joint.entry((x, y)).or_default() += 1.0 / n;
        *pa.entry(x).or_default() += 1.0 / n;
        *pb.entry(y).or_default() += 1.0 / n;
    }
    let h = |p: &BTreeMap<i64, f64>| -p.values().map(|&q| q * q.ln()).sum::<f64>();
    let (ha, hb) = (h(&pa), h(&pb));
    if ha == 0.0 && hb == 0.0 {
        return 1.0;
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(x, y), &p)| p * (p / (pa[&x] * pb[&y])).ln())
        .sum();
    (mi.max(0.0) / ((ha + hb) / 2.0)).min(1.0)
}

fn singletons(labels: &[i64]) -> Vec<i64> {
    let mut next = 1_000_000;
    labels
        .iter()
        .map(|&l| {
            if l < 0 {
                next += 1;
                next
            } else {
                l
            }
        })
        .collect()
}

/// Textbook affinity propagation on a dense similarity matrix (diagonal holds
/// the preferences). Returns sorted exemplar indices and whether the exemplar
/// set stayed fixed for `window` iterations.
pub fn ap_reference(s: &[Vec<f64>], damping: f64, max_iter: usize, window: usize) -> (Vec<usize>, bool) {
    let n = s.len();
    let mut r = vec![vec![0.0; n]; n];
    let mut a = vec![vec![0.0; n]; n];
    let mut last: Option<Vec<usize>> = None;
    let mut same_for = 0;
    for _ in 0..max_iter {
        // responsibilities
        let mut r_new = vec![vec![0.0; n]; n];
        for i in 0..n {
            for k in 0..n {
                let competitor = (0..n)
                    .filter(|&kk| kk != k)
                    .map(|kk| a[i][kk] + s[i][kk])
                    .fold(f64::NEG_INFINITY, f64::max);
                r_new[i][k] = s[i][k] - competitor;
            }
        }
        for i in 0..n {
            for k in 0..n {
                r[i][k] = damping * r[i][k] + (1.0 - damping) * r_new[i][k];
            }
        }
        // availabilities
        let mut a_new = vec![vec![0.0; n]; n];
        for i in 0..n {
            for k in 0..n {
                let support: f64 = (0..n)
                    .filter(|&ii| ii != i && ii != k)
                    .map(|ii| r[ii][k].max(0.0))
                    .sum();
                a_new[i][k] = if i == k { support } else { (r[k][k] + support).min(0.0) };
            }
        }
        for i in 0..n {
            for k in 0..n {
                a[i][k] = damping * a[i][k] + (1.0 - damping) * a_new[i][k];
            }
        }
        let ex: Vec<usize> = (0..n).filter(|&k| a[k][k] + r[k][k] > 0.0).collect();
        if last.as_ref() == Some(&ex) {
            same_for += 1;
        } else {
            last = Some(ex.clone());
            same_for = 1;
        }
        if same_for >= window && !ex.is_empty() {
            return (ex, true);
        }
    }
    (last.unwrap_or_default(), false)
}

/// 8-connected components by breadth-first flood fill, as sorted pixel lists,
/// keeping those with at least `min_area` pixels.
pub fn flood_fill_components(mask: &BinarySaliencyMask, min_area: usize) -> BTreeSet<Vec<(usize, usize)>> {
    let (w, h) = mask.dimensions();
    let mut seen = vec![false; w * h];
    let mut out = BTreeSet::new();
    for y0 in 0..h {
        for x0 in 0..w {
            if seen[y0 * w + x0] || !mask.is_salient(x0, y0) {
                continue;
            }
            let mut comp = Vec::new();
            let mut q = VecDeque::from([(x0, y0)]);
            seen[y0 * w + x0] = true;
            while let Some((x, y)) = q.pop_front() {
                comp.push((x, y));
                for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        if !seen[ny * w + nx] && mask.is_salient(nx, ny) {
                            seen[ny * w + nx] = true;
                            q.push_back((nx, ny));
                        }
                    }
                }
            }
            if comp.len() >= min_area {
                comp.sort();
                out.insert(comp);
            }
        }
    }
    out
}

/// The 16 offsets at distance 3 used by the FAST segment test, ordered by
/// angle so that contiguity along the list is contiguity on the circle.
pub fn fast_circle() -> Vec<(i32, i32)> {
    let mut pts: Vec<(i32, i32)> = Vec::new();
    for dy in -3i32..=3 {
        for dx in -3i32..=3 {
            let r2 = dx * dx + dy * dy;
            // the discrete circle of radius 3: 9 <= r^2 <= 10, plus the
            // diagonal (2, 2) points
            if (9..=10).contains(&r2) || (dx.abs() == 2 && dy.abs() == 2) {
                pts.push((dx, dy));
            }
        }
    }
    pts.sort_by(|p, q| {
        let ap = (p.1 as f64).atan2(p.0 as f64);
        let aq = (q.1 as f64).atan2(q.0 as f64);
        ap.total_cmp(&aq)
    });
    assert_eq!(pts.len(), 16);
    pts
}

fn luma(img: &Image, x: usize, y: usize) -> f32 {
    let [r, g, b] = img.pixel(x, y);
    0.299 * r as f32 + 0.587 * g as f32 + 0.114 * b as f32
}

/// FAST-9 score at one pixel by checking every start position for nine
/// consecutive brighter (or darker) circle pixels. The score sums
/// `|I_p - I_c|` over circle pixels on the winning side.
pub fn fast_score(img: &Image, x: usize, y: usize, t: f32, circle: &[(i32, i32)]) -> Option<f32> {
    let c = luma(img, x, y);
    let vals: Vec<f32> = circle
        .iter()
        .map(|&(dx, dy)| luma(img, (x as i32 + dx) as usize, (y as i32 + dy) as usize))
        .collect();
    for bright in [true, false] {
        let hit = |v: f32| if bright { v > c + t } else { v < c - t };
        let arc = (0..16).any(|start| (0..9).all(|k| hit(vals[(start + k) % 16])));
        if arc {
            return Some(vals.iter().filter(|&&v| hit(v)).map(|&v| (v - c).abs()).sum());
        }
    }
    None
}

/// Brute-force FAST-9 detection with 3x3 non-maximum suppression inside the
/// candidate window (region shrunk to stay 3 pixels from the image border).
/// Equal scores keep the pixel that comes first in raster order.
pub fn fast_brute_force(
    img: &Image,
    region: (usize, usize, usize, usize),
    t: f32,
) -> Vec<(usize, usize)> {
    let (w, h) = img.dimensions();
    let circle = fast_circle();
    let (x0, y0) = (region.0.max(3), region.1.max(3));
    let (x1, y1) = (region.2.min(w - 4), region.3.min(h - 4));
    if x1 < x0 || y1 < y0 {
        return Vec::new();
    }
    let score = |x: usize, y: usize| fast_score(img, x, y, t, &circle).unwrap_or(0.0);
    let mut out = Vec::new();
    for y in y0..=y1 {
        for x in x0..=x1 {
            let s = score(x, y);
            if s <= 0.0 {
                continue;
            }
            let mut keep = true;
            for ny in y.saturating_sub(1).max(y0)..=(y + 1).min(y1) {
                for nx in x.saturating_sub(1).max(x0)..=(x + 1).min(x1) {
                    if (nx, ny) == (x, y) {
                        continue;
                    }
                    let ns = score(nx, ny);
                    let earlier = (ny, nx) < (y, x);
                    if ns > s || (ns == s && earlier) {
                        keep = false;
                    }
                }
            }
            if keep {
                out.push((x, y));
            }
        }
    }
    out
}

/// OPTICS reachability by repeated full scans: each step picks the
/// unprocessed item with the smallest reachability from any processed core
/// item (ties to the lowest index).
pub fn optics_reachability(d: &[Vec<f64>], min_samples: usize) -> (Vec<usize>, Vec<f64>) {
    let n = d.len();
    let core: Vec<f64> = (0..n)
        .map(|i| {
            let mut row = d[i].clone();
            row.sort_by(|a, b| a.total_cmp(b));
            row.get(min_samples - 1).copied().unwrap_or(f64::INFINITY)
        })
        .collect();
    let mut done: Vec<usize> = Vec::new();
    let mut reach = vec![f64::INFINITY; n];
    while done.len() < n {
        let reach_of = |j: usize| {
            done.iter()
                .filter(|&&p| core[p].is_finite())
                .map(|&p| d[p][j].max(core[p]))
                .fold(f64::INFINITY, f64::min)
        };
        let next = (0..n)
            .filter(|j| !done.contains(j))
            .min_by(|&a, &b| reach_of(a).total_cmp(&reach_of(b)).then(a.cmp(&b)))
            .unwrap();
        reach[next] = reach_of(next);
        done.push(next);
    }
    (done, reach)
}

/// Euclidean distance matrix computed entry by entry.
pub fn brute_distances(points: &[Vec<f32>]) -> Vec<Vec<f64>> {
    points
        .iter()
        .map(|p| {
            points
                .iter()
                .map(|q| {
                    p.iter()
                        .zip(q)
                        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect()
        })
        .collect()
}

/// Small deterministic 2-D point sets: 2 to 4 loose groups, 5 to 25 points.
pub fn ap_fixture(seed: u64) -> Vec<Vec<f32>> {
    let mut s = seed.wrapping_mul(0x9E3779B97F4A7C15) | 1;
    let mut next = move || {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 11) as f64 / (1u64 << 53) as f64
    };
    let n = 5 + (next() * 21.0) as usize;
    let groups = 2 + (next() * 3.0) as usize;
    let centres: Vec<(f64, f64)> = (0..groups).map(|_| (next() * 20.0, next() * 20.0)).collect();
    (0..n)
        .map(|i| {
            let (cx, cy) = centres[i % groups];
            vec![(cx + next() * 3.0) as f32, (cy + next() * 3.0) as f32]
        })
        .collect()
}

/// `-D` with the median off-diagonal similarity on the diagonal, numpy
/// style (mean of the middle pair for even counts).
pub fn median_similarity(d: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = d.len();
    let mut off: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| -d[i][j])
        .collect();
    off.sort_by(|a, b| a.total_cmp(b));
    let m = off.len();
    let pref = if m % 2 == 1 { off[m / 2] } else { (off[m / 2 - 1] + off[m / 2]) / 2.0 };
    (0..n)
        .map(|i| (0..n).map(|k| if i == k { pref } else { -d[i][k] }).collect())
        .collect()
}
