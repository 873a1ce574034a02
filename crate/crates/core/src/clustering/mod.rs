//! Distance matrices, feature fusion and the clusterers: the proposed
//! fused-distance Affinity Propagation plus DBSCAN, mean shift, OPTICS and
//! plain Affinity Propagation baselines.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureVector, ImageFeatures};
use crate::model::Image;

pub mod affinity;
pub mod dbscan;
mod distance;
pub mod mean_shift;
pub mod optics;

pub use affinity::{affinity_propagation, ApConfig, Preference};
pub use dbscan::dbscan;
pub use distance::{fuse, pairwise_distances, DistanceMatrix, FusionWeight};
pub use mean_shift::mean_shift;
pub use optics::optics;

/// Label of points that density methods leave unassigned.
pub const NOISE: i64 = -1;

/// Cluster assignment for one participant's images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub labels: Vec<i64>,
    pub exemplars: Option<Vec<usize>>,
    pub converged: bool,
}

impl Clustering {
    /// Relabels clusters 0.. in order of first appearance; noise stays -1.
    /// Exemplars are reordered to match the new labels.
    pub fn new(labels: Vec<i64>, exemplars: Option<Vec<usize>>, converged: bool) -> Self {
        let mut map: HashMap<i64, i64> = HashMap::new();
        let labels: Vec<i64> = labels
            .into_iter()
            .map(|l| {
                if l < 0 {
                    NOISE
                } else {
                    let next = map.len() as i64;
                    *map.entry(l).or_insert(next)
                }
            })
            .collect();
        let exemplars = exemplars.map(|ex| {
            let mut ex: Vec<usize> = ex;
            ex.sort_by_key(|&k| labels[k]);
            ex
        });
        Clustering {
            labels,
            exemplars,
            converged,
        }
    }

    pub fn n_clusters(&self) -> usize {
        self.labels
            .iter()
            .filter(|&&l| l >= 0)
            .max()
            .map_or(0, |&m| m as usize + 1)
    }
}

/// Clustering method selectable per run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Fused local/global distances clustered with Affinity Propagation.
    Proposed,
    Ap,
    Dbscan,
    #[serde(rename = "meanshift")]
    MeanShift,
    Optics,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Proposed,
        Method::Ap,
        Method::Dbscan,
        Method::MeanShift,
        Method::Optics,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::Ap => "ap",
            Method::Dbscan => "dbscan",
            Method::MeanShift => "meanshift",
            Method::Optics => "optics",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method {s:?}")))
    }
}

/// What the baseline clusterers consume.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineInput {
    /// The raw scene downscaled to 32x32 RGB and flattened.
    Pixels,
    /// The fused distance matrix; mean shift uses `[alpha*l, (1-alpha)*g]`.
    Features,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineParams {
    pub input: BaselineInput,
    /// `None` means the median 4-NN distance of the participant.
    pub dbscan_eps: Option<f64>,
    pub dbscan_min_pts: usize,
    /// `None` means the median pairwise distance of the participant.
    pub meanshift_bandwidth: Option<f64>,
    pub optics_min_samples: usize,
    pub optics_xi: f64,
}

impl Default for BaselineParams {
    fn default() -> Self {
        BaselineParams {
            input: BaselineInput::Pixels,
            dbscan_eps: None,
            dbscan_min_pts: 4,
            meanshift_bandwidth: None,
            optics_min_samples: 4,
            optics_xi: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub alpha: FusionWeight,
    pub ap: ApConfig,
    pub baseline: BaselineParams,
}

/// Side length of the baseline pixel thumbnail.
pub const PIXEL_BASELINE_SIDE: u32 = 32;

/// The scene downscaled to 32x32 RGB, flattened to unit-interval reals.
pub fn downscaled_pixels(img: &Image) -> FeatureVector {
    use image::{imageops, ImageBuffer, Rgb};
    let buf: ImageBuffer<Rgb<u8>, &[u8]> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, img.pixels())
            .expect("image buffer size");
    let small = imageops::resize(
        &buf,
        PIXEL_BASELINE_SIDE,
        PIXEL_BASELINE_SIDE,
        imageops::FilterType::Triangle,
    );
    FeatureVector(small.as_raw().iter().map(|&b| b as f32 / 255.0).collect())
}

/// Inputs available for one participant. Slices are indexed by image in
/// manifest order.
#[derive(Clone, Copy, Debug, Default)]
pub struct ParticipantData<'a> {
    pub features: Option<&'a [ImageFeatures]>,
    pub pixels: Option<&'a [FeatureVector]>,
}

/// Global and local distance matrices of one participant.
pub fn feature_distances(features: &[ImageFeatures]) -> Result<(DistanceMatrix, DistanceMatrix)> {
    let local: Vec<FeatureVector> = features.iter().map(|f| f.local.clone()).collect();
    let global: Vec<FeatureVector> = features.iter().map(|f| f.global.clone()).collect();
    Ok((pairwise_distances(&local)?, pairwise_distances(&global)?))
}

fn median_off_diagonal(d: &DistanceMatrix) -> f64 {
    let mut v: Vec<f64> = d.upper_triangle().collect();
    if v.is_empty() {
        return 0.0;
    }
    affinity::median(&mut v)
}

fn positive_or(v: f64, fallback: impl FnOnce() -> f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        let f = fallback();
        if f > 0.0 {
            f
        } else {
            1.0
        }
    }
}

/// Clusters one participant's images with the chosen method.
pub fn cluster_participant(data: ParticipantData<'_>, method: Method, params: &ClusterParams) -> Result<Clustering> {
    let n = data
        .features
        .map(<[_]>::len)
        .or(data.pixels.map(<[_]>::len))
        .unwrap_or(0);
    if n == 0 {
        return Err(Error::InvalidParameter("participant has no images".into()));
    }
    if n == 1 {
        return Ok(Clustering::new(vec![0], Some(vec![0]), true));
    }

    let need_features = || {
        data.features
            .ok_or_else(|| Error::MissingStage("extracted features (run `extract`)".into()))
    };
    let fused = || -> Result<DistanceMatrix> {
        let (l, g) = feature_distances(need_features()?)?;
        fuse(&l, &g, params.alpha)
    };
    if method == Method::Proposed {
        return affinity_propagation(&fused()?, &params.ap);
    }

    let b = &params.baseline;
    let vectors: Vec<Vec<f64>> = match b.input {
        BaselineInput::Pixels => data
            .pixels
            .ok_or_else(|| Error::MissingStage("baseline pixel features".into()))?
            .iter()
            .map(|v| v.as_slice().iter().map(|&x| x as f64).collect())
            .collect(),
        BaselineInput::Features => {
            let a = params.alpha.value();
            need_features()?
                .iter()
                .map(|f| {
                    f.local
                        .as_slice()
                        .iter()
                        .map(|&x| a * x as f64)
                        .chain(f.global.as_slice().iter().map(|&x| (1.0 - a) * x as f64))
                        .collect()
                })
                .collect()
        }
    };
    let distances = || -> Result<DistanceMatrix> {
        match b.input {
            BaselineInput::Pixels => pairwise_distances(data.pixels.expect("checked above")),
            BaselineInput::Features => fused(),
        }
    };

    match method {
        Method::Proposed => unreachable!("handled above"),
        Method::Ap => affinity_propagation(&distances()?, &params.ap),
        Method::Dbscan => {
            let d = distances()?;
            let eps = match b.dbscan_eps {
                Some(e) => e,
                None => positive_or(dbscan::median_knn_distance(&d, 4), || median_off_diagonal(&d)),
            };
            dbscan(&d, eps, b.dbscan_min_pts)
        }
        Method::MeanShift => {
            let bw = match b.meanshift_bandwidth {
                Some(bw) => bw,
                None => {
                    let fv: Vec<FeatureVector> = vectors
                        .iter()
                        .map(|v| FeatureVector(v.iter().map(|&x| x as f32).collect()))
                        .collect();
                    let d = pairwise_distances(&fv)?;
                    positive_or(median_off_diagonal(&d), || {
                        d.upper_triangle().fold(0.0, f64::max)
                    })
                }
            };
            mean_shift(&vectors, bw)
        }
        Method::Optics => optics(&distances()?, b.optics_min_samples, b.optics_xi),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats(g: &[f32], l: &[f32]) -> ImageFeatures {
        ImageFeatures {
            global: FeatureVector(g.to_vec()),
            local: FeatureVector(l.to_vec()),
        }
    }

    #[test]
    fn compaction_by_first_appearance() {
        let c = Clustering::new(vec![5, 5, -1, 2, 7, 2], None, true);
        assert_eq!(c.labels, vec![0, 0, -1, 1, 2, 1]);
        assert_eq!(c.n_clusters(), 3);
        let c = Clustering::new(vec![1, 0, 1], Some(vec![1, 2]), true);
        assert_eq!(c.labels, vec![0, 1, 0]);
        assert_eq!(c.exemplars, Some(vec![2, 1]));
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("kmeans".parse::<Method>().is_err());
    }

    #[test]
    fn single_image_singleton() {
        let f = [feats(&[1.0], &[2.0])];
        let data = ParticipantData {
            features: Some(&f),
            pixels: None,
        };
        for m in Method::ALL {
            let c = cluster_participant(data, m, &ClusterParams::default()).unwrap();
            assert_eq!(c.labels, vec![0]);
        }
    }

    #[test]
    fn proposed_requires_features() {
        let px = [FeatureVector(vec![0.0]), FeatureVector(vec![1.0])];
        let data = ParticipantData {
            features: None,
            pixels: Some(&px),
        };
        assert!(matches!(
            cluster_participant(data, Method::Proposed, &ClusterParams::default()),
            Err(Error::MissingStage(_))
        ));
    }

    #[test]
    fn proposed_separates_groups() {
        let f = vec![
            feats(&[0.0, 0.0], &[0.0, 0.0]),
            feats(&[0.1, 0.0], &[0.0, 0.1]),
            feats(&[5.0, 5.0], &[4.0, 4.0]),
            feats(&[5.1, 5.0], &[4.0, 4.1]),
        ];
        let data = ParticipantData {
            features: Some(&f),
            pixels: None,
        };
        let c = cluster_participant(data, Method::Proposed, &ClusterParams::default()).unwrap();
        assert_eq!(c.labels, vec![0, 0, 1, 1]);
    }

    #[test]
    fn baselines_on_pixels() {
        let mut px = Vec::new();
        for i in 0..6 {
            px.push(FeatureVector(vec![0.0 + i as f32 * 0.01; 4]));
            px.push(FeatureVector(vec![1.0 + i as f32 * 0.01; 4]));
        }
        let data = ParticipantData {
            features: None,
            pixels: Some(&px),
        };
        for m in [Method::Ap, Method::Dbscan, Method::MeanShift, Method::Optics] {
            let c = cluster_participant(data, m, &ClusterParams::default()).unwrap();
            assert_eq!(c.labels.len(), 12, "{m}");
            assert!(c.labels.iter().all(|&l| l >= NOISE), "{m}");
        }
    }

    #[test]
    fn downscaled_pixels_shape() {
        let img = Image::new(64, 48, vec![128; 64 * 48 * 3]).unwrap();
        let v = downscaled_pixels(&img);
        assert_eq!(v.dim(), 3072);
        assert!(v.0.iter().all(|&x| (x - 128.0 / 255.0).abs() < 1e-6));
    }
}
