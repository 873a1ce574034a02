//! Grid search over the fusion weight and the feature layer.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::PartitionPair;
use crate::clustering::{affinity_propagation, feature_distances, fuse, ApConfig, DistanceMatrix, FusionWeight};
use crate::error::{Error, Result};
use crate::features::{ImageFeatures, Layer};
use crate::fsutil::write_atomic;

/// 0.00, 0.01, ..., 1.00
pub fn default_alphas() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

/// Validation data for one participant.
#[derive(Clone, Debug)]
pub struct SweepParticipant {
    pub participant_id: String,
    pub truth: Vec<i64>,
    pub features: BTreeMap<Layer, Vec<ImageFeatures>>,
}

/// Mean validation scores indexed by `[alpha][layer]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub alphas: Vec<f64>,
    pub layers: Vec<Layer>,
    pub mean_ari: Vec<Vec<f64>>,
    pub mean_nmi: Vec<Vec<f64>>,
    pub best: (f64, Layer),
}

impl SweepGrid {
    pub fn cells(&self) -> usize {
        self.alphas.len() * self.layers.len()
    }

    /// Highest mean ARI; ties go to the smaller alpha, then the smaller layer.
    pub fn best_cell(alphas: &[f64], layers: &[Layer], mean_ari: &[Vec<f64>]) -> (f64, Layer) {
        let mut best = (0, 0);
        for a in 0..alphas.len() {
            for l in 0..layers.len() {
                let better = mean_ari[a][l] > mean_ari[best.0][best.1];
                let tie_earlier = mean_ari[a][l] == mean_ari[best.0][best.1]
                    && (alphas[a], layers[l]) < (alphas[best.0], layers[best.1]);
                if better || tie_earlier {
                    best = (a, l);
                }
            }
        }
        (alphas[best.0], layers[best.1])
    }

    fn grid_csv(&self, values: &[Vec<f64>]) -> String {
        let mut out = String::from("alpha");
        for l in &self.layers {
            out.push_str(&format!(",{l}"));
        }
        out.push('\n');
        for (a, row) in self.alphas.iter().zip(values) {
            out.push_str(&format!("{a:.2}"));
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    /// Alpha rows by layer columns of mean ARI.
    pub fn to_csv(&self) -> String {
        self.grid_csv(&self.mean_ari)
    }

    pub fn nmi_csv(&self) -> String {
        self.grid_csv(&self.mean_nmi)
    }

    /// Heat map of mean ARI: one column per layer, alpha increasing downward.
    pub fn render_heatmap(&self, path: &Path) -> Result<()> {
        const CELL_W: u32 = 40;
        const CELL_H: u32 = 4;
        let w = CELL_W * self.layers.len() as u32;
        let h = CELL_H * self.alphas.len() as u32;
        let lo = self.mean_ari.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.mean_ari.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let mut buf = image::RgbImage::new(w.max(1), h.max(1));
        for (y, px_row) in buf.enumerate_rows_mut() {
            for (x, _, px) in px_row {
                let a = (y / CELL_H) as usize;
                let l = (x / CELL_W) as usize;
                let t = ((self.mean_ari[a][l] - lo) / span).clamp(0.0, 1.0);
                // dark blue to yellow
                *px = image::Rgb([
                    (255.0 * t) as u8,
                    (40.0 + 200.0 * t) as u8,
                    (140.0 * (1.0 - t)) as u8,
                ]);
            }
        }
        let mut bytes = Vec::new();
        buf.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        write_atomic(path, &bytes)
    }
}

/// Scores of one (alpha, layer) cell on one participant.
pub fn cell_scores(local: &DistanceMatrix, global: &DistanceMatrix, truth: &[i64], alpha: f64, ap: &ApConfig) -> Result<(f64, f64)> {
    let d = fuse(local, global, FusionWeight::new(alpha)?)?;
    let c = affinity_propagation(&d, ap)?;
    let pair = PartitionPair::new(c.labels, truth.to_vec())?;
    Ok((pair.ari(), pair.nmi()))
}

/// Mean validation ARI/NMI for every (alpha, layer). Distance matrices are
/// built once per (participant, layer) and reused for every alpha.
pub fn sweep(participants: &[SweepParticipant], alphas: &[f64], layers: &[Layer], ap: &ApConfig) -> Result<SweepGrid> {
    if alphas.is_empty() || layers.is_empty() {
        return Err(Error::InvalidParameter("sweep needs at least one alpha and one layer".into()));
    }
    if participants.is_empty() {
        return Err(Error::InvalidParameter("sweep needs at least one participant".into()));
    }
    for &a in alphas {
        FusionWeight::new(a)?;
    }
    ap.validate()?;

    // [layer][participant] -> (L, G)
    let mut cache: Vec<Vec<(DistanceMatrix, DistanceMatrix)>> = Vec::with_capacity(layers.len());
    for &layer in layers {
        let per: Result<Vec<_>> = participants
            .iter()
            .map(|p| {
                let f = p.features.get(&layer).ok_or_else(|| {
                    Error::MissingStage(format!(
                        "layer {layer} features for participant {}",
                        p.participant_id
                    ))
                })?;
                feature_distances(f)
            })
            .collect();
        cache.push(per?);
    }

    let cells: Vec<(usize, usize)> = (0..alphas.len())
        .flat_map(|a| (0..layers.len()).map(move |l| (a, l)))
        .collect();
    let scores: Result<Vec<(f64, f64)>> = cells
        .par_iter()
        .map(|&(a, l)| {
            let mut ari = 0.0;
            let mut nmi = 0.0;
            for (p, (local, global)) in participants.iter().zip(&cache[l]) {
                let (x, y) = cell_scores(local, global, &p.truth, alphas[a], ap)?;
                ari += x;
                nmi += y;
            }
            let n = participants.len() as f64;
            Ok((ari / n, nmi / n))
        })
        .collect();
    let scores = scores?;

    let mut mean_ari = vec![vec![0.0; layers.len()]; alphas.len()];
    let mut mean_nmi = mean_ari.clone();
    for (&(a, l), &(ari, nmi)) in cells.iter().zip(&scores) {
        mean_ari[a][l] = ari;
        mean_nmi[a][l] = nmi;
    }
    let best = SweepGrid::best_cell(alphas, layers, &mean_ari);
    Ok(SweepGrid {
        alphas: alphas.to_vec(),
        layers: layers.to_vec(),
        mean_ari,
        mean_nmi,
        best,
    })
}
