use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::PartitionPair;
use crate::clustering::Clustering;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::model::{Dataset, EatingOccasionRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticipantScore {
    pub ari: f64,
    pub nmi: f64,
    pub n_images: usize,
    pub n_pred: usize,
    pub n_true: usize,
}

/// Per-participant scores and their unweighted means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub per_participant: BTreeMap<String, ParticipantScore>,
    pub mean_ari: f64,
    pub mean_nmi: f64,
}

/// Ground-truth labels as integers assigned in order of first appearance.
pub fn truth_labels(participant_id: &str, records: &[&EatingOccasionRecord]) -> Result<Vec<i64>> {
    let mut ids: Vec<&str> = Vec::new();
    records
        .iter()
        .map(|r| {
            let label = r
                .env_label
                .as_deref()
                .ok_or_else(|| Error::MissingTruth(participant_id.to_string()))?;
            Ok(match ids.iter().position(|&l| l == label) {
                Some(p) => p as i64,
                None => {
                    ids.push(label);
                    ids.len() as i64 - 1
                }
            })
        })
        .collect()
}

fn distinct_clusters(labels: &[i64]) -> usize {
    let mut v = super::metrics::noise_to_singletons(labels);
    v.sort_unstable();
    v.dedup();
    v.len()
}

impl ScoreReport {
    pub fn from_scores(per_participant: BTreeMap<String, ParticipantScore>) -> Self {
        let n = per_participant.len().max(1) as f64;
        let mean_ari = per_participant.values().map(|s| s.ari).sum::<f64>() / n;
        let mean_nmi = per_participant.values().map(|s| s.nmi).sum::<f64>() / n;
        ScoreReport {
            per_participant,
            mean_ari,
            mean_nmi,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(["participant_id", "ari", "nmi", "n_images", "n_pred", "n_true"])
            .expect("in-memory write");
        for (pid, s) in &self.per_participant {
            w.write_record([
                pid.clone(),
                s.ari.to_string(),
                s.nmi.to_string(),
                s.n_images.to_string(),
                s.n_pred.to_string(),
                s.n_true.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }
}

/// Scores every participant of `d` against its clustering.
pub fn score_dataset(d: &Dataset, clusterings: &BTreeMap<String, Clustering>) -> Result<ScoreReport> {
    let mut per = BTreeMap::new();
    for pid in d.participant_ids() {
        let records = d.participant_records(pid);
        let truth = truth_labels(pid, &records)?;
        let c = clusterings
            .get(pid)
            .ok_or_else(|| Error::MissingStage(format!("clustering for participant {pid}")))?;
        let pair = PartitionPair::new(c.labels.clone(), truth)?;
        per.insert(
            pid.to_string(),
            ParticipantScore {
                ari: pair.ari(),
                nmi: pair.nmi(),
                n_images: records.len(),
                n_pred: distinct_clusters(pair.predicted()),
                n_true: distinct_clusters(pair.truth()),
            },
        );
    }
    Ok(ScoreReport::from_scores(per))
}
