//! Cluster-validity scoring and the hyperparameter sweep.

mod metrics;
mod report;
pub mod sweep;

pub use metrics::{adjusted_rand_index, noise_to_singletons, normalized_mutual_info, PartitionPair};
pub use report::{score_dataset, truth_labels, ParticipantScore, ScoreReport};
pub use sweep::{default_alphas, sweep, SweepGrid, SweepParticipant};
