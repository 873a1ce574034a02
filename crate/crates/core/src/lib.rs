//! Clusters each participant's eating-occasion images by eating environment.
//!
//! Saliency-masked scenes give a global feature; the region around the
//! fiducial marker gives a local one. Their distance matrices are blended
//! with a weight `alpha` and clustered with Affinity Propagation. Baseline
//! clusterers, ARI/NMI scoring, an `(alpha, layer)` sweep and a synthetic
//! scene generator round out the pipeline.

pub mod clustering;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod features;
mod fsutil;
pub mod model;
pub mod pipeline;
pub mod preprocess;
pub mod synthgen;

pub use error::{Error, Result};
pub use fsutil::write_atomic;
