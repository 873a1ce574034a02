//! Pipeline configuration read from a TOML file.
//!
//! Relative paths are resolved against the directory holding the config
//! file. Every section is optional and falls back to the library defaults.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clustering::{ApConfig, BaselineParams, FusionWeight, Method};
use crate::error::{Error, Result};
use crate::features::{Layer, RandomProjectionExtractor};
use crate::preprocess::PreprocessParams;

/// Overrides the configured cache directory when set.
pub const CACHE_ENV: &str = "SCENE_CLUSTER_CACHE";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Participants scored by `sweep`; everyone else forms the test split.
    pub validation_ids: BTreeSet<String>,
    pub dataset: DatasetSection,
    pub cache: CacheSection,
    pub synth: SynthSection,
    pub preprocess: PreprocessParams,
    pub extractor: ExtractorSection,
    pub cluster: ClusterSection,
    pub sweep: SweepSection,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Defaults to `<synth.out_dir>/manifest.csv`.
    pub manifest: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheSection {
    pub dir: PathBuf,
}

impl Default for CacheSection {
    fn default() -> Self {
        CacheSection { dir: "cache".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub out_dir: PathBuf,
    pub participants: usize,
    /// Inclusive range of images per participant.
    pub images: (usize, usize),
    /// Inclusive range of environments per participant.
    pub environments: (usize, usize),
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            out_dir: "synth".into(),
            participants: 12,
            images: (10, 60),
            environments: (3, 12),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    /// Activation maps exported ahead of time as `.ftns` files.
    Precomputed,
    /// Seeded single-convolution stand-in network.
    RandomProjection,
    /// An ONNX network evaluated in-process (needs the `onnx` feature).
    Onnx,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractorSection {
    pub backend: Backend,
    pub layer: Layer,
    /// Side of the square network input. Defaults to 64 for the stand-in
    /// network and 224 for ONNX models.
    pub resize: Option<usize>,
    /// Directory of `.ftns` files for the precomputed backend.
    pub tensor_dir: Option<PathBuf>,
    /// Network file for the ONNX backend.
    pub model: Option<PathBuf>,
}

impl Default for ExtractorSection {
    fn default() -> Self {
        ExtractorSection {
            backend: Backend::RandomProjection,
            layer: Layer::DEFAULT,
            resize: None,
            tensor_dir: None,
            model: None,
        }
    }
}

impl ExtractorSection {
    pub fn input_size(&self) -> usize {
        self.resize.unwrap_or(match self.backend {
            Backend::Onnx => 224,
            _ => RandomProjectionExtractor::DEFAULT_INPUT_SIZE,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSection {
    pub method: Method,
    pub alpha: FusionWeight,
    pub ap: ApConfig,
    pub baseline: BaselineParams,
}

impl Default for ClusterSection {
    fn default() -> Self {
        ClusterSection {
            method: Method::Proposed,
            alpha: FusionWeight::DEFAULT,
            ap: ApConfig::default(),
            baseline: BaselineParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Defaults to 0.00, 0.01, ..., 1.00.
    pub alphas: Option<Vec<f64>>,
    pub layers: Vec<Layer>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            alphas: None,
            layers: Layer::ALL.to_vec(),
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            validation_ids: BTreeSet::new(),
            dataset: DatasetSection::default(),
            cache: CacheSection::default(),
            synth: SynthSection::default(),
            preprocess: PreprocessParams::default(),
            extractor: ExtractorSection::default(),
            cluster: ClusterSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and resolves its relative paths against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = PipelineConfig::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.cache.dir);
        fix(&mut self.synth.out_dir);
        for p in [
            &mut self.dataset.manifest,
            &mut self.extractor.tensor_dir,
            &mut self.extractor.model,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        if self.preprocess.expansion < 1.0 || !self.preprocess.expansion.is_finite() {
            return cfg_err(format!("preprocess.expansion must be >= 1, got {}", self.preprocess.expansion));
        }
        if !(0.0..1.0).contains(&self.preprocess.min_component_fraction) {
            return cfg_err("preprocess.min_component_fraction must lie in [0, 1)".into());
        }
        if !(self.preprocess.fast_threshold > 0.0) {
            return cfg_err("preprocess.fast_threshold must be positive".into());
        }
        if self.extractor.input_size() < 8 {
            return cfg_err("extractor.resize must be at least 8".into());
        }
        self.cluster.ap.validate()?;
        let b = &self.cluster.baseline;
        if b.dbscan_min_pts < 1 || b.optics_min_samples < 2 || !(b.optics_xi > 0.0 && b.optics_xi < 1.0) {
            return cfg_err("baseline needs dbscan_min_pts >= 1, optics_min_samples >= 2, 0 < optics_xi < 1".into());
        }
        if let Some(alphas) = &self.sweep.alphas {
            if alphas.is_empty() {
                return cfg_err("sweep.alphas is empty".into());
            }
            for &a in alphas {
                FusionWeight::new(a)?;
            }
        }
        if self.sweep.layers.is_empty() {
            return cfg_err("sweep.layers is empty".into());
        }
        let s = &self.synth;
        if s.images.0 < 2 || s.images.0 > s.images.1 || s.environments.0 < 1 || s.environments.0 > s.environments.1 {
            return cfg_err("synth ranges need 2 <= images.0 <= images.1 and 1 <= environments.0 <= environments.1".into());
        }
        Ok(())
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dataset
            .manifest
            .clone()
            .unwrap_or_else(|| self.synth.out_dir.join("manifest.csv"))
    }

    /// The configured cache directory unless [`CACHE_ENV`] is set.
    pub fn cache_dir(&self) -> PathBuf {
        match std::env::var_os(CACHE_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.cache.dir.clone(),
        }
    }

    pub fn sweep_alphas(&self) -> Vec<f64> {
        self.sweep
            .alphas
            .clone()
            .unwrap_or_else(crate::evaluation::default_alphas)
    }

    /// Every layer `extract` produces: the clustering layer plus the sweep
    /// layers, ascending.
    pub fn extract_layers(&self) -> Vec<Layer> {
        let mut set: BTreeSet<Layer> = self.sweep.layers.iter().copied().collect();
        set.insert(self.extractor.layer);
        set.into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::{BaselineInput, Preference};

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = PipelineConfig::from_toml("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.cluster.alpha.value(), 0.44);
        assert_eq!(cfg.extractor.layer, Layer::DEFAULT);
        assert_eq!(cfg.sweep_alphas().len(), 101);
        assert_eq!(cfg.extract_layers(), Layer::ALL.to_vec());
    }

    #[test]
    fn sections_override_defaults() {
        let cfg = PipelineConfig::from_toml(
            r#"
            seed = 9
            validation_ids = ["p001"]
            [extractor]
            backend = "precomputed"
            layer = 4
            tensor_dir = "tensors"
            [cluster]
            method = "dbscan"
            alpha = 0.3
            [cluster.ap]
            damping = 0.7
            preference = { fixed = -2.5 }
            [cluster.baseline]
            input = "features"
            dbscan_eps = 1.5
            [sweep]
            alphas = [0.0, 0.5, 1.0]
            layers = [2]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert!(cfg.validation_ids.contains("p001"));
        assert_eq!(cfg.extractor.backend, Backend::Precomputed);
        assert_eq!(cfg.extractor.layer.index(), 4);
        assert_eq!(cfg.cluster.method, Method::Dbscan);
        assert_eq!(cfg.cluster.ap.damping, 0.7);
        assert_eq!(cfg.cluster.ap.max_iterations, 500);
        assert_eq!(cfg.cluster.ap.preference, Preference::Fixed(-2.5));
        assert_eq!(cfg.cluster.baseline.input, BaselineInput::Features);
        assert_eq!(cfg.cluster.baseline.dbscan_eps, Some(1.5));
        assert_eq!(cfg.cluster.baseline.optics_min_samples, 4);
        assert_eq!(cfg.extract_layers().len(), 2);
    }

    #[test]
    fn invalid_values_are_rejected() {
        for bad in [
            "[cluster]\nalpha = 1.5",
            "[extractor]\nlayer = 3",
            "[preprocess]\nexpansion = 0.5",
            "[sweep]\nlayers = []",
            "unknown_key = 1",
            "[cluster.ap]\ndamping = 1.0",
        ] {
            assert!(PipelineConfig::from_toml(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = PipelineConfig::default();
        cfg.seed = 3;
        cfg.sweep.alphas = Some(vec![0.0, 1.0]);
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn relative_paths_follow_config_file() {
        let mut cfg = PipelineConfig::default();
        cfg.extractor.tensor_dir = Some("t".into());
        cfg.resolve_paths(Path::new("/etc/run"));
        assert_eq!(cfg.cache.dir, Path::new("/etc/run/cache"));
        assert_eq!(cfg.extractor.tensor_dir.as_deref(), Some(Path::new("/etc/run/t")));
        assert_eq!(cfg.manifest_path(), Path::new("/etc/run/synth/manifest.csv"));
    }
}
