//! Stage runners behind the `scene-cluster` command.
//!
//! Every stage reads its inputs from the dataset or from earlier stages'
//! outputs under the cache directory and writes to
//! `<cache>/<stage>/<participant_id>/...`. A stage records a 64-bit content
//! hash of its config section and inputs in a `stamp` file; when the stored
//! hash matches, the stage skips that unit of work unless forced.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering::{
    cluster_participant, downscaled_pixels, BaselineInput, ClusterParams, Clustering, Method, ParticipantData,
    Preference,
};
use crate::config::{Backend, PipelineConfig};
use crate::error::{Error, Result};
use crate::evaluation::{score_dataset, sweep, truth_labels, SweepParticipant};
use crate::features::export::{write_export_list, ExportEntry};
use crate::features::{
    compute_features, tensor_file_name, FeatureExtractor, FeatureVector, ImageFeatures, ImageKey, Layer,
    PrecomputedExtractor, RandomProjectionExtractor, Scope,
};
use crate::fsutil::{create_dir_all, write_atomic};
use crate::model::{load_manifest, split_by_participants, validate_dataset, Dataset, EatingOccasionRecord, Image};
use crate::preprocess::{preprocess_image, BBox, ComponentSummary, MaskedImage};
use crate::synthgen::{generate_dataset, random_study};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    Synth,
    Preprocess,
    Extract,
    Cluster,
    Evaluate,
    Sweep,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Synth,
        Stage::Preprocess,
        Stage::Extract,
        Stage::Cluster,
        Stage::Evaluate,
        Stage::Sweep,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Preprocess => "preprocess",
            Stage::Extract => "extract",
            Stage::Cluster => "cluster",
            Stage::Evaluate => "evaluate",
            Stage::Sweep => "sweep",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown stage {s:?}")))
    }
}

/// Command-line switches shared by every stage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunOptions {
    pub jobs: usize,
    pub force: bool,
    pub dump_intermediates: bool,
    /// Overrides `cluster.method` for `cluster` and `evaluate`.
    pub method: Option<Method>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            jobs: 1,
            force: false,
            dump_intermediates: false,
            method: None,
        }
    }
}

/// How many units of work a stage ran and how many were already current.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct StageSummary {
    pub stage: String,
    pub ran: usize,
    pub skipped: usize,
    /// Main output location of the stage.
    pub output: PathBuf,
}

// ---------------------------------------------------------------------------
// content hashing and stamps

/// SHA-256 over length-prefixed fields, truncated to 64 bits.
struct ContentHash(Sha256);

impl ContentHash {
    fn new(stage: Stage) -> Self {
        let mut h = ContentHash(Sha256::new());
        h.field(stage.as_str().as_bytes());
        h
    }

    fn field(&mut self, bytes: &[u8]) -> &mut Self {
        self.0.update((bytes.len() as u64).to_le_bytes());
        self.0.update(bytes);
        self
    }

    fn json<T: Serialize>(&mut self, value: &T) -> &mut Self {
        let text = serde_json::to_vec(value).expect("serializable");
        self.field(&text)
    }

    fn file(&mut self, path: &Path) -> Result<&mut Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(self.field(&bytes))
    }

    fn finish(self) -> String {
        let digest = self.0.finalize();
        let mut first = [0u8; 8];
        first.copy_from_slice(&digest[..8]);
        format!("{:016x}", u64::from_be_bytes(first))
    }
}

const STAMP: &str = "stamp";

fn read_stamp(dir: &Path) -> Option<String> {
    std::fs::read_to_string(dir.join(STAMP))
        .ok()
        .map(|s| s.trim().to_string())
}

fn write_stamp(dir: &Path, hash: &str) -> Result<()> {
    write_atomic(&dir.join(STAMP), format!("{hash}\n").as_bytes())
}

fn is_current(dir: &Path, hash: &str, force: bool) -> bool {
    !force && read_stamp(dir).as_deref() == Some(hash)
}

/// Stamp of an earlier stage that must have completed.
fn require_stamp(dir: &Path, stage: Stage, what: &str) -> Result<String> {
    read_stamp(dir).ok_or_else(|| {
        Error::MissingStage(format!(
            "stage `{stage}` has no output for {what} in {} (run `scene-cluster {stage}` first)",
            dir.display()
        ))
    })
}

// ---------------------------------------------------------------------------
// layout

/// Paths of every stage output under one cache directory.
#[derive(Clone, Debug)]
pub struct CacheLayout {
    root: PathBuf,
}

impl CacheLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        CacheLayout { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.root.join(stage.as_str())
    }

    pub fn participant_dir(&self, stage: Stage, participant_id: &str) -> PathBuf {
        self.stage_dir(stage).join(participant_id)
    }

    pub fn masked_image(&self, participant_id: &str, image_id: &str, scope: Scope) -> PathBuf {
        self.participant_dir(Stage::Preprocess, participant_id)
            .join(format!("{image_id}.{scope}.png"))
    }

    pub fn export_list(&self, participant_id: &str) -> PathBuf {
        self.participant_dir(Stage::Preprocess, participant_id)
            .join("export_list.tsv")
    }

    pub fn preprocess_summary(&self, participant_id: &str) -> PathBuf {
        self.participant_dir(Stage::Preprocess, participant_id)
            .join("summary.json")
    }

    pub fn feature_vector(&self, participant_id: &str, image_id: &str, scope: Scope, layer: Layer) -> PathBuf {
        self.participant_dir(Stage::Extract, participant_id)
            .join(tensor_file_name(image_id, scope, layer))
    }

    pub fn cluster_result(&self, participant_id: &str, method: Method) -> PathBuf {
        self.participant_dir(Stage::Cluster, participant_id)
            .join(format!("{}.json", method.as_str()))
    }

    pub fn evaluate_dir(&self, method: Method) -> PathBuf {
        self.stage_dir(Stage::Evaluate).join(method.as_str())
    }

    pub fn report_csv(&self, method: Method) -> PathBuf {
        self.evaluate_dir(method).join("report.csv")
    }
}

// ---------------------------------------------------------------------------
// shared helpers

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start {jobs} workers: {e}")))
}

/// Runs `f` over `items` on the pool and reports the first error in item
/// order, so failures do not depend on scheduling.
fn for_each_ordered<T: Sync, R: Send>(
    pool: &rayon::ThreadPool,
    items: &[T],
    f: impl Fn(&T) -> Result<R> + Sync + Send,
) -> Result<Vec<R>> {
    let results: Vec<Result<R>> = pool.install(|| items.par_iter().map(f).collect());
    results.into_iter().collect()
}

fn load_dataset(cfg: &PipelineConfig) -> Result<Dataset> {
    let path = cfg.manifest_path();
    if !path.exists() {
        return Err(if cfg.dataset.manifest.is_none() {
            Error::MissingStage(format!(
                "stage `synth` has not written {} (run `scene-cluster synth` or set dataset.manifest)",
                path.display()
            ))
        } else {
            Error::io(&path, std::io::Error::new(std::io::ErrorKind::NotFound, "manifest not found"))
        });
    }
    let d = load_manifest(&path)?;
    for pid in d.participant_ids() {
        if pid.is_empty() || pid.contains(['/', '\\']) || pid == "." || pid == ".." {
            return Err(Error::InvalidParameter(format!(
                "participant id {pid:?} cannot name a cache directory"
            )));
        }
    }
    for v in validate_dataset(&d) {
        log::warn!("{v}");
    }
    Ok(d)
}

fn participants(d: &Dataset) -> Vec<String> {
    d.participant_ids().map(str::to_string).collect()
}

fn method_of(cfg: &PipelineConfig, opts: &RunOptions) -> Method {
    opts.method.unwrap_or(cfg.cluster.method)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// stages

/// Runs one stage.
pub fn run_stage(cfg: &PipelineConfig, stage: Stage, opts: &RunOptions) -> Result<StageSummary> {
    cfg.validate()?;
    match stage {
        Stage::Synth => cmd_synth(cfg, opts),
        Stage::Preprocess => cmd_preprocess(cfg, opts),
        Stage::Extract => cmd_extract(cfg, opts),
        Stage::Cluster => cmd_cluster(cfg, opts),
        Stage::Evaluate => cmd_evaluate(cfg, opts),
        Stage::Sweep => cmd_sweep(cfg, opts),
    }
}

/// Writes a synthetic study to `synth.out_dir`.
pub fn cmd_synth(cfg: &PipelineConfig, opts: &RunOptions) -> Result<StageSummary> {
    let layout = CacheLayout::new(cfg.cache_dir());
    let out = cfg.synth.out_dir.clone();
    let mut h = ContentHash::new(Stage::Synth);
    h.json(&cfg.synth).json(&cfg.seed);
    let hash = h.finish();
    let stamp_dir = layout.stage_dir(Stage::Synth);
    let mut summary = StageSummary {
        stage: Stage::Synth.to_string(),
        output: out.join("manifest.csv"),
        ..Default::default()
    };
    if is_current(&stamp_dir, &hash, opts.force) && summary.output.exists() {
        summary.skipped = 1;
        return Ok(summary);
    }
    let s = &cfg.synth;
    let specs = random_study(s.participants, s.images, s.environments, cfg.seed);
    pool(opts.jobs)?.install(|| generate_dataset(&specs, &out))?;
    write_json(&stamp_dir.join("specs.json"), &specs)?;
    write_stamp(&stamp_dir, &hash)?;
    summary.ran = 1;
    Ok(summary)
}

/// Per-image preprocessing facts kept for later stages and for inspection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageSummary {
    pub image_id: String,
    pub fiducial: Option<BBox>,
    pub fiducial_interest_points: Option<usize>,
    /// False when no marker was found and the local feature falls back to
    /// the global one.
    pub has_local: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticipantPreprocess {
    pub participant_id: String,
    pub images: Vec<ImageSummary>,
}

/// Saliency masking, marker detection and local cropping.
pub fn cmd_preprocess(cfg: &PipelineConfig, opts: &RunOptions) -> Result<StageSummary> {
    let d = load_dataset(cfg)?;
    let layout = CacheLayout::new(cfg.cache_dir());
    let pids = participants(&d);
    let ran = for_each_ordered(&pool(opts.jobs)?, &pids, |pid| {
        let records = d.participant_records(pid);
        let dir = layout.participant_dir(Stage::Preprocess, pid);
        let mut h = ContentHash::new(Stage::Preprocess);
        h.json(&cfg.preprocess).json(&opts.dump_intermediates);
        for r in &records {
            h.field(r.image_id.as_bytes());
            h.file(&r.image_path)?;
            h.file(&r.mask_path)?;
        }
        let hash = h.finish();
        if is_current(&dir, &hash, opts.force) {
            return Ok(false);
        }
        preprocess_participant(cfg, opts, &layout, pid, &records)?;
        write_stamp(&dir, &hash)?;
        Ok(true)
    })?;
    Ok(tally(Stage::Preprocess, &ran, layout.stage_dir(Stage::Preprocess)))
}

fn tally(stage: Stage, ran: &[bool], output: PathBuf) -> StageSummary {
    let n = ran.iter().filter(|&&r| r).count();
    StageSummary {
        stage: stage.to_string(),
        ran: n,
        skipped: ran.len() - n,
        output,
    }
}

fn preprocess_participant(
    cfg: &PipelineConfig,
    opts: &RunOptions,
    layout: &CacheLayout,
    pid: &str,
    records: &[&EatingOccasionRecord],
) -> Result<()> {
    let mut images = Vec::with_capacity(records.len());
    let mut export = Vec::new();
    for r in records {
        let img = Image::open(&r.image_path)?;
        let mask = crate::model::BinarySaliencyMask::open(&r.mask_path)?;
        let p = preprocess_image(&img, &mask, &cfg.preprocess)?;
        let global_path = layout.masked_image(pid, &r.image_id, Scope::Global);
        p.masked.save_png(&global_path)?;
        export.push(ExportEntry {
            image_id: r.image_id.clone(),
            scope: Scope::Global,
            path: global_path,
        });
        let local_path = layout.masked_image(pid, &r.image_id, Scope::Local);
        if let Some(local) = &p.local {
            local.save_png(&local_path)?;
            export.push(ExportEntry {
                image_id: r.image_id.clone(),
                scope: Scope::Local,
                path: local_path,
            });
        } else if local_path.exists() {
            std::fs::remove_file(&local_path).map_err(|e| Error::io(&local_path, e))?;
        }
        if opts.dump_intermediates {
            let table: Vec<&ComponentSummary> = p.components.iter().collect();
            write_json(
                &layout
                    .participant_dir(Stage::Preprocess, pid)
                    .join(format!("{}.components.json", r.image_id)),
                &table,
            )?;
        }
        images.push(ImageSummary {
            image_id: r.image_id.clone(),
            fiducial: p.fiducial.as_ref().map(|f| f.bbox),
            fiducial_interest_points: p.fiducial.as_ref().map(|f| f.interest_point_count),
            has_local: p.local.is_some(),
        });
    }
    write_export_list(&layout.export_list(pid), &export)?;
    write_json(
        &layout.preprocess_summary(pid),
        &ParticipantPreprocess {
            participant_id: pid.to_string(),
            images,
        },
    )
}

fn build_extractor(cfg: &PipelineConfig, layers: &[Layer]) -> Result<Box<dyn FeatureExtractor>> {
    let e = &cfg.extractor;
    match e.backend {
        Backend::RandomProjection => Ok(Box::new(RandomProjectionExtractor::new(cfg.seed, e.input_size()))),
        Backend::Precomputed => {
            let dir = e
                .tensor_dir
                .as_ref()
                .ok_or_else(|| Error::Config("extractor.tensor_dir is required for the precomputed backend".into()))?;
            Ok(Box::new(PrecomputedExtractor::new(dir)))
        }
        Backend::Onnx => {
            let model = e
                .model
                .as_ref()
                .ok_or_else(|| Error::Config("extractor.model is required for the onnx backend".into()))?;
            onnx_extractor(model, layers, e.input_size())
        }
    }
}

#[cfg(feature = "onnx")]
fn onnx_extractor(model: &Path, layers: &[Layer], size: usize) -> Result<Box<dyn FeatureExtractor>> {
    Ok(Box::new(crate::features::onnx::OnnxExtractor::load(model, layers, (size, size))?))
}

#[cfg(not(feature = "onnx"))]
fn onnx_extractor(_model: &Path, _layers: &[Layer], _size: usize) -> Result<Box<dyn FeatureExtractor>> {
    Err(Error::Config(
        "the onnx backend needs a build with `--features onnx`".into(),
    ))
}

/// Pooled global and local feature vectors for every extract layer.
pub fn cmd_extract(cfg: &PipelineConfig, opts: &RunOptions) -> Result<StageSummary> {
    let d = load_dataset(cfg)?;
    let layout = CacheLayout::new(cfg.cache_dir());
    let layers = cfg.extract_layers();
    let pids = participants(&d);
    // fail on missing inputs before loading a network
    let upstream: Vec<String> = pids
        .iter()
        .map(|pid| {
            require_stamp(
                &layout.participant_dir(Stage::Preprocess, pid),
                Stage::Preprocess,
                &format!("participant {pid}"),
            )
        })
        .collect::<Result<_>>()?;
    let extractor = build_extractor(cfg, &layers)?;
    let work: Vec<(&String, &String)> = pids.iter().zip(&upstream).collect();
    let ran = for_each_ordered(&pool(opts.jobs)?, &work, |&(pid, up)| {
        let records = d.participant_records(pid);
        let dir = layout.participant_dir(Stage::Extract, pid);
        let mut h = ContentHash::new(Stage::Extract);
        h.field(up.as_bytes()).json(&cfg.extractor).json(&layers);
        match cfg.extractor.backend {
            Backend::RandomProjection => {
                h.json(&cfg.seed);
            }
            Backend::Precomputed => {
                let pre = PrecomputedExtractor::new(cfg.extractor.tensor_dir.clone().unwrap_or_default());
                for r in &records {
                    let key = ImageKey {
                        participant_id: pid,
                        image_id: &r.image_id,
                    };
                    for &layer in &layers {
                        for scope in [Scope::Global, Scope::Local] {
                            let p = pre.path_for(key, scope, layer);
                            if p.exists() {
                                h.file(&p)?;
                            }
                        }
                    }
                }
            }
            Backend::Onnx => {
                if let Some(m) = &cfg.extractor.model {
                    h.file(m)?;
                }
            }
        }
        let hash = h.finish();
        if is_current(&dir, &hash, opts.force) {
            return Ok(false);
        }
        let summary: ParticipantPreprocess = read_json(&layout.preprocess_summary(pid))?;
        let has_local: BTreeMap<&str, bool> = summary
            .images
            .iter()
            .map(|s| (s.image_id.as_str(), s.has_local))
            .collect();
        for r in &records {
            let masked = MaskedImage::open_png(&layout.masked_image(pid, &r.image_id, Scope::Global))?;
            let local = if has_local.get(r.image_id.as_str()).copied().unwrap_or(false) {
                Some(MaskedImage::open_png(&layout.masked_image(pid, &r.image_id, Scope::Local))?)
            } else {
                None
            };
            let key = ImageKey {
                participant_id: pid,
                image_id: &r.image_id,
            };
            for &layer in &layers {
                let f = compute_features(extractor.as_ref(), key, &masked, local.as_ref(), layer)?;
                f.global
                    .write(&layout.feature_vector(pid, &r.image_id, Scope::Global, layer))?;
                f.local
                    .write(&layout.feature_vector(pid, &r.image_id, Scope::Local, layer))?;
            }
        }
        write_stamp(&dir, &hash)?;
        Ok(true)
    })?;
    Ok(tally(Stage::Extract, &ran, layout.stage_dir(Stage::Extract)))
}

/// Reads the pooled features `extract` wrote for one participant.
pub fn load_features(
    layout: &CacheLayout,
    pid: &str,
    records: &[&EatingOccasionRecord],
    layer: Layer,
) -> Result<Vec<ImageFeatures>> {
    records
        .iter()
        .map(|r| {
            let read = |scope| {
                let path = layout.feature_vector(pid, &r.image_id, scope, layer);
                if !path.exists() {
                    return Err(Error::MissingStage(format!(
                        "stage `extract` has no layer {layer} {scope} feature for ({pid}, {}) (run `scene-cluster extract` with this layer)",
                        r.image_id
                    )));
                }
                FeatureVector::read(&path)
            };
            Ok(ImageFeatures {
                global: read(Scope::Global)?,
                local: read(Scope::Local)?,
            })
        })
        .collect()
}

/// Parameters recorded next to each clustering.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordedParams {
    pub layer: Layer,
    #[serde(flatten)]
    pub cluster: ClusterParams,
}

/// One participant's clustering as written by `cluster`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub participant_id: String,
    pub method: Method,
    pub params: RecordedParams,
    pub image_ids: Vec<String>,
    pub labels: Vec<i64>,
    /// Image indices of the exemplars; empty for density-based methods.
    pub exemplars: Vec<usize>,
    pub converged: bool,
}

impl ClusterRecord {
    pub fn clustering(&self) -> Clustering {
        Clustering {
            labels: self.labels.clone(),
            exemplars: match self.method {
                Method::Proposed | Method::Ap => Some(self.exemplars.clone()),
                _ => None,
            },
            converged: self.converged,
        }
    }
}

fn cluster_params(cfg: &PipelineConfig) -> ClusterParams {
    ClusterParams {
        alpha: cfg.cluster.alpha,
        ap: cfg.cluster.ap,
        baseline: cfg.cluster.baseline,
    }
}

fn needs_features(method: Method, cfg: &PipelineConfig) -> bool {
    method == Method::Proposed || cfg.cluster.baseline.input == BaselineInput::Features
}

/// Clusters every participant with the configured (or overridden) method.
pub fn cmd_cluster(cfg: &PipelineConfig, opts: &RunOptions) -> Result<StageSummary> {
    let d = load_dataset(cfg)?;
    let layout = CacheLayout::new(cfg.cache_dir());
    let method = method_of(cfg, opts);
    let layer = cfg.extractor.layer;
    let params = cluster_params(cfg);
    let pids = participants(&d);
    let features = needs_features(method, cfg);
    let upstream: Vec<Option<String>> = pids
        .iter()
        .map(|pid| {
            if features {
                require_stamp(
                    &layout.participant_dir(Stage::Extract, pid),
                    Stage::Extract,
                    &format!("participant {pid}"),
                )
                .map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_>>()?;
    let work: Vec<(&String, &Option<String>)> = pids.iter().zip(&upstream).collect();
    let ran = for_each_ordered(&pool(opts.jobs)?, &work, |&(pid, up)| {
        let records = d.participant_records(pid);
        let out = layout.cluster_result(pid, method);
        let mut h = ContentHash::new(Stage::Cluster);
        h.json(&method).json(&params).json(&layer);
        match up {
            Some(up) => {
                h.field(up.as_bytes());
            }
            None => {
                for r in &records {
                    h.file(&r.image_path)?;
                }
            }
        }
        let hash = h.finish();
        // one stamp per method
        let stamp_dir = layout
            .participant_dir(Stage::Cluster, pid)
            .join(format!(".{}", method.as_str()));
        if is_current(&stamp_dir, &hash, opts.force) && out.exists() {
            return Ok(false);
        }
        let feats = if features {
            Some(load_features(&layout, pid, &records, layer)?)
        } else {
            None
        };
        let pixels = if method != Method::Proposed && cfg.cluster.baseline.input == BaselineInput::Pixels {
            Some(
                records
                    .iter()
                    .map(|r| Image::open(&r.image_path).map(|img| downscaled_pixels(&img)))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        let c = cluster_participant(
            ParticipantData {
                features: feats.as_deref(),
                pixels: pixels.as_deref(),
            },
            method,
            &params,
        )?;
        if !c.converged {
            log::warn!("{pid}: {} did not converge", method.as_str());
        }
        write_json(
            &out,
            &ClusterRecord {
                participant_id: pid.clone(),
                method,
                params: RecordedParams { layer, cluster: params },
                image_ids: records.iter().map(|r| r.image_id.clone()).collect(),
                labels: c.labels,
                exemplars: c.exemplars.unwrap_or_default(),
                converged: c.converged,
            },
        )?;
        write_stamp(&stamp_dir, &hash)?;
        Ok(true)
    })?;
    Ok(tally(Stage::Cluster, &ran, layout.stage_dir(Stage::Cluster)))
}

/// `summary.json` written by `evaluate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub method: Method,
    pub participants: usize,
    pub mean_ari: f64,
    pub mean_nmi: f64,
    /// Self-similarity the exemplar-based methods ran with.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ap_preference: Option<Preference>,
}

fn read_cluster_record(layout: &CacheLayout, pid: &str, method: Method, records: &[&EatingOccasionRecord]) -> Result<ClusterRecord> {
    let path = layout.cluster_result(pid, method);
    if !path.exists() {
        return Err(Error::MissingStage(format!(
            "stage `cluster` has no {} result for participant {pid} (run `scene-cluster cluster` first)",
            method.as_str()
        )));
    }
    let rec: ClusterRecord = read_json(&path)?;
    let ids: Vec<&str> = records.iter().map(|r| r.image_id.as_str()).collect();
    if rec.image_ids.iter().map(String::as_str).ne(ids.iter().copied()) {
        return Err(Error::MissingStage(format!(
            "stage `cluster` output for participant {pid} is stale (rerun `scene-cluster cluster`)"
        )));
    }
    Ok(rec)
}

/// Scores the test split (participants outside `validation_ids`).
pub fn cmd_evaluate(cfg: &PipelineConfig, opts: &RunOptions) -> Result<StageSummary> {
    let d = load_dataset(cfg)?;
    let layout = CacheLayout::new(cfg.cache_dir());
    let method = method_of(cfg, opts);
    let split = split_by_participants(&d, &cfg.validation_ids)?;
    let test = split.test;
    if test.is_empty() {
        return Err(Error::InvalidParameter(
            "every participant is in validation_ids; nothing left to evaluate".into(),
        ));
    }
    let mut clusterings = BTreeMap::new();
    let mut ap_preference = None;
    let mut h = ContentHash::new(Stage::Evaluate);
    for pid in test.participant_ids() {
        let records = test.participant_records(pid);
        let rec = read_cluster_record(&layout, pid, method, &records)?;
        h.file(&layout.cluster_result(pid, method))?;
        for r in &records {
            h.json(&r.env_label);
        }
        if matches!(method, Method::Proposed | Method::Ap) {
            ap_preference = Some(rec.params.cluster.ap.preference);
        }
        clusterings.insert(pid.to_string(), rec.clustering());
    }
    let hash = h.finish();
    let dir = layout.evaluate_dir(method);
    let report_path = layout.report_csv(method);
    let mut summary = StageSummary {
        stage: Stage::Evaluate.to_string(),
        output: report_path.clone(),
        ..Default::default()
    };
    if is_current(&dir, &hash, opts.force) && report_path.exists() {
        summary.skipped = 1;
        return Ok(summary);
    }
    let report = score_dataset(&test, &clusterings)?;
    report.write_csv(&report_path)?;
    write_json(
        &dir.join("summary.json"),
        &EvaluationSummary {
            method,
            participants: report.per_participant.len(),
            mean_ari: report.mean_ari,
            mean_nmi: report.mean_nmi,
            ap_preference,
        },
    )?;
    write_stamp(&dir, &hash)?;
    summary.ran = 1;
    Ok(summary)
}

/// `best.json` written by `sweep`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepBest {
    pub alpha: f64,
    pub layer: Layer,
    pub mean_ari: f64,
    pub mean_nmi: f64,
    pub participants: Vec<String>,
}

/// Mean validation ARI/NMI over the `(alpha, layer)` grid. Uses every
/// participant when `validation_ids` is empty.
pub fn cmd_sweep(cfg: &PipelineConfig, opts: &RunOptions) -> Result<StageSummary> {
    let d = load_dataset(cfg)?;
    let layout = CacheLayout::new(cfg.cache_dir());
    let val = if cfg.validation_ids.is_empty() {
        log::warn!("validation_ids is empty; sweeping over every participant, which overlaps the test split");
        d
    } else {
        split_by_participants(&d, &cfg.validation_ids)?.validation
    };
    let alphas = cfg.sweep_alphas();
    let layers = cfg.sweep.layers.clone();
    let pids = participants(&val);
    let mut h = ContentHash::new(Stage::Sweep);
    h.json(&alphas).json(&layers).json(&cfg.cluster.ap);
    for pid in &pids {
        let up = require_stamp(
            &layout.participant_dir(Stage::Extract, pid),
            Stage::Extract,
            &format!("participant {pid}"),
        )?;
        h.field(pid.as_bytes()).field(up.as_bytes());
        for r in val.participant_records(pid) {
            h.json(&r.env_label);
        }
    }
    let hash = h.finish();
    let dir = layout.stage_dir(Stage::Sweep);
    let grid_path = dir.join("grid_ari.csv");
    let mut summary = StageSummary {
        stage: Stage::Sweep.to_string(),
        output: grid_path.clone(),
        ..Default::default()
    };
    if is_current(&dir, &hash, opts.force) && grid_path.exists() {
        summary.skipped = 1;
        return Ok(summary);
    }
    let mut inputs = Vec::with_capacity(pids.len());
    for pid in &pids {
        let records = val.participant_records(pid);
        let mut features = BTreeMap::new();
        for &layer in &layers {
            features.insert(layer, load_features(&layout, pid, &records, layer)?);
        }
        inputs.push(SweepParticipant {
            participant_id: pid.clone(),
            truth: truth_labels(pid, &records)?,
            features,
        });
    }
    let grid = pool(opts.jobs)?.install(|| sweep(&inputs, &alphas, &layers, &cfg.cluster.ap))?;
    create_dir_all(&dir)?;
    write_atomic(&grid_path, grid.to_csv().as_bytes())?;
    write_atomic(&dir.join("grid_nmi.csv"), grid.nmi_csv().as_bytes())?;
    grid.render_heatmap(&dir.join("heatmap.png"))?;
    let (a, l) = (
        grid.alphas.iter().position(|&x| x == grid.best.0).expect("best alpha in grid"),
        grid.layers.iter().position(|&x| x == grid.best.1).expect("best layer in grid"),
    );
    write_json(
        &dir.join("best.json"),
        &SweepBest {
            alpha: grid.best.0,
            layer: grid.best.1,
            mean_ari: grid.mean_ari[a][l],
            mean_nmi: grid.mean_nmi[a][l],
            participants: pids.clone(),
        },
    )?;
    write_stamp(&dir, &hash)?;
    summary.ran = 1;
    Ok(summary)
}

/// Participants in the cluster stage's output directory.
pub fn clustered_participants(layout: &CacheLayout) -> BTreeSet<String> {
    std::fs::read_dir(layout.stage_dir(Stage::Cluster))
        .map(|rd| {
            rd.filter_map(|e| e.ok())
                .filter(|e| e.path().is_dir())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .collect()
        })
        .unwrap_or_default()
}
