use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("manifest row {row}: {message}")]
    MalformedRow { row: usize, message: String },

    #[error("no records")]
    EmptyManifest,

    #[error("duplicate record key ({participant_id}, {image_id})")]
    DuplicateRecord {
        participant_id: String,
        image_id: String,
    },

    #[error("unknown participant id: {0}")]
    UnknownParticipant(String),

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("degenerate region: {0}")]
    DegenerateRegion(String),

    #[error("fiducial marker not found")]
    FiducialNotFound,

    #[error("empty spatial extent")]
    EmptyFeatureMap,

    #[error("missing feature tensor for ({image_id}, {scope}, layer {layer}): {path}")]
    MissingTensor {
        image_id: String,
        scope: String,
        layer: u32,
        path: PathBuf,
    },

    #[error("tensor format error: {0}")]
    TensorFormat(String),

    #[error("feature extraction error: {0}")]
    Extraction(String),

    #[error("vector dimension mismatch: {0} vs {1}")]
    VectorDimension(usize, usize),

    #[error("label length mismatch: predicted={predicted}, truth={truth}")]
    LabelLength { predicted: usize, truth: usize },

    #[error("participant {0} has no ground-truth labels")]
    MissingTruth(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing stage output: {0}")]
    MissingStage(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable snake_case name of the variant, for machine-readable output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
            Error::MalformedRow { .. } => "malformed_row",
            Error::EmptyManifest => "empty_manifest",
            Error::DuplicateRecord { .. } => "duplicate_record",
            Error::UnknownParticipant(_) => "unknown_participant",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidImage(_) => "invalid_image",
            Error::DegenerateRegion(_) => "degenerate_region",
            Error::FiducialNotFound => "fiducial_not_found",
            Error::EmptyFeatureMap => "empty_feature_map",
            Error::MissingTensor { .. } => "missing_tensor",
            Error::TensorFormat(_) => "tensor_format",
            Error::Extraction(_) => "extraction",
            Error::VectorDimension(..) => "vector_dimension",
            Error::LabelLength { .. } => "label_length",
            Error::MissingTruth(_) => "missing_truth",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::Config(_) => "config",
            Error::MissingStage(_) => "missing_stage",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
