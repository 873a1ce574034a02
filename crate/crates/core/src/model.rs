//! Domain types for eating-occasion datasets: images, saliency masks,
//! manifest records and participant-level splits.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::write_png;

/// Minimum accepted image side length in pixels.
pub const MIN_IMAGE_SIDE: usize = 32;

/// Exact header expected at the top of a manifest file.
pub const MANIFEST_HEADER: [&str; 5] = [
    "participant_id",
    "image_id",
    "image_path",
    "mask_path",
    "env_label",
];

/// An 8-bit RGB image stored row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width < MIN_IMAGE_SIDE || height < MIN_IMAGE_SIDE {
            return Err(Error::InvalidImage(format!(
                "{width}x{height} is smaller than {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}"
            )));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::InvalidImage(format!(
                "expected {} bytes, got {}",
                width * height * 3,
                pixels.len()
            )));
        }
        Ok(Image {
            width,
            height,
            pixels,
        })
    }

    pub fn open(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Image::new(w as usize, h as usize, rgb.into_raw())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Pixel as unit-interval reals.
    pub fn pixel_unit(&self, x: usize, y: usize) -> [f32; 3] {
        let p = self.pixel(x, y);
        [
            p[0] as f32 / 255.0,
            p[1] as f32 / 255.0,
            p[2] as f32 / 255.0,
        ]
    }

    /// Luma on the 0..255 scale using 0.299R + 0.587G + 0.114B.
    pub fn luma(&self, x: usize, y: usize) -> f32 {
        let [r, g, b] = self.pixel(x, y);
        0.299 * r as f32 + 0.587 * g as f32 + 0.114 * b as f32
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        write_png(path, &self.pixels, self.width, self.height, image::ExtendedColorType::Rgb8)
    }
}

/// Per-pixel binary saliency indicator; 1 marks a salient pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinarySaliencyMask {
    width: usize,
    height: usize,
    values: Vec<u8>,
}

impl BinarySaliencyMask {
    pub fn new(width: usize, height: usize, values: Vec<u8>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "mask expects {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(Error::InvalidImage("mask values must be 0 or 1".into()));
        }
        Ok(BinarySaliencyMask {
            width,
            height,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        BinarySaliencyMask {
            width,
            height,
            values: vec![0; width * height],
        }
    }

    /// Thresholds an 8-bit gray buffer: values >= 128 are salient.
    pub fn from_gray(width: usize, height: usize, gray: &[u8]) -> Result<Self> {
        let values = gray.iter().map(|&g| u8::from(g >= 128)).collect();
        Self::new(width, height, values)
    }

    pub fn open(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let gray = img.to_luma8();
        let (w, h) = gray.dimensions();
        Self::from_gray(w as usize, h as usize, gray.as_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let gray: Vec<u8> = self.values.iter().map(|&v| v * 255).collect();
        write_png(path, &gray, self.width, self.height, image::ExtendedColorType::L8)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn is_salient(&self, x: usize, y: usize) -> bool {
        self.values[y * self.width + x] == 1
    }

    pub fn set(&mut self, x: usize, y: usize, salient: bool) {
        self.values[y * self.width + x] = u8::from(salient);
    }

    pub fn salient_count(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }
}

/// One captured image with its saliency mask and optional ground truth.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EatingOccasionRecord {
    pub participant_id: String,
    pub image_id: String,
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
    pub env_label: Option<String>,
}

/// An ordered list of records plus a participant index.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Dataset {
    records: Vec<EatingOccasionRecord>,
    participants: BTreeMap<String, Vec<usize>>,
}

impl Dataset {
    /// Builds a dataset, rejecting duplicate (participant_id, image_id) keys.
    pub fn from_records(records: Vec<EatingOccasionRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut participants: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            if !seen.insert((r.participant_id.as_str(), r.image_id.as_str())) {
                return Err(Error::DuplicateRecord {
                    participant_id: r.participant_id.clone(),
                    image_id: r.image_id.clone(),
                });
            }
            participants
                .entry(r.participant_id.clone())
                .or_default()
                .push(i);
        }
        Ok(Dataset {
            records,
            participants,
        })
    }

    pub fn records(&self) -> &[EatingOccasionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Participant ids in sorted order.
    pub fn participant_ids(&self) -> impl Iterator<Item = &str> {
        self.participants.keys().map(String::as_str)
    }

    pub fn participant_count(&self) -> usize {
        self.participants.len()
    }

    /// Records of one participant in manifest order.
    pub fn participant_records(&self, participant_id: &str) -> Vec<&EatingOccasionRecord> {
        self.participants
            .get(participant_id)
            .map(|idx| idx.iter().map(|&i| &self.records[i]).collect())
            .unwrap_or_default()
    }

    pub fn contains_participant(&self, participant_id: &str) -> bool {
        self.participants.contains_key(participant_id)
    }
}

/// Reads a manifest CSV. Relative image and mask paths resolve against the
/// manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_manifest(&text, base)
}

/// Parses manifest text; `base` anchors relative paths.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::MalformedRow {
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(Error::MalformedRow {
            row: 1,
            message: format!("expected header {}", MANIFEST_HEADER.join(",")),
        });
    }

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        // header is row 1
        let row_no = i + 2;
        let row = row.map_err(|e| Error::MalformedRow {
            row: row_no,
            message: e.to_string(),
        })?;
        if row.len() != MANIFEST_HEADER.len() {
            return Err(Error::MalformedRow {
                row: row_no,
                message: format!("expected 5 fields, got {}", row.len()),
            });
        }
        let field = |k: usize| row.get(k).unwrap_or("").to_string();
        for (k, name) in MANIFEST_HEADER.iter().enumerate().take(4) {
            if row.get(k).unwrap_or("").is_empty() {
                return Err(Error::MalformedRow {
                    row: row_no,
                    message: format!("empty {name}"),
                });
            }
        }
        let resolve = |p: String| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let label = field(4);
        records.push(EatingOccasionRecord {
            participant_id: field(0),
            image_id: field(1),
            image_path: resolve(field(2)),
            mask_path: resolve(field(3)),
            env_label: (!label.is_empty()).then_some(label),
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyManifest);
    }
    Dataset::from_records(records)
}

/// Serializes records back to manifest text. Paths under `base` are written
/// relative to it.
pub fn manifest_to_string(d: &Dataset, base: &Path) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(MANIFEST_HEADER).expect("in-memory write");
    for r in d.records() {
        let rel = |p: &Path| {
            p.strip_prefix(base)
                .unwrap_or(p)
                .to_string_lossy()
                .into_owned()
        };
        w.write_record([
            r.participant_id.as_str(),
            r.image_id.as_str(),
            &rel(&r.image_path),
            &rel(&r.mask_path),
            r.env_label.as_deref().unwrap_or(""),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

/// A problem found by [`validate_dataset`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Violation {
    UnreadableImage { image_id: String, message: String },
    UnreadableMask { image_id: String, message: String },
    DimensionMismatch {
        image_id: String,
        image: (usize, usize),
        mask: (usize, usize),
    },
    ParticipantTooSmall { participant_id: String, records: usize },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::UnreadableImage { image_id, message } => {
                write!(f, "unreadable image {image_id}: {message}")
            }
            Violation::UnreadableMask { image_id, message } => {
                write!(f, "unreadable mask {image_id}: {message}")
            }
            Violation::DimensionMismatch {
                image_id,
                image,
                mask,
            } => write!(
                f,
                "dimension mismatch for {image_id}: image {}x{}, mask {}x{}",
                image.0, image.1, mask.0, mask.1
            ),
            Violation::ParticipantTooSmall {
                participant_id,
                records,
            } => write!(
                f,
                "participant too small: {participant_id} has {records} record(s)"
            ),
        }
    }
}

/// Checks that every image and mask opens with matching dimensions and every
/// participant has at least two records.
pub fn validate_dataset(d: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    for r in d.records() {
        let img = Image::open(&r.image_path);
        let mask = BinarySaliencyMask::open(&r.mask_path);
        match (&img, &mask) {
            (Err(e), _) => out.push(Violation::UnreadableImage {
                image_id: r.image_id.clone(),
                message: e.to_string(),
            }),
            (_, Err(e)) => out.push(Violation::UnreadableMask {
                image_id: r.image_id.clone(),
                message: e.to_string(),
            }),
            (Ok(i), Ok(m)) if i.dimensions() != m.dimensions() => {
                out.push(Violation::DimensionMismatch {
                    image_id: r.image_id.clone(),
                    image: i.dimensions(),
                    mask: m.dimensions(),
                })
            }
            _ => {}
        }
    }
    for (pid, idx) in &d.participants {
        if idx.len() < 2 {
            out.push(Violation::ParticipantTooSmall {
                participant_id: pid.clone(),
                records: idx.len(),
            });
        }
    }
    out
}

/// Validation and test parts of a dataset with disjoint participants.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub validation: Dataset,
    pub test: Dataset,
}

pub fn split_by_participants(d: &Dataset, validation_ids: &BTreeSet<String>) -> Result<DatasetSplit> {
    if let Some(unknown) = validation_ids.iter().find(|p| !d.contains_participant(p)) {
        return Err(Error::UnknownParticipant(unknown.clone()));
    }
    let (val, test): (Vec<_>, Vec<_>) = d
        .records()
        .iter()
        .cloned()
        .partition(|r| validation_ids.contains(&r.participant_id));
    Ok(DatasetSplit {
        validation: Dataset::from_records(val)?,
        test: Dataset::from_records(test)?,
    })
}
