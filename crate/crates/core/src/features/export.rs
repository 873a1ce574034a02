//! Export lists and activation-map export.
//!
//! An export list has one line per image and scope:
//! `<image_id>\t<scope>\t<path>`. [`export_activation_maps`] runs any
//! [`FeatureExtractor`] over such a list and writes full `.ftns` activation
//! maps that [`PrecomputedExtractor`](super::PrecomputedExtractor) can read
//! back.

use std::path::{Path, PathBuf};

use super::{tensor_file_name, FeatureExtractor, ImageKey, Layer, Scope};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::preprocess::MaskedImage;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExportEntry {
    pub image_id: String,
    pub scope: Scope,
    pub path: PathBuf,
}

pub fn export_list_to_string(entries: &[ExportEntry]) -> String {
    entries
        .iter()
        .map(|e| format!("{}\t{}\t{}\n", e.image_id, e.scope, e.path.display()))
        .collect()
}

pub fn write_export_list(path: &Path, entries: &[ExportEntry]) -> Result<()> {
    write_atomic(path, export_list_to_string(entries).as_bytes())
}

/// Parses an export list. Relative paths resolve against `base`; blank lines
/// are skipped.
pub fn parse_export_list(text: &str, base: &Path) -> Result<Vec<ExportEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [image_id, scope, path] = fields[..] else {
            return Err(Error::MalformedRow {
                row: i + 1,
                message: format!("expected 3 tab-separated fields, got {}", fields.len()),
            });
        };
        let scope = scope.parse().map_err(|e: Error| Error::MalformedRow {
            row: i + 1,
            message: e.to_string(),
        })?;
        if image_id.is_empty() || path.is_empty() {
            return Err(Error::MalformedRow {
                row: i + 1,
                message: "empty field".into(),
            });
        }
        let path = PathBuf::from(path);
        out.push(ExportEntry {
            image_id: image_id.to_string(),
            scope,
            path: if path.is_relative() { base.join(path) } else { path },
        });
    }
    Ok(out)
}

pub fn read_export_list(path: &Path) -> Result<Vec<ExportEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_export_list(&text, path.parent().unwrap_or(Path::new("")))
}

/// Writes `<out_dir>/<image_id>.<scope>.<layer>.ftns` for every entry and
/// layer. Returns the written paths in list order, layers innermost.
pub fn export_activation_maps(
    extractor: &dyn FeatureExtractor,
    participant_id: &str,
    entries: &[ExportEntry],
    layers: &[Layer],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::with_capacity(entries.len() * layers.len());
    for e in entries {
        let img = MaskedImage::open_png(&e.path)?;
        let key = ImageKey {
            participant_id,
            image_id: &e.image_id,
        };
        for &layer in layers {
            let map = extractor.extract(key, e.scope, layer, &img)?;
            let path = out_dir.join(tensor_file_name(&e.image_id, e.scope, layer));
            map.write(&path)?;
            written.push(path);
        }
    }
    Ok(written)
}
