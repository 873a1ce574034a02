//! Convolutional feature maps, global average pooling and the extractor
//! backends that turn masked images into global and local feature vectors.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::MaskedImage;

#[cfg(feature = "onnx")]
pub mod onnx;
pub mod export;
pub mod projection;
pub mod tensor;

pub use projection::RandomProjectionExtractor;

/// A `C x H x W` activation map stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Extraction("feature map needs at least one channel".into()));
        }
        if values.len() != channels * height * width {
            return Err(Error::Extraction(format!(
                "feature map {channels}x{height}x{width} with {} values",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Extraction(format!("non-finite activation at index {i}")));
        }
        Ok(FeatureMap {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.values[c * plane..(c + 1) * plane]
    }

    /// Reads a 3-D `FTNS` file. A leading batch dimension of 1 is accepted.
    pub fn read(path: &Path) -> Result<Self> {
        let t = tensor::read(path)?;
        match t.shape.as_slice() {
            &[c, h, w] | &[1, c, h, w] => FeatureMap::new(c, h, w, t.data),
            s => Err(Error::TensorFormat(format!(
                "expected a (C, H, W) tensor, got shape {s:?}"
            ))),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        tensor::write(path, &[self.channels, self.height, self.width], &self.values)
    }
}

/// Pooled activation vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f32>);

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn read(path: &Path) -> Result<Self> {
        let t = tensor::read(path)?;
        if t.shape.len() != 1 {
            return Err(Error::TensorFormat(format!(
                "expected a 1-D tensor, got shape {:?}",
                t.shape
            )));
        }
        Ok(FeatureVector(t.data))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        tensor::write(path, &[self.0.len()], &self.0)
    }
}

/// Per-channel spatial mean.
pub fn global_average_pool(f: &FeatureMap) -> Result<FeatureVector> {
    let plane = f.height * f.width;
    if plane == 0 {
        return Err(Error::EmptyFeatureMap);
    }
    let pooled = (0..f.channels)
        .map(|c| {
            let sum: f64 = f.channel(c).iter().map(|&v| v as f64).sum();
            (sum / plane as f64) as f32
        })
        .collect();
    Ok(FeatureVector(pooled))
}

/// Convolution layer of a VGG16-style network that immediately precedes a
/// max-pooling layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Layer(u32);

impl Layer {
    pub const ALL: [Layer; 5] = [Layer(2), Layer(4), Layer(7), Layer(10), Layer(13)];
    pub const DEFAULT: Layer = Layer(2);

    pub fn new(index: u32) -> Result<Self> {
        Layer::ALL
            .iter()
            .copied()
            .find(|l| l.0 == index)
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "layer {index} is not one of 2, 4, 7, 10, 13"
                ))
            })
    }

    pub fn index(self) -> u32 {
        self.0
    }

    /// Zero-based block position (0 for conv-2, 4 for conv-13).
    pub fn block(self) -> usize {
        Layer::ALL.iter().position(|&l| l == self).expect("validated layer")
    }

    /// Output channel count of this layer in VGG16.
    pub fn channels(self) -> usize {
        [64, 128, 256, 512, 512][self.block()]
    }
}

impl TryFrom<u32> for Layer {
    type Error = Error;

    fn try_from(v: u32) -> Result<Self> {
        Layer::new(v)
    }
}

impl From<Layer> for u32 {
    fn from(l: Layer) -> u32 {
        l.0
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Which image a feature vector summarizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Global,
    Local,
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::Global => "global",
            Scope::Local => "local",
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(Scope::Global),
            "local" => Ok(Scope::Local),
            _ => Err(Error::InvalidParameter(format!("unknown scope {s:?}"))),
        }
    }
}

/// `<image_id>.<scope>.<layer>.ftns`
pub fn tensor_file_name(image_id: &str, scope: Scope, layer: Layer) -> String {
    format!("{image_id}.{scope}.{layer}.ftns")
}

/// Identifies one image handed to an extractor.
#[derive(Clone, Copy, Debug)]
pub struct ImageKey<'a> {
    pub participant_id: &'a str,
    pub image_id: &'a str,
}

/// Produces the activation map of one conv layer for an image.
pub trait FeatureExtractor: Send + Sync {
    fn extract(&self, key: ImageKey<'_>, scope: Scope, layer: Layer, image: &MaskedImage) -> Result<FeatureMap>;
}

/// Reads activation maps written ahead of time by an external exporter.
///
/// Files are looked up as `<dir>/<participant_id>/<name>` first, then
/// `<dir>/<name>`.
#[derive(Clone, Debug)]
pub struct PrecomputedExtractor {
    dir: PathBuf,
}

impl PrecomputedExtractor {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        PrecomputedExtractor { dir: dir.into() }
    }

    pub fn path_for(&self, key: ImageKey<'_>, scope: Scope, layer: Layer) -> PathBuf {
        let name = tensor_file_name(key.image_id, scope, layer);
        let nested = self.dir.join(key.participant_id).join(&name);
        if nested.exists() {
            nested
        } else {
            self.dir.join(name)
        }
    }
}

impl FeatureExtractor for PrecomputedExtractor {
    fn extract(&self, key: ImageKey<'_>, scope: Scope, layer: Layer, _image: &MaskedImage) -> Result<FeatureMap> {
        let path = self.path_for(key, scope, layer);
        if !path.exists() {
            return Err(Error::MissingTensor {
                image_id: key.image_id.to_string(),
                scope: scope.to_string(),
                layer: layer.index(),
                path,
            });
        }
        FeatureMap::read(&path)
    }
}

/// Global and local feature vectors of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageFeatures {
    pub global: FeatureVector,
    pub local: FeatureVector,
}

/// `g = GAP(extract(masked image))`, `l = GAP(extract(local crop))`. Without
/// a crop the local vector equals the global one.
pub fn compute_features(
    extractor: &dyn FeatureExtractor,
    key: ImageKey<'_>,
    masked: &MaskedImage,
    local: Option<&MaskedImage>,
    layer: Layer,
) -> Result<ImageFeatures> {
    let global = global_average_pool(&extractor.extract(key, Scope::Global, layer, masked)?)?;
    let local = match local {
        Some(crop) => global_average_pool(&extractor.extract(key, Scope::Local, layer, crop)?)?,
        None => global.clone(),
    };
    if global.dim() != local.dim() {
        return Err(Error::VectorDimension(global.dim(), local.dim()));
    }
    Ok(ImageFeatures { global, local })
}

/// ImageNet per-channel normalization constants.
pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Bilinear resize followed by ImageNet normalization, returned as a
/// planar `3 x size x size` buffer.
pub fn normalized_planar(img: &MaskedImage, width: usize, height: usize) -> Vec<f32> {
    use image::{imageops, ImageBuffer, Rgb};
    let buf: ImageBuffer<Rgb<f32>, Vec<f32>> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, img.pixels().to_vec())
            .expect("masked image buffer size");
    let resized = if (img.width(), img.height()) == (width, height) {
        buf
    } else {
        imageops::resize(&buf, width as u32, height as u32, imageops::FilterType::Triangle)
    };
    let plane = width * height;
    let mut out = vec![0f32; 3 * plane];
    for (i, px) in resized.pixels().enumerate() {
        for c in 0..3 {
            out[c * plane + i] = (px.0[c] - IMAGENET_MEAN[c]) / IMAGENET_STD[c];
        }
    }
    out
}
