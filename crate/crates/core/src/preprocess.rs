//! Saliency masking, connected-component analysis, FAST-9 interest points,
//! fiducial-marker localization and local-region cropping.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::write_png;
use crate::model::{BinarySaliencyMask, Image};

/// Default FAST intensity threshold on the 0..255 gray scale.
pub const DEFAULT_FAST_THRESHOLD: f32 = 20.0;
/// Default minimum component area as a fraction of the image pixel count.
pub const DEFAULT_MIN_COMPONENT_FRACTION: f64 = 0.0005;
/// Default scale factor applied to the marker bbox to obtain the local region.
pub const DEFAULT_EXPANSION: f64 = 2.0;

/// Minimum contiguous arc length for the FAST-9 segment test.
const FAST_ARC: usize = 9;

/// Bresenham circle of radius 3, clockwise from 12 o'clock.
const CIRCLE: [(i32, i32); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

/// Inclusive pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub min_x: usize,
    pub min_y: usize,
    pub max_x: usize,
    pub max_y: usize,
}

impl BBox {
    pub fn new(min_x: usize, min_y: usize, max_x: usize, max_y: usize) -> Self {
        BBox {
            min_x,
            min_y,
            max_x,
            max_y,
        }
    }

    pub fn width(&self) -> usize {
        self.max_x + 1 - self.min_x
    }

    pub fn height(&self) -> usize {
        self.max_y + 1 - self.min_y
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.min_x..=self.max_x).contains(&x) && (self.min_y..=self.max_y).contains(&y)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let ix0 = self.min_x.max(other.min_x);
        let iy0 = self.min_y.max(other.min_y);
        let ix1 = self.max_x.min(other.max_x);
        let iy1 = self.max_y.min(other.max_y);
        if ix1 < ix0 || iy1 < iy0 {
            return 0.0;
        }
        let inter = ((ix1 - ix0 + 1) * (iy1 - iy0 + 1)) as f64;
        inter / (self.area() as f64 + other.area() as f64 - inter)
    }
}

/// Real-valued RGB image with salient pixels zeroed.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedImage {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl MaskedImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height * 3 {
            return Err(Error::InvalidImage(format!(
                "masked image {width}x{height} with {} values",
                pixels.len()
            )));
        }
        Ok(MaskedImage {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Writes an 8-bit PNG. Lossless for images produced by [`mask_salient`]
    /// from 8-bit sources.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self
            .pixels
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        write_png(path, &bytes, self.width, self.height, image::ExtendedColorType::Rgb8)
    }

    pub fn open_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let pixels = rgb.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
        MaskedImage::new(w as usize, h as usize, pixels)
    }
}

/// Zeroes every salient pixel and converts the rest to unit-interval reals.
pub fn mask_salient(img: &Image, mask: &BinarySaliencyMask) -> Result<MaskedImage> {
    if img.dimensions() != mask.dimensions() {
        return Err(Error::DimensionMismatch {
            expected: img.dimensions(),
            actual: mask.dimensions(),
        });
    }
    let pixels = img
        .pixels()
        .chunks_exact(3)
        .zip(mask.values())
        .flat_map(|(rgb, &s)| {
            let keep = (1 - s) as f32;
            [
                keep * (rgb[0] as f32 / 255.0),
                keep * (rgb[1] as f32 / 255.0),
                keep * (rgb[2] as f32 / 255.0),
            ]
        })
        .collect();
    MaskedImage::new(img.width(), img.height(), pixels)
}

/// Idempotent re-masking of an already masked image.
pub fn remask(img: &MaskedImage, mask: &BinarySaliencyMask) -> Result<MaskedImage> {
    if (img.width, img.height) != mask.dimensions() {
        return Err(Error::DimensionMismatch {
            expected: (img.width, img.height),
            actual: mask.dimensions(),
        });
    }
    let pixels = img
        .pixels
        .chunks_exact(3)
        .zip(mask.values())
        .flat_map(|(rgb, &s)| {
            let keep = (1 - s) as f32;
            [keep * rgb[0], keep * rgb[1], keep * rgb[2]]
        })
        .collect();
    MaskedImage::new(img.width, img.height, pixels)
}

/// A maximal 8-connected region of salient pixels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectedComponent {
    pub id: usize,
    pub pixel_count: usize,
    pub bbox: BBox,
    #[serde(skip)]
    pub pixels: Vec<(usize, usize)>,
}

/// Smallest area kept by [`connected_components`] for a given image size.
pub fn min_component_area(width: usize, height: usize, fraction: f64) -> usize {
    ((width * height) as f64 * fraction).ceil() as usize
}

/// Labels 8-connected salient regions. Ids follow raster order of each
/// region's first pixel; regions with fewer than `min_area` pixels are
/// dropped. Output is sorted by descending size, then ascending id.
pub fn connected_components(mask: &BinarySaliencyMask, min_area: usize) -> Vec<ConnectedComponent> {
    let (w, h) = mask.dimensions();
    let mut visited = vec![false; w * h];
    let mut out = Vec::new();
    let mut next_id = 0;
    let mut queue = VecDeque::new();

    for start in 0..w * h {
        if visited[start] || mask.values()[start] == 0 {
            continue;
        }
        visited[start] = true;
        queue.push_back(start);
        let mut pixels = Vec::new();
        let mut bbox = BBox::new(start % w, start / w, start % w, start / w);
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            pixels.push((x, y));
            bbox.min_x = bbox.min_x.min(x);
            bbox.max_x = bbox.max_x.max(x);
            bbox.min_y = bbox.min_y.min(y);
            bbox.max_y = bbox.max_y.max(y);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let nx = x as i64 + dx;
                    let ny = y as i64 + dy;
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if !visited[j] && mask.values()[j] == 1 {
                        visited[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        let id = next_id;
        next_id += 1;
        if pixels.len() >= min_area {
            out.push(ConnectedComponent {
                id,
                pixel_count: pixels.len(),
                bbox,
                pixels,
            });
        }
    }
    out.sort_by(|a, b| b.pixel_count.cmp(&a.pixel_count).then(a.id.cmp(&b.id)));
    out
}

/// A FAST corner.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterestPoint {
    pub x: usize,
    pub y: usize,
    pub score: f32,
}

/// Gray values of a window of the image, padded by the circle radius.
struct LumaWindow {
    x0: usize,
    y0: usize,
    w: usize,
    values: Vec<f32>,
}

impl LumaWindow {
    fn new(img: &Image, x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        let w = x1 + 1 - x0;
        let mut values = Vec::with_capacity(w * (y1 + 1 - y0));
        for y in y0..=y1 {
            for x in x0..=x1 {
                values.push(img.luma(x, y));
            }
        }
        LumaWindow { x0, y0, w, values }
    }

    fn at(&self, x: usize, y: usize) -> f32 {
        self.values[(y - self.y0) * self.w + (x - self.x0)]
    }
}

/// FAST-9 segment test. Returns the corner score when the pixel qualifies.
fn segment_test(win: &LumaWindow, x: usize, y: usize, threshold: f32) -> Option<f32> {
    let centre = win.at(x, y);
    let mut ring = [0i8; 16];
    let mut diffs = [0f32; 16];
    for (k, &(dx, dy)) in CIRCLE.iter().enumerate() {
        let v = win.at((x as i32 + dx) as usize, (y as i32 + dy) as usize);
        diffs[k] = (v - centre).abs();
        ring[k] = if v > centre + threshold {
            1
        } else if v < centre - threshold {
            -1
        } else {
            0
        };
    }
    for sign in [1i8, -1] {
        let mut run = 0;
        let mut best = 0;
        // wrap around once so arcs crossing index 0 are counted
        for k in 0..32 {
            if ring[k % 16] == sign {
                run += 1;
                best = best.max(run);
            } else {
                run = 0;
            }
        }
        if best.min(16) >= FAST_ARC {
            let score = (0..16)
                .filter(|&k| ring[k] == sign)
                .map(|k| diffs[k])
                .sum();
            return Some(score);
        }
    }
    None
}

/// FAST-9 corners with 3x3 non-maximum suppression on the gray conversion of
/// `img` inside `region`. Candidates closer than 3 pixels to the image border
/// are skipped; ring samples may fall outside `region`.
pub fn detect_interest_points(img: &Image, region: BBox, threshold: f32) -> Result<Vec<InterestPoint>> {
    let (w, h) = img.dimensions();
    if region.max_x < region.min_x || region.max_y < region.min_y {
        return Err(Error::DegenerateRegion(format!("{region:?} has zero area")));
    }
    if region.max_x >= w || region.max_y >= h {
        return Err(Error::DegenerateRegion(format!(
            "{region:?} exceeds {w}x{h} image"
        )));
    }
    let cx0 = region.min_x.max(3);
    let cy0 = region.min_y.max(3);
    let cx1 = region.max_x.min(w.saturating_sub(4));
    let cy1 = region.max_y.min(h.saturating_sub(4));
    if cx1 < cx0 || cy1 < cy0 {
        return Ok(Vec::new());
    }
    let win = LumaWindow::new(img, cx0 - 3, cy0 - 3, cx1 + 3, cy1 + 3);
    let cw = cx1 + 1 - cx0;
    let ch = cy1 + 1 - cy0;
    let mut scores = vec![0f32; cw * ch];
    for y in cy0..=cy1 {
        for x in cx0..=cx1 {
            if let Some(s) = segment_test(&win, x, y, threshold) {
                scores[(y - cy0) * cw + (x - cx0)] = s;
            }
        }
    }

    let mut out = Vec::new();
    for j in 0..ch {
        for i in 0..cw {
            let s = scores[j * cw + i];
            if s <= 0.0 {
                continue;
            }
            let mut keep = true;
            'nms: for dj in -1i64..=1 {
                for di in -1i64..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let (ni, nj) = (i as i64 + di, j as i64 + dj);
                    if ni < 0 || nj < 0 || ni >= cw as i64 || nj >= ch as i64 {
                        continue;
                    }
                    let n = scores[nj as usize * cw + ni as usize];
                    // equal scores: the earlier pixel in raster order wins
                    let earlier = (dj, di) < (0, 0);
                    if n > s || (n == s && earlier) {
                        keep = false;
                        break 'nms;
                    }
                }
            }
            if keep {
                out.push(InterestPoint {
                    x: cx0 + i,
                    y: cy0 + j,
                    score: s,
                });
            }
        }
    }
    Ok(out)
}

/// The component chosen as the fiducial marker.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FiducialLocation {
    pub component_id: usize,
    pub bbox: BBox,
    pub interest_point_count: usize,
}

/// Interest-point count inside each component's bbox, in input order.
pub fn interest_counts(img: &Image, components: &[ConnectedComponent], threshold: f32) -> Result<Vec<usize>> {
    components
        .iter()
        .map(|c| detect_interest_points(img, c.bbox, threshold).map(|p| p.len()))
        .collect()
}

/// Picks the component with the most interest points; ties go to the larger
/// component, then the smaller id.
pub fn locate_fiducial(img: &Image, components: &[ConnectedComponent], threshold: f32) -> Result<FiducialLocation> {
    let counts = interest_counts(img, components, threshold)?;
    select_fiducial(components, &counts)
}

/// Selection step of [`locate_fiducial`] given precomputed counts.
pub fn select_fiducial(components: &[ConnectedComponent], counts: &[usize]) -> Result<FiducialLocation> {
    components
        .iter()
        .zip(counts)
        .max_by(|(a, ca), (b, cb)| {
            ca.cmp(cb)
                .then(a.pixel_count.cmp(&b.pixel_count))
                .then(b.id.cmp(&a.id))
        })
        .map(|(c, &n)| FiducialLocation {
            component_id: c.id,
            bbox: c.bbox,
            interest_point_count: n,
        })
        .ok_or(Error::FiducialNotFound)
}

/// Scales `bbox` about its centre by `expansion` per side and clips it to a
/// `width` x `height` image.
pub fn expanded_bbox(bbox: BBox, expansion: f64, width: usize, height: usize) -> BBox {
    let grow = |lo: usize, len: usize, limit: usize| {
        let target = ((len as f64 * expansion).floor() as usize).max(len);
        let extra = target - len;
        let before = extra / 2;
        let start = lo as i64 - before as i64;
        let end = start + target as i64 - 1;
        (start.max(0) as usize, end.min(limit as i64 - 1) as usize)
    };
    let (min_x, max_x) = grow(bbox.min_x, bbox.width(), width);
    let (min_y, max_y) = grow(bbox.min_y, bbox.height(), height);
    BBox::new(min_x, min_y, max_x, max_y)
}

/// Extracts the region around the marker from the masked image.
pub fn crop_local_region(masked: &MaskedImage, fm: &FiducialLocation, expansion: f64) -> Result<MaskedImage> {
    if !(expansion >= 1.0) || !expansion.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "expansion must be >= 1, got {expansion}"
        )));
    }
    let b = expanded_bbox(fm.bbox, expansion, masked.width, masked.height);
    let mut pixels = Vec::with_capacity(b.area() * 3);
    for y in b.min_y..=b.max_y {
        let row = (y * masked.width + b.min_x) * 3;
        pixels.extend_from_slice(&masked.pixels[row..row + b.width() * 3]);
    }
    MaskedImage::new(b.width(), b.height(), pixels)
}

/// Tunables for per-image preprocessing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessParams {
    pub fast_threshold: f32,
    pub min_component_fraction: f64,
    pub expansion: f64,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        PreprocessParams {
            fast_threshold: DEFAULT_FAST_THRESHOLD,
            min_component_fraction: DEFAULT_MIN_COMPONENT_FRACTION,
            expansion: DEFAULT_EXPANSION,
        }
    }
}

/// Row of the per-image component table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentSummary {
    pub id: usize,
    pub pixel_count: usize,
    pub bbox: BBox,
    pub interest_points: usize,
}

/// Everything preprocessing produces for one image.
#[derive(Clone, Debug)]
pub struct PreprocessedImage {
    pub masked: MaskedImage,
    /// `None` when no marker was found; the local feature then falls back to
    /// the global one.
    pub local: Option<MaskedImage>,
    pub fiducial: Option<FiducialLocation>,
    pub components: Vec<ComponentSummary>,
}

pub fn preprocess_image(img: &Image, mask: &BinarySaliencyMask, params: &PreprocessParams) -> Result<PreprocessedImage> {
    let masked = mask_salient(img, mask)?;
    let min_area = min_component_area(img.width(), img.height(), params.min_component_fraction);
    let comps = connected_components(mask, min_area);
    let counts = interest_counts(img, &comps, params.fast_threshold)?;
    let components = comps
        .iter()
        .zip(&counts)
        .map(|(c, &n)| ComponentSummary {
            id: c.id,
            pixel_count: c.pixel_count,
            bbox: c.bbox,
            interest_points: n,
        })
        .collect();
    let (fiducial, local) = match select_fiducial(&comps, &counts) {
        Ok(fm) => {
            let crop = crop_local_region(&masked, &fm, params.expansion)?;
            (Some(fm), Some(crop))
        }
        Err(Error::FiducialNotFound) => (None, None),
        Err(e) => return Err(e),
    };
    Ok(PreprocessedImage {
        masked,
        local,
        fiducial,
        components,
    })
}
