//! Deterministic synthetic eating scenes with known environments.
//!
//! A scene is a wall texture above a table surface, a colored 6x6
//! checkerboard marker resting on the surface, and one to three smooth
//! elliptical food blobs. Everything outside the marker and blobs is fixed
//! per environment apart from a small per-pixel jitter.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::{create_dir_all, write_atomic};
use crate::model::{manifest_to_string, BinarySaliencyMask, Dataset, EatingOccasionRecord, Image};
use crate::preprocess::{expanded_bbox, BBox, DEFAULT_EXPANSION};

pub const SCENE_SIZE: usize = 256;
/// Per-channel jitter bound; two scenes of one environment differ by at most
/// twice this per pixel.
pub const JITTER: i32 = 5;
pub const MARKER_CELLS: usize = 6;
/// Minimum separation of environment mean colours in at least one channel.
pub const MIN_ENV_SEPARATION: f64 = 40.0;
/// Minimum per-channel difference of the part that differs between two
/// consecutive environments sharing a wall or a surface.
pub const PARTNER_GAP: f64 = 100.0;
/// Minimum per-channel difference between surfaces that are not shared.
pub const SURFACE_GAP: f64 = 50.0;
/// Range of the vertical radius of a food blob.
pub const BLOB_RADIUS: (f64, f64) = (20.0, 56.0);
/// Range of the first table-surface row.
pub const HORIZON_MIN: usize = 120;
pub const HORIZON_MAX: usize = 150;
/// Smallest average number of images per environment in [`random_study`].
pub const MIN_IMAGES_PER_ENVIRONMENT: usize = 4;

/// Four marker colours; every 2x2 window of cells holds all four, so each
/// interior junction has one cell clearly brighter and one clearly darker
/// than the rest.
const MARKER_COLORS: [[u8; 3]; 4] = [[235, 235, 235], [200, 30, 30], [20, 30, 140], [230, 200, 30]];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Texture {
    Solid { color: [u8; 3] },
    Stripes { a: [u8; 3], b: [u8; 3], period: usize, vertical: bool },
    /// Smooth value noise around `color` with the given amplitude.
    Noise { color: [u8; 3], amplitude: u8, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub env_id: String,
    pub wall: Texture,
    pub surface: [u8; 3],
    /// First row of the table surface.
    pub horizon: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParticipantSpec {
    pub participant_id: String,
    pub n_images: usize,
    pub environments: Vec<EnvironmentSpec>,
    pub seed: u64,
}

impl SynthParticipantSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_images < 2 {
            return Err(Error::InvalidParameter(format!(
                "participant {} needs at least 2 images",
                self.participant_id
            )));
        }
        if self.environments.is_empty() || self.environments.len() > self.n_images {
            return Err(Error::InvalidParameter(format!(
                "participant {} has {} environments for {} images",
                self.participant_id,
                self.environments.len(),
                self.n_images
            )));
        }
        Ok(())
    }
}

/// One rendered scene and the true marker box.
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub image: Image,
    pub mask: BinarySaliencyMask,
    pub fiducial: BBox,
}

impl Texture {
    /// Renders a full `SCENE_SIZE`-square plane of this texture.
    fn render(&self) -> Vec<[u8; 3]> {
        let mut out = Vec::with_capacity(SCENE_SIZE * SCENE_SIZE);
        let noise_field = match self {
            Texture::Noise { seed, .. } => {
                let mut f = Vec::with_capacity(SCENE_SIZE * SCENE_SIZE);
                const CELL: usize = 32;
                let grid = SCENE_SIZE / CELL + 2;
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let lattice: Vec<f64> = (0..grid * grid).map(|_| rng.random_range(-1.0..1.0)).collect();
                for y in 0..SCENE_SIZE {
                    for x in 0..SCENE_SIZE {
                        let (gx, gy) = (x / CELL, y / CELL);
                        let fx = (x % CELL) as f64 / CELL as f64;
                        let fy = (y % CELL) as f64 / CELL as f64;
                        let at = |i: usize, j: usize| lattice[j * grid + i];
                        let top = at(gx, gy) * (1.0 - fx) + at(gx + 1, gy) * fx;
                        let bottom = at(gx, gy + 1) * (1.0 - fx) + at(gx + 1, gy + 1) * fx;
                        f.push(top * (1.0 - fy) + bottom * fy);
                    }
                }
                f
            }
            _ => Vec::new(),
        };
        for y in 0..SCENE_SIZE {
            for x in 0..SCENE_SIZE {
                out.push(match self {
                    Texture::Solid { color } => *color,
                    Texture::Stripes { a, b, period, vertical } => {
                        let t = if *vertical { x } else { y };
                        if (t / period.max(&1)) % 2 == 0 {
                            *a
                        } else {
                            *b
                        }
                    }
                    Texture::Noise { color, amplitude, .. } => {
                        let n = noise_field[y * SCENE_SIZE + x] * *amplitude as f64;
                        color.map(|c| (c as f64 + n).round().clamp(0.0, 255.0) as u8)
                    }
                });
            }
        }
        out
    }
}

impl Texture {
    pub fn mean_rgb(&self) -> [f64; 3] {
        let plane = self.render();
        let mut sum = [0.0; 3];
        for p in &plane {
            for c in 0..3 {
                sum[c] += p[c] as f64;
            }
        }
        sum.map(|s| s / plane.len() as f64)
    }
}

impl EnvironmentSpec {
    /// Background without objects or jitter.
    pub fn render_background(&self) -> Vec<[u8; 3]> {
        let mut plane = self.wall.render();
        for y in self.horizon..SCENE_SIZE {
            for x in 0..SCENE_SIZE {
                plane[y * SCENE_SIZE + x] = self.surface;
            }
        }
        plane
    }

    pub fn mean_rgb(&self) -> [f64; 3] {
        let plane = self.render_background();
        let mut sum = [0.0; 3];
        for p in &plane {
            for c in 0..3 {
                sum[c] += p[c] as f64;
            }
        }
        sum.map(|s| s / plane.len() as f64)
    }
}

/// True when the two environments' mean colours differ by at least
/// [`MIN_ENV_SEPARATION`] in some channel.
pub fn separated(a: &EnvironmentSpec, b: &EnvironmentSpec) -> bool {
    means_apart(a.mean_rgb(), b.mean_rgb(), MIN_ENV_SEPARATION)
}

fn means_apart(a: [f64; 3], b: [f64; 3], min: f64) -> bool {
    (0..3).any(|c| (a[c] - b[c]).abs() >= min)
}

struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    color: [u8; 3],
}

impl Ellipse {
    fn contains(&self, x: usize, y: usize) -> bool {
        let dx = (x as f64 - self.cx) / self.rx;
        let dy = (y as f64 - self.cy) / self.ry;
        dx * dx + dy * dy <= 1.0
    }

    fn bbox(&self) -> BBox {
        BBox::new(
            (self.cx - self.rx).floor().max(0.0) as usize,
            (self.cy - self.ry).floor().max(0.0) as usize,
            ((self.cx + self.rx).ceil() as usize).min(SCENE_SIZE - 1),
            ((self.cy + self.ry).ceil() as usize).min(SCENE_SIZE - 1),
        )
    }
}

fn boxes_apart(a: &BBox, b: &BBox, margin: usize) -> bool {
    a.max_x + margin < b.min_x
        || b.max_x + margin < a.min_x
        || a.max_y + margin < b.min_y
        || b.max_y + margin < a.min_y
}

/// Renders a 256x256 scene of `env`. The same `(env, seed)` always yields
/// the same pixels.
pub fn generate_scene(env: &EnvironmentSpec, seed: u64) -> SyntheticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background = env.render_background();

    // marker on the table surface, low enough that its expanded box stays
    // below the horizon
    let cell = rng.random_range(7..=10usize);
    let side = cell * MARKER_CELLS;
    let fx = rng.random_range(8..SCENE_SIZE - side - 8);
    let fy = rng.random_range(env.horizon + side / 2 + 4..=SCENE_SIZE - side - 4);
    let fiducial = BBox::new(fx, fy, fx + side - 1, fy + side - 1);

    // food stays clear of the region a local crop around the marker covers
    let keep_clear = expanded_bbox(fiducial, DEFAULT_EXPANSION, SCENE_SIZE, SCENE_SIZE);
    let n_blobs = rng.random_range(1..=3);
    let mut blobs: Vec<Ellipse> = Vec::new();
    let mut attempts = 0;
    while blobs.len() < n_blobs && attempts < 200 {
        attempts += 1;
        let ry = rng.random_range(BLOB_RADIUS.0..BLOB_RADIUS.1);
        let rx = (ry * rng.random_range(1.0..2.0f64)).min(2.0 * BLOB_RADIUS.1);
        let cx = rng.random_range(rx + 4.0..SCENE_SIZE as f64 - rx - 4.0);
        let cy = rng.random_range((env.horizon as f64 - 50.0).max(ry + 4.0)..SCENE_SIZE as f64 - ry - 4.0);
        let color = [
            rng.random_range(60..=240u8),
            rng.random_range(40..=220u8),
            rng.random_range(20..=160u8),
        ];
        let e = Ellipse { cx, cy, rx, ry, color };
        let b = e.bbox();
        if boxes_apart(&b, &keep_clear, 2) && blobs.iter().all(|o| boxes_apart(&b, &o.bbox(), 6)) {
            blobs.push(e);
        }
    }
    if blobs.is_empty() {
        // the marker and its crop always sit below the top-left corner
        let ry = 14.0;
        blobs.push(Ellipse {
            cx: ry + 5.0,
            cy: ry + 5.0,
            rx: ry,
            ry,
            color: [180, 120, 60],
        });
    }

    let mut pixels = Vec::with_capacity(SCENE_SIZE * SCENE_SIZE * 3);
    let mut mask = BinarySaliencyMask::zeros(SCENE_SIZE, SCENE_SIZE);
    for y in 0..SCENE_SIZE {
        for x in 0..SCENE_SIZE {
            let mut px = background[y * SCENE_SIZE + x];
            for c in px.iter_mut() {
                *c = (*c as i32 + rng.random_range(-JITTER..=JITTER)).clamp(0, 255) as u8;
            }
            if fiducial.contains(x, y) {
                let (i, j) = ((x - fx) / cell, (y - fy) / cell);
                px = MARKER_COLORS[2 * (j % 2) + (i % 2)];
                mask.set(x, y, true);
            } else if let Some(e) = blobs.iter().find(|e| e.contains(x, y)) {
                // gentle radial shading keeps the blob free of corners
                let dx = (x as f64 - e.cx) / e.rx;
                let dy = (y as f64 - e.cy) / e.ry;
                let shade = 1.0 - 0.15 * (dx * dx + dy * dy);
                px = e.color.map(|c| (c as f64 * shade).round() as u8);
                mask.set(x, y, true);
            }
            pixels.extend_from_slice(&px);
        }
    }
    SyntheticScene {
        image: Image::new(SCENE_SIZE, SCENE_SIZE, pixels).expect("scene size"),
        mask,
        fiducial,
    }
}

fn random_color(rng: &mut ChaCha8Rng) -> [u8; 3] {
    [
        rng.random_range(40..=220u8),
        rng.random_range(40..=220u8),
        rng.random_range(40..=220u8),
    ]
}

fn random_wall(rng: &mut ChaCha8Rng) -> Texture {
    let base = random_color(rng);
    match rng.random_range(0..3) {
        0 => Texture::Solid { color: base },
        1 => {
            let shift = rng.random_range(20..=45i32) * if rng.random_bool(0.5) { 1 } else { -1 };
            let b = base.map(|c| (c as i32 + shift).clamp(0, 255) as u8);
            Texture::Stripes {
                a: base,
                b,
                period: rng.random_range(6..=20),
                vertical: rng.random_bool(0.5),
            }
        }
        _ => Texture::Noise {
            color: base,
            amplitude: rng.random_range(10..=30),
            seed: rng.random(),
        },
    }
}

/// How an environment relates to the one drawn before it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Relation {
    Fresh,
    /// Same surface, clearly different wall.
    SharedSurface,
    /// Same wall, clearly different surface.
    SharedWall,
}

fn channel_gap(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|c| (a[c] - b[c]).abs()).fold(0.0, f64::max)
}

fn as_f64(c: [u8; 3]) -> [f64; 3] {
    c.map(f64::from)
}

/// Draws `count` environments. Consecutive environments may share a table
/// surface (then their walls differ a lot) or a wall (then their surfaces
/// differ a lot), so neither the surface nor the whole scene alone tells
/// every pair apart. Every pair of environments satisfies [`separated`].
pub fn random_environments(count: usize, seed: u64) -> Vec<EnvironmentSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut envs: Vec<EnvironmentSpec> = Vec::with_capacity(count);
    let mut means: Vec<[f64; 3]> = Vec::with_capacity(count);
    while envs.len() < count {
        let k = envs.len();
        let relation = match (k, rng.random_range(0..3)) {
            (0, _) | (_, 0) => Relation::Fresh,
            (_, 1) => Relation::SharedSurface,
            _ => Relation::SharedWall,
        };
        let (wall, surface) = match relation {
            Relation::Fresh => (random_wall(&mut rng), random_color(&mut rng)),
            Relation::SharedSurface => {
                let wall = random_wall(&mut rng);
                if channel_gap(wall.mean_rgb(), envs[k - 1].wall.mean_rgb()) < PARTNER_GAP {
                    continue;
                }
                (wall, envs[k - 1].surface)
            }
            Relation::SharedWall => {
                let surface = random_color(&mut rng);
                if channel_gap(as_f64(surface), as_f64(envs[k - 1].surface)) < PARTNER_GAP {
                    continue;
                }
                (envs[k - 1].wall.clone(), surface)
            }
        };
        if relation != Relation::SharedSurface
            && envs
                .iter()
                .any(|o| channel_gap(as_f64(surface), as_f64(o.surface)) < SURFACE_GAP)
        {
            continue;
        }
        let candidate = EnvironmentSpec {
            env_id: format!("env{k:02}"),
            wall,
            surface,
            horizon: rng.random_range(HORIZON_MIN..=HORIZON_MAX),
        };
        let mean = candidate.mean_rgb();
        if means.iter().all(|&m| means_apart(m, mean, MIN_ENV_SEPARATION)) {
            envs.push(candidate);
            means.push(mean);
        }
    }
    envs
}

/// Participants with image and environment counts drawn uniformly from the
/// given inclusive ranges. The environment count is further capped so that
/// environments average at least [`MIN_IMAGES_PER_ENVIRONMENT`] images.
pub fn random_study(
    n_participants: usize,
    images: (usize, usize),
    environments: (usize, usize),
    seed: u64,
) -> Vec<SynthParticipantSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_participants)
        .map(|p| {
            let n_images = rng.random_range(images.0.max(2)..=images.1.max(images.0).max(2));
            let lo = environments.0.clamp(1, n_images);
            let hi = environments.1.min(n_images / MIN_IMAGES_PER_ENVIRONMENT).max(lo);
            let n_env = rng.random_range(lo..=hi);
            SynthParticipantSpec {
                participant_id: format!("p{p:03}"),
                n_images,
                environments: random_environments(n_env, rng.random()),
                seed: rng.random(),
            }
        })
        .collect()
}

/// Environment index of every image: each environment appears at least once.
pub fn assign_environments(spec: &SynthParticipantSpec) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.environments.len();
    let mut a: Vec<usize> = (0..k).collect();
    a.extend((k..spec.n_images).map(|_| rng.random_range(0..k)));
    a.shuffle(&mut rng);
    a
}

/// Writes `images/`, `masks/` and `manifest.csv` under `out_dir`.
pub fn generate_dataset(specs: &[SynthParticipantSpec], out_dir: &Path) -> Result<Dataset> {
    for s in specs {
        s.validate()?;
    }
    create_dir_all(&out_dir.join("images"))?;
    create_dir_all(&out_dir.join("masks"))?;
    let mut records = Vec::new();
    for spec in specs {
        let assignment = assign_environments(spec);
        let jobs: Vec<(usize, usize)> = assignment.iter().copied().enumerate().collect();
        let written: Result<Vec<EatingOccasionRecord>> = {
            use rayon::prelude::*;
            jobs.par_iter()
                .map(|&(i, env_idx)| {
                    let env = &spec.environments[env_idx];
                    let scene_seed = spec.seed ^ ((i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                    let scene = generate_scene(env, scene_seed);
                    let image_id = format!("img{i:03}");
                    let name = format!("{}_{image_id}.png", spec.participant_id);
                    let image_path = out_dir.join("images").join(&name);
                    let mask_path = out_dir.join("masks").join(&name);
                    scene.image.save_png(&image_path)?;
                    scene.mask.save_png(&mask_path)?;
                    Ok(EatingOccasionRecord {
                        participant_id: spec.participant_id.clone(),
                        image_id,
                        image_path,
                        mask_path,
                        env_label: Some(env.env_id.clone()),
                    })
                })
                .collect()
        };
        records.extend(written?);
    }
    let dataset = Dataset::from_records(records)?;
    write_atomic(
        &out_dir.join("manifest.csv"),
        manifest_to_string(&dataset, out_dir).as_bytes(),
    )?;
    Ok(dataset)
}
