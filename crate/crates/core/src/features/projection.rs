//! Seeded random-projection convolution used as a stand-in for a pretrained
//! network when no real weights are available.
//!
//! Each layer is a single 3x3 convolution with fixed Gaussian weights and a
//! ReLU, followed by `2^block` average pooling so spatial size shrinks with
//! depth the way it does in VGG16. Channel counts follow [`Layer::channels`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{normalized_planar, FeatureExtractor, FeatureMap, ImageKey, Layer, Scope};
use crate::error::Result;
use crate::preprocess::MaskedImage;

const PATCH: usize = 27;

#[derive(Clone, Debug)]
pub struct RandomProjectionExtractor {
    seed: u64,
    input_size: usize,
}

impl RandomProjectionExtractor {
    pub const DEFAULT_INPUT_SIZE: usize = 64;

    pub fn new(seed: u64, input_size: usize) -> Self {
        RandomProjectionExtractor {
            seed,
            input_size: input_size.max(16),
        }
    }

    fn weights(&self, layer: Layer) -> (Vec<f32>, Vec<f32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (u64::from(layer.index()) << 32));
        let w = Normal::new(0.0f32, (1.0 / PATCH as f32).sqrt()).expect("valid std");
        let b = Normal::new(0.0f32, 0.1).expect("valid std");
        let c = layer.channels();
        let weights = (0..c * PATCH).map(|_| w.sample(&mut rng)).collect();
        let bias = (0..c).map(|_| b.sample(&mut rng)).collect();
        (weights, bias)
    }
}

impl FeatureExtractor for RandomProjectionExtractor {
    fn extract(&self, _key: ImageKey<'_>, _scope: Scope, layer: Layer, image: &MaskedImage) -> Result<FeatureMap> {
        let s = self.input_size;
        let input = normalized_planar(image, s, s);
        let plane = s * s;

        // im2col with zero padding
        let mut patches = vec![0f32; plane * PATCH];
        for y in 0..s {
            for x in 0..s {
                let p = &mut patches[(y * s + x) * PATCH..(y * s + x + 1) * PATCH];
                let mut k = 0;
                for c in 0..3 {
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                            if yy >= 0 && xx >= 0 && yy < s as i64 && xx < s as i64 {
                                p[k] = input[c * plane + yy as usize * s + xx as usize];
                            }
                            k += 1;
                        }
                    }
                }
            }
        }

        let (weights, bias) = self.weights(layer);
        let pool = 1usize << layer.block();
        let out_side = s / pool;
        let channels = layer.channels();
        let mut values = vec![0f32; channels * out_side * out_side];
        let norm = 1.0 / (pool * pool) as f32;
        for c in 0..channels {
            let w = &weights[c * PATCH..(c + 1) * PATCH];
            let out = &mut values[c * out_side * out_side..(c + 1) * out_side * out_side];
            for y in 0..out_side * pool {
                for x in 0..out_side * pool {
                    let p = &patches[(y * s + x) * PATCH..(y * s + x + 1) * PATCH];
                    let act: f32 = w.iter().zip(p).map(|(a, b)| a * b).sum::<f32>() + bias[c];
                    out[(y / pool) * out_side + x / pool] += act.max(0.0) * norm;
                }
            }
        }
        FeatureMap::new(channels, out_side, out_side, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key() -> ImageKey<'static> {
        ImageKey {
            participant_id: "p",
            image_id: "i",
        }
    }

    #[test]
    fn shapes_follow_layer_table() {
        let ex = RandomProjectionExtractor::new(7, 64);
        let img = MaskedImage::new(40, 30, vec![0.3; 40 * 30 * 3]).unwrap();
        for layer in Layer::ALL {
            let f = ex.extract(key(), Scope::Global, layer, &img).unwrap();
            assert_eq!(f.channels(), layer.channels());
            assert_eq!(f.height(), 64 >> layer.block());
        }
    }

    #[test]
    fn black_image_is_deterministic() {
        let ex = RandomProjectionExtractor::new(11, 32);
        let img = MaskedImage::new(50, 50, vec![0.0; 50 * 50 * 3]).unwrap();
        let a = ex.extract(key(), Scope::Global, Layer::DEFAULT, &img).unwrap();
        let b = ex.extract(key(), Scope::Global, Layer::DEFAULT, &img).unwrap();
        let bits = |f: &FeatureMap| f.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert!(a.values().iter().any(|&v| v > 0.0));
    }

    #[test]
    fn different_colors_differ() {
        let ex = RandomProjectionExtractor::new(1, 32);
        let red: Vec<f32> = (0..40 * 40).flat_map(|_| [0.9, 0.1, 0.1]).collect();
        let blue: Vec<f32> = (0..40 * 40).flat_map(|_| [0.1, 0.1, 0.9]).collect();
        let a = ex
            .extract(key(), Scope::Global, Layer::DEFAULT, &MaskedImage::new(40, 40, red).unwrap())
            .unwrap();
        let b = ex
            .extract(key(), Scope::Global, Layer::DEFAULT, &MaskedImage::new(40, 40, blue).unwrap())
            .unwrap();
        assert_ne!(a, b);
    }
}
