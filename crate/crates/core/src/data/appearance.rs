//! Synthetic appearance tensors standing in for detector feature crops.
//!
//! An identity owns a per-channel mean vector and a fixed spatial texture.
//! Each observation applies a random gain and offset (lighting) and pixel
//! noise, all scaled by the nuisance level. Identity therefore survives
//! spatial pooling while raw value histograms drift between observations.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::AppearanceConfig;
use crate::rng;
use crate::tensor::Tensor;

/// `[H, W, C]` feature crop.
pub type AppearanceFeature = Tensor<f32>;

const TEXTURE_SIGMA: f64 = 0.5;
const GAIN_SIGMA: f64 = 0.5;
const OFFSET_SIGMA: f64 = 0.5;

/// Identity-anchored base tensor, seeded only by `identity`.
pub fn identity_base(identity: u64, shape: &AppearanceConfig) -> Vec<f64> {
    let mut r = rng::stream(identity, &[rng::TAG_IDENTITY]);
    let c = shape.channels;
    let means: Vec<f64> = (0..c).map(|_| r.sample(StandardNormal)).collect();
    (0..shape.len())
        .map(|i| {
            let t: f64 = r.sample(StandardNormal);
            means[i % c] + TEXTURE_SIGMA * t
        })
        .collect()
}

/// One observation of `identity` at nuisance level `noise`; `seed` selects
/// the observation.
pub fn synth_appearance(identity: u64, noise: f64, seed: u64, shape: &AppearanceConfig) -> AppearanceFeature {
    let base = identity_base(identity, shape);
    observe(&base, noise, seed, shape)
}

pub fn observe(base: &[f64], noise: f64, seed: u64, shape: &AppearanceConfig) -> AppearanceFeature {
    let mut r = rng::stream(seed, &[rng::TAG_APPEARANCE]);
    let z: [f64; 2] = [r.sample(StandardNormal), r.sample(StandardNormal)];
    let gain = (1.0 + GAIN_SIGMA * noise * z[0]).max(0.2);
    let offset = OFFSET_SIGMA * noise * z[1];
    let data = base
        .iter()
        .map(|&b| {
            let e: f64 = if noise > 0.0 { r.sample(StandardNormal) } else { 0.0 };
            (gain * b + offset + noise * e) as f32
        })
        .collect();
    Tensor::new(shape.shape().to_vec(), data).expect("appearance shape")
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    ab / (aa.sqrt() * bb.sqrt())
}
