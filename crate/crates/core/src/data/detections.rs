//! Detector simulation: jitter, misses, gross outliers and clutter.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

use super::appearance::{synth_appearance, AppearanceFeature};
use super::scenario::Scenario;
use crate::config::{AppearanceConfig, GridConfig, NoiseConfig};
use crate::geometry::BoundingBox3D;
use crate::rng;

/// One detector output in the ego frame of its frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox3D,
    pub appearance: AppearanceFeature,
    pub score: f64,
    /// Ground-truth object behind the detection; `None` for clutter.
    pub source: Option<u32>,
}

pub fn in_region(grid: &GridConfig, b: &BoundingBox3D) -> bool {
    b.cx >= grid.x_min && b.cx < grid.x_max && b.cy >= grid.y_min && b.cy < grid.y_max
}

fn gauss<R: Rng>(r: &mut R, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("finite sigma").sample(r)
}

/// Detections of every frame, keyed by `seed`. Each frame uses its own
/// stream, so frames can be simulated independently.
pub fn simulate_detections(
    scenario: &Scenario,
    noise: &NoiseConfig,
    grid: &GridConfig,
    shape: &AppearanceConfig,
    seed: u64,
) -> Vec<Vec<Detection>> {
    (0..scenario.frames.len()).map(|k| simulate_frame(scenario, k, noise, grid, shape, seed)).collect()
}

pub fn simulate_frame(
    scenario: &Scenario,
    k: usize,
    noise: &NoiseConfig,
    grid: &GridConfig,
    shape: &AppearanceConfig,
    seed: u64,
) -> Vec<Detection> {
    let frame = &scenario.frames[k];
    let mut r = rng::stream(seed, &[rng::TAG_DETECTIONS, scenario.seed, k as u64]);
    let mut out = Vec::with_capacity(frame.objects.len() + 4);
    for o in &frame.objects {
        if noise.fn_rate > 0.0 && r.random_bool(noise.fn_rate.min(1.0)) {
            continue;
        }
        let mut b = o.bbox;
        let outlier = noise.outlier_rate > 0.0 && r.random_bool(noise.outlier_rate.min(1.0));
        let sigma = if outlier { noise.outlier_sigma } else { noise.center_sigma };
        b.cx += gauss(&mut r, sigma);
        b.cy += gauss(&mut r, sigma);
        b.cz += gauss(&mut r, noise.center_sigma * 0.25);
        let scale = |v: f64, r: &mut rand_chacha::ChaCha8Rng| (v * (1.0 + gauss(r, noise.dim_sigma))).max(0.1 * v);
        b.l = scale(b.l, &mut r);
        b.w = scale(b.w, &mut r);
        b.h = scale(b.h, &mut r);
        b.yaw = crate::geometry::normalize_angle(b.yaw + gauss(&mut r, noise.yaw_sigma));
        let score = r.random_range(0.5..1.0);
        let obs = rng::derive(seed, &[rng::TAG_APPEARANCE, scenario.seed, k as u64, o.id as u64]);
        let appearance = synth_appearance(scenario.identity_key(o.id), noise.appearance, obs, shape);
        if in_region(grid, &b) {
            out.push(Detection { bbox: b, appearance, score, source: Some(o.id) });
        }
    }
    let clutter = if noise.fp_rate > 0.0 {
        Poisson::new(noise.fp_rate).expect("positive rate").sample(&mut r) as usize
    } else {
        0
    };
    for c in 0..clutter {
        let near = !frame.objects.is_empty() && r.random_bool(noise.clutter_near.clamp(0.0, 1.0));
        let (cx, cy) = if near {
            let o = &frame.objects[r.random_range(0..frame.objects.len())].bbox;
            let d = r.random_range(noise.clutter_min_offset..=noise.clutter_max_offset.max(noise.clutter_min_offset));
            let a = r.random_range(-PI..PI);
            (o.cx + d * a.cos(), o.cy + d * a.sin())
        } else {
            (r.random_range(grid.x_min..grid.x_max), r.random_range(grid.y_min..grid.y_max))
        };
        let dims = [r.random_range(3.5..5.0), r.random_range(1.6..2.0), r.random_range(1.4..1.8)];
        let b = BoundingBox3D::new([cx, cy, dims[2] / 2.0 - 1.7], dims, r.random_range(-PI..PI));
        let ghost = rng::derive(seed, &[rng::TAG_GHOST, scenario.seed, k as u64, c as u64]);
        let obs = rng::derive(ghost, &[rng::TAG_APPEARANCE]);
        let appearance = synth_appearance(ghost, noise.appearance, obs, shape);
        let score = r.random_range(0.3..0.9);
        if in_region(grid, &b) {
            out.push(Detection { bbox: b, appearance, score, source: None });
        }
    }
    out
}
