//! Synthetic driving scenarios.
//!
//! Objects live in a fixed world frame. Lane traffic moves along the
//! world `y` axis with one speed per lane (so lane-mates never overlap);
//! crossing traffic moves along `x`, optionally on a gentle arc. Each frame
//! stores the ego pose and the objects expressed in the ego frame.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{GridConfig, ScenarioConfig};
use crate::geometry::{normalize_angle, BoundingBox3D, EgoPose};
use crate::rng;

pub const SCENARIO_VERSION: u32 = 1;
const SENSOR_HEIGHT: f64 = 1.7;
const SPAWN_CLEARANCE: f64 = 8.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtObject {
    pub id: u32,
    pub bbox: BoundingBox3D,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub index: usize,
    pub timestamp: f64,
    pub pose: EgoPose,
    pub objects: Vec<GtObject>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    pub name: String,
    /// Seed the sequence was generated with; also keys object identities.
    pub seed: u64,
    pub frame_rate: f64,
    pub frames: Vec<Frame>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed scenario: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported scenario version {0}")]
    Version(u32),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

impl Scenario {
    pub fn empty(name: &str, seed: u64, frame_rate: f64) -> Self {
        Self { version: SCENARIO_VERSION, name: name.into(), seed, frame_rate, frames: Vec::new() }
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.frame_rate
    }

    /// Identity key for appearance synthesis, unique across sequences.
    pub fn identity_key(&self, id: u32) -> u64 {
        rng::derive(self.seed, &[rng::TAG_IDENTITY, id as u64])
    }

    pub fn object_frames(&self) -> usize {
        self.frames.iter().map(|f| f.objects.len()).sum()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.version != SCENARIO_VERSION {
            return Err(ScenarioError::Version(self.version));
        }
        if !(self.frame_rate > 0.0) {
            return Err(ScenarioError::Invalid("frame rate must be positive".into()));
        }
        for w in self.frames.windows(2) {
            if w[1].timestamp <= w[0].timestamp {
                return Err(ScenarioError::Invalid(format!("timestamps not increasing at frame {}", w[1].index)));
            }
        }
        for f in &self.frames {
            let mut ids: Vec<u32> = f.objects.iter().map(|o| o.id).collect();
            ids.sort_unstable();
            if ids.windows(2).any(|w| w[0] == w[1]) {
                return Err(ScenarioError::Invalid(format!("duplicate object id in frame {}", f.index)));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scenario serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<(), ScenarioError> {
        std::fs::write(path, self.to_json()).map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }
}

/// Index ranges of the training (first 80%) and validation (last 20%) frames.
pub fn split_frames(len: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let cut = (len * 4).div_ceil(5);
    (0..cut, cut..len)
}

#[derive(Clone, Debug)]
struct Mover {
    id: u32,
    x: f64,
    y: f64,
    heading: f64,
    speed: f64,
    curvature: f64,
    dims: [f64; 3],
}

struct Sim<'a> {
    cfg: &'a ScenarioConfig,
    grid: &'a GridConfig,
    rng: ChaCha8Rng,
    lane_speed: Vec<f64>,
    movers: Vec<Mover>,
    next_id: u32,
    target: usize,
}

impl Sim<'_> {
    fn lane_x(&self, lane: usize) -> f64 {
        (lane as f64 - (self.cfg.lanes as f64 - 1.0) / 2.0) * self.cfg.lane_width
    }

    /// Left-hand lanes carry oncoming traffic.
    fn lane_heading(&self, lane: usize) -> f64 {
        if self.lane_x(lane) < 0.0 {
            -FRAC_PI_2
        } else {
            FRAC_PI_2
        }
    }

    fn dims(&mut self) -> [f64; 3] {
        [self.rng.random_range(3.5..5.0), self.rng.random_range(1.6..2.0), self.rng.random_range(1.4..1.8)]
    }

    fn clear(&self, x: f64, y: f64) -> bool {
        self.movers.iter().all(|m| (m.x - x).hypot(m.y - y) > SPAWN_CLEARANCE)
    }

    fn inside(&self, pose: &EgoPose, x: f64, y: f64) -> bool {
        let p = pose.to_local([x, y, 0.0]);
        let g = self.grid;
        p[0] >= g.x_min && p[0] < g.x_max && p[1] >= g.y_min && p[1] < g.y_max
    }

    /// Tries once to place a new object; `anywhere` scatters it over the
    /// region, otherwise it enters from an edge.
    fn spawn(&mut self, pose: &EgoPose, anywhere: bool) {
        let g = *self.grid;
        let crossing = self.cfg.lanes == 0 || self.rng.random_bool(self.cfg.crossing_fraction.clamp(0.0, 1.0));
        let dims = self.dims();
        let (local, heading, speed, curvature, lane);
        if crossing {
            let from_left = self.rng.random_bool(0.5);
            let ly = self.rng.random_range((g.y_min + 10.0).min(g.y_max)..(g.y_max - 10.0).max(g.y_min + 10.0 + 1e-9));
            let lx = if anywhere {
                self.rng.random_range(g.x_min + 2.0..g.x_max - 2.0)
            } else if from_left {
                g.x_min + 1.0
            } else {
                g.x_max - 1.0
            };
            local = [lx, ly];
            heading = pose.yaw + if from_left { 0.0 } else { std::f64::consts::PI };
            speed = self.rng.random_range(self.cfg.speed_min..=self.cfg.speed_max);
            curvature = self.rng.random_range(-1.0..=1.0) * self.cfg.max_curvature;
            lane = None;
        } else {
            let k = self.rng.random_range(0..self.cfg.lanes);
            let h = self.lane_heading(k);
            // lanes are fixed in the world; find where this lane meets the region
            let ly = if anywhere {
                self.rng.random_range(g.y_min + 2.0..g.y_max - 2.0)
            } else if (h > 0.0) == (self.lane_speed[k] >= 0.0) {
                g.y_min + 1.0
            } else {
                g.y_max - 1.0
            };
            let world_x = self.lane_x(k);
            let w = pose.to_world([0.0, ly, 0.0]);
            local = [pose.to_local([world_x, w[1], 0.0])[0], ly];
            heading = h;
            speed = self.lane_speed[k];
            curvature = 0.0;
            lane = Some(k);
        }
        let w = pose.to_world([local[0], local[1], 0.0]);
        let (x, y) = match lane {
            Some(k) => (self.lane_x(k), w[1]),
            None => (w[0], w[1]),
        };
        if !self.inside(pose, x, y) || !self.clear(x, y) {
            return;
        }
        self.movers.push(Mover { id: self.next_id, x, y, heading, speed, curvature, dims });
        self.next_id += 1;
    }

    fn step(&mut self, dt: f64) {
        for m in &mut self.movers {
            m.heading = normalize_angle(m.heading + m.speed * m.curvature * dt);
            m.x += m.speed * m.heading.cos() * dt;
            m.y += m.speed * m.heading.sin() * dt;
        }
    }
}

/// Generates one sequence. Identical `(cfg, seed)` give identical scenarios.
pub fn generate_scenario(cfg: &ScenarioConfig, grid: &GridConfig, name: &str, seed: u64) -> Scenario {
    let mut rng = rng::stream(seed, &[rng::TAG_SCENARIO]);
    let lane_speed: Vec<f64> = (0..cfg.lanes).map(|_| rng.random_range(cfg.speed_min..=cfg.speed_max)).collect();
    let target = rng.random_range(cfg.objects_min..=cfg.objects_max);
    let ego_speed = if cfg.ego_speed_max > 0.0 { rng.random_range(0.0..cfg.ego_speed_max) } else { 0.0 };
    let ego_rate = if cfg.ego_yaw_rate_max > 0.0 {
        rng.random_range(-cfg.ego_yaw_rate_max..cfg.ego_yaw_rate_max)
    } else {
        0.0
    };
    let mut sim = Sim { cfg, grid, rng, lane_speed, movers: Vec::new(), next_id: 0, target };
    let dt = 1.0 / cfg.frame_rate;
    let mut pose = EgoPose::default();
    let mut scenario = Scenario::empty(name, seed, cfg.frame_rate);
    if cfg.frames == 0 {
        return scenario;
    }
    for _ in 0..sim.target * 8 {
        if sim.movers.len() >= sim.target {
            break;
        }
        sim.spawn(&pose, true);
    }
    for index in 0..cfg.frames {
        if index > 0 {
            sim.step(dt);
            let (s, c) = pose.yaw.sin_cos();
            pose.x -= ego_speed * s * dt;
            pose.y += ego_speed * c * dt;
            pose.yaw = normalize_angle(pose.yaw + ego_rate * dt);
            let p = pose;
            sim.movers.retain(|m| {
                let q = p.to_local([m.x, m.y, 0.0]);
                q[0] >= grid.x_min && q[0] < grid.x_max && q[1] >= grid.y_min && q[1] < grid.y_max
            });
            if sim.movers.len() < sim.target && sim.rng.random_bool(0.3) {
                sim.spawn(&pose, false);
            }
        }
        let objects = sim
            .movers
            .iter()
            .map(|m| {
                let p = pose.to_local([m.x, m.y, 0.0]);
                let bbox = BoundingBox3D::new([p[0], p[1], m.dims[2] / 2.0 - SENSOR_HEIGHT], m.dims, m.heading - pose.yaw);
                GtObject { id: m.id, bbox }
            })
            .collect();
        scenario.frames.push(Frame { index, timestamp: index as f64 * dt, pose, objects });
    }
    scenario
}

/// Sequence `k` of a benchmark drawn from a base seed.
pub fn generate_benchmark(cfg: &ScenarioConfig, grid: &GridConfig, seed: u64) -> Vec<Scenario> {
    (0..cfg.sequences)
        .map(|k| generate_scenario(cfg, grid, &format!("{k:04}"), rng::derive(seed, &[rng::TAG_SCENARIO, k as u64])))
        .collect()
}

/// Held-out sequences, seeded apart from the training benchmark.
pub fn generate_test_set(cfg: &ScenarioConfig, grid: &GridConfig, seed: u64) -> Vec<Scenario> {
    (0..cfg.test_sequences)
        .map(|k| {
            let s = rng::derive(seed, &[rng::TAG_SCENARIO, TEST_OFFSET + k as u64]);
            generate_scenario(cfg, grid, &format!("test-{k:04}"), s)
        })
        .collect()
}

const TEST_OFFSET: u64 = 1 << 32;

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ScenarioConfig {
        ScenarioConfig { frames: 60, ..ScenarioConfig::default() }
    }

    #[test]
    fn zero_objects_give_empty_frames() {
        let c = ScenarioConfig { objects_min: 0, objects_max: 0, ..cfg() };
        let s = generate_scenario(&c, &GridConfig::default(), "z", 3);
        assert_eq!(s.frames.len(), 60);
        assert!(s.frames.iter().all(|f| f.objects.is_empty()));
    }

    #[test]
    fn static_world_repeats_boxes() {
        let c = ScenarioConfig {
            objects_min: 1,
            objects_max: 1,
            speed_min: 0.0,
            speed_max: 0.0,
            ego_speed_max: 0.0,
            ego_yaw_rate_max: 0.0,
            ..cfg()
        };
        let s = generate_scenario(&c, &GridConfig::default(), "s", 5);
        let first = &s.frames[0].objects;
        assert_eq!(first.len(), 1);
        assert!(s.frames.iter().all(|f| &f.objects == first));
    }

    #[test]
    fn replay_is_bit_identical() {
        let a = generate_scenario(&cfg(), &GridConfig::default(), "r", 99);
        let b = generate_scenario(&cfg(), &GridConfig::default(), "r", 99);
        assert_eq!(a.to_json(), b.to_json());
        let c = generate_scenario(&cfg(), &GridConfig::default(), "r", 100);
        assert_ne!(a.to_json(), c.to_json());
    }

    #[test]
    fn objects_stay_in_region_and_ids_are_consistent() {
        let g = GridConfig::default();
        let s = generate_scenario(&cfg(), &g, "x", 11);
        s.validate().unwrap();
        for f in &s.frames {
            for o in &f.objects {
                assert!(o.bbox.cx >= g.x_min && o.bbox.cx < g.x_max);
                assert!(o.bbox.cy >= g.y_min && o.bbox.cy < g.y_max);
            }
        }
        // ids are never reused after an object leaves
        let mut seen_gone = std::collections::HashSet::new();
        for w in s.frames.windows(2) {
            for o in &w[0].objects {
                if !w[1].objects.iter().any(|p| p.id == o.id) {
                    seen_gone.insert(o.id);
                }
            }
            for o in &w[1].objects {
                assert!(!seen_gone.contains(&o.id));
            }
        }
        assert!(s.object_frames() > 0);
    }

    #[test]
    fn json_round_trip() {
        let s = generate_scenario(&cfg(), &GridConfig::default(), "j", 1);
        assert_eq!(Scenario::from_json(&s.to_json()).unwrap(), s);
    }

    #[test]
    fn split_is_eighty_twenty() {
        assert_eq!(split_frames(100), (0..80, 80..100));
        assert_eq!(split_frames(0), (0..0, 0..0));
    }
}
