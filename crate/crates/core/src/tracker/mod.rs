//! Online track management: Kalman prediction and update, Bayesian
//! existence, track birth, propagation of missed tracks and pruning.
//!
//! Tracks live in the ego frame of the most recent frame. Each step
//! compensates them into the new frame, predicts, associates, updates,
//! spawns tracks for leftover detections and prunes.

mod associate;
mod existence;
mod kalman;

use serde::Serialize;

pub use associate::{Associate, AssociateError, Associator, OracleAssociator, Solver};
pub use existence::{existence_matched, existence_missed, existence_predict, misses_until_prune};
pub use kalman::{Covariance, Kalman, State, PSD_TOLERANCE};

use crate::config::TrackerConfig;
use crate::data::{AppearanceFeature, Detection, KittiRecord};
use crate::geometry::{normalize_angle, BoundingBox3D, EgoPose};

#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    pub id: u64,
    pub kalman: Kalman,
    /// `l, w, h`
    pub dims: [f64; 3],
    pub yaw: f64,
    pub appearance: AppearanceFeature,
    pub existence: f64,
    pub age: usize,
    pub misses: usize,
    /// Ground-truth object of the spawning detection, when known.
    pub origin: Option<u32>,
}

impl Track {
    pub fn bbox(&self) -> BoundingBox3D {
        BoundingBox3D::new(self.kalman.position(), self.dims, self.yaw)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TrackerCounters {
    pub frames: usize,
    pub births: usize,
    pub deaths: usize,
    pub misses: usize,
    pub matches: usize,
    /// Covariances that needed repair after an update.
    pub repairs: usize,
}

/// What happened to the tracks in one step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepReport {
    /// `(track id, detection index)`
    pub matched: Vec<(u64, usize)>,
    pub missed: Vec<u64>,
    pub born: Vec<u64>,
    pub pruned: Vec<u64>,
}

#[derive(Clone, Debug)]
pub struct Tracker {
    pub config: TrackerConfig,
    tracks: Vec<Track>,
    next_id: u64,
    pose: Option<EgoPose>,
    pub counters: TrackerCounters,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Self {
        Self { config, tracks: Vec::new(), next_id: 0, pose: None, counters: TrackerCounters::default() }
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// Tracks with existence at or above the report threshold.
    pub fn reported(&self) -> impl Iterator<Item = &Track> {
        self.tracks.iter().filter(|t| t.existence >= self.config.report_threshold)
    }

    /// Processes one frame whose detections are expressed in the ego frame
    /// at `pose`. `dt` is the time since the previous frame.
    pub fn step(
        &mut self,
        detections: &[Detection],
        pose: EgoPose,
        dt: f64,
        assoc: &mut dyn Associate,
    ) -> Result<StepReport, AssociateError> {
        let c = self.config;
        self.counters.frames += 1;
        if let Some(prev) = self.pose {
            for t in &mut self.tracks {
                t.kalman.compensate(&prev, &pose);
                t.yaw = normalize_angle(t.yaw + prev.yaw - pose.yaw);
            }
        }
        self.pose = Some(pose);
        for t in &mut self.tracks {
            if dt > 0.0 {
                t.kalman.predict(dt, c.q_pos, c.q_vel);
            }
            t.existence = existence_predict(t.existence, &c);
            t.age += 1;
        }

        let assignment = assoc.associate(&self.tracks, detections)?;
        let mut report = StepReport::default();
        let mut det_used = vec![false; detections.len()];
        let mut matched = vec![false; self.tracks.len()];
        for &(i, j) in &assignment.pairs {
            let (t, d) = (&mut self.tracks[i], &detections[j]);
            if t.kalman.update(d.bbox.center(), c.r) {
                self.counters.repairs += 1;
                log::warn!("track {}: covariance repaired after update", t.id);
            }
            for k in 0..3 {
                t.dims[k] = c.ema * [d.bbox.l, d.bbox.w, d.bbox.h][k] + (1.0 - c.ema) * t.dims[k];
            }
            t.yaw = normalize_angle(t.yaw + c.ema * normalize_angle(d.bbox.yaw - t.yaw));
            t.appearance = d.appearance.clone();
            t.existence = existence_matched(t.existence, &c);
            t.misses = 0;
            matched[i] = true;
            det_used[j] = true;
            report.matched.push((t.id, j));
        }
        for (t, m) in self.tracks.iter_mut().zip(&matched) {
            if !m {
                t.existence = existence_missed(t.existence, &c);
                t.misses += 1;
                report.missed.push(t.id);
            }
        }
        self.counters.matches += report.matched.len();
        self.counters.misses += report.missed.len();

        for (d, _) in detections.iter().zip(&det_used).filter(|(_, u)| !**u) {
            let id = self.next_id;
            self.next_id += 1;
            self.tracks.push(Track {
                id,
                kalman: Kalman::new(d.bbox.center(), c.r, c.init_vel_var),
                dims: [d.bbox.l, d.bbox.w, d.bbox.h],
                yaw: d.bbox.yaw,
                appearance: d.appearance.clone(),
                existence: c.birth_existence,
                age: 0,
                misses: 0,
                origin: d.source,
            });
            report.born.push(id);
        }
        self.counters.births += report.born.len();

        let threshold = c.prune_threshold;
        report.pruned = self.tracks.iter().filter(|t| t.existence < threshold).map(|t| t.id).collect();
        self.tracks.retain(|t| t.existence >= threshold);
        self.counters.deaths += report.pruned.len();
        Ok(report)
    }

    /// KITTI records of the reported tracks; the score field carries the
    /// existence probability.
    pub fn records(&self, frame: usize, kind: &str) -> Vec<KittiRecord> {
        self.reported().map(|t| KittiRecord::from_box(frame, t.id as i64, kind, &t.bbox(), Some(t.existence))).collect()
    }
}
