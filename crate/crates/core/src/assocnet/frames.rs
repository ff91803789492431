//! Training frames for the association network.
//!
//! Targets are the tracks a tracker with oracle association predicts at a
//! frame: converged tracks, tracks dragged off by outlier detections, tracks
//! born last frame with zero velocity, coasting tracks and short-lived
//! clutter tracks. The truth of a target is the local cell of the current
//! detection of the object it was born from, or spurious when that
//! detection is missing, outside the window or lost a cell collision.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::network::AssocSample;
use crate::association::{FrameMaps, ObjectView, ScoreError, Scorer};
use crate::baselines::Assignment;
use crate::config::{NoiseConfig, RunConfig};
use crate::data::{simulate_detections, split_frames, Detection, Scenario};
use crate::geometry::BoundingBox3D;
use crate::rng;
use crate::simnet::{GridGeometry, Split};
use crate::tracker::{Associate, AssociateError, OracleAssociator, Track, Tracker};

/// A training sample plus per-slot labels useful for evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledFrame {
    pub sample: AssocSample,
    /// Per slot: the true cell has another occupied cell within two cells.
    pub ambiguous: Vec<bool>,
    /// Smallest Chebyshev distance between occupied cells of the frame.
    pub min_separation: usize,
}

/// Labels predicted `tracks` against the frame's `dets`. At most `n_max`
/// tracks are kept, in a shuffled slot order.
pub fn label_frame(
    cfg: &RunConfig,
    geom: &GridGeometry,
    tracks: &[Track],
    dets: &[Detection],
    scorer: &Scorer,
    r: &mut ChaCha8Rng,
) -> Result<LabeledFrame, ScoreError> {
    let mut order: Vec<usize> = (0..tracks.len()).collect();
    order.shuffle(r);
    order.truncate(cfg.assocnet.n_max);
    let targets: Vec<&Track> = order.iter().map(|&i| &tracks[i]).collect();

    let views: Vec<ObjectView> = targets.iter().map(|t| ObjectView { bbox: t.bbox(), appearance: &t.appearance }).collect();
    let dviews: Vec<ObjectView> = dets.iter().map(|d| ObjectView { bbox: d.bbox, appearance: &d.appearance }).collect();
    let sim = if views.is_empty() || dviews.is_empty() {
        vec![vec![0.0; dviews.len()]; views.len()]
    } else {
        scorer.similarity(&views, &dviews)?
    };
    let boxes: Vec<BoundingBox3D> = views.iter().map(|v| v.bbox).collect();
    let scored: Vec<(BoundingBox3D, f64)> = dets.iter().map(|d| (d.bbox, d.score)).collect();
    let maps = FrameMaps::build(geom, &boxes, &scored, &sim);
    let cells = geom.local_cells();
    let side = geom.side();

    let mut sample = AssocSample { targets: targets.len(), entries: Vec::new(), truth: Vec::new() };
    let mut ambiguous = Vec::new();
    for (slot, t) in targets.iter().enumerate() {
        let Some(local) = &maps.locals[slot] else {
            sample.truth.push(cells as u16);
            ambiguous.push(false);
            continue;
        };
        for &(k, _) in &local.occupied {
            sample.entries.push((slot as u16, k as u16, local.scores[k]));
        }
        let truth = t.origin.and_then(|id| local.occupied.iter().find(|&&(_, j)| dets[j].source == Some(id)).map(|&(k, _)| k));
        let amb = truth.is_some_and(|k| local.occupied.iter().any(|&(k2, _)| k2 != k && cheb(k, k2, side) <= 2));
        sample.truth.push(truth.unwrap_or(cells) as u16);
        ambiguous.push(amb);
    }
    let occ: Vec<_> = maps.occupancy.cells.iter().map(|c| c.0).collect();
    let mut min_separation = usize::MAX;
    for (a, ca) in occ.iter().enumerate() {
        for cb in &occ[a + 1..] {
            min_separation = min_separation.min(ca.0.abs_diff(cb.0).max(ca.1.abs_diff(cb.1)));
        }
    }
    Ok(LabeledFrame { sample, ambiguous, min_separation })
}

fn cheb(a: usize, b: usize, side: usize) -> usize {
    (a / side).abs_diff(b / side).max((a % side).abs_diff(b % side))
}

/// Oracle association that labels the wanted frames on the way.
struct Recorder<'a, 'b> {
    cfg: &'a RunConfig,
    geom: GridGeometry,
    scorer: &'a Scorer<'b>,
    /// Frame index → output position.
    wanted: &'a BTreeMap<usize, usize>,
    frame: usize,
    out: &'a mut [Option<LabeledFrame>],
    rng: ChaCha8Rng,
    error: Option<ScoreError>,
}

impl Associate for Recorder<'_, '_> {
    fn associate(&mut self, tracks: &[Track], dets: &[Detection]) -> Result<Assignment, AssociateError> {
        if let Some(&pos) = self.wanted.get(&self.frame) {
            match label_frame(self.cfg, &self.geom, tracks, dets, self.scorer, &mut self.rng) {
                Ok(f) => self.out[pos] = Some(f),
                Err(e) => {
                    self.error.get_or_insert(e);
                }
            }
        }
        OracleAssociator.associate(tracks, dets)
    }
}

/// `max` frames (index ≥ 1) of `split`, drawn without replacement in a
/// seeded order. When one detector realisation holds fewer than `max`
/// frames, further realisations with fresh noise are added.
pub fn sample_frames(
    cfg: &RunConfig,
    scenarios: &[Scenario],
    split: Split,
    noise: &NoiseConfig,
    scorer: &Scorer,
    max: usize,
    seed: u64,
) -> Result<Vec<LabeledFrame>, ScoreError> {
    let mut base = Vec::new();
    for (si, s) in scenarios.iter().enumerate() {
        let (train, val) = split_frames(s.frames.len());
        let range = if split == Split::Train { train } else { val };
        base.extend((range.start.max(1)..range.end).map(|t| (si, t)));
    }
    if base.is_empty() {
        return Ok(Vec::new());
    }
    let realisations = max.div_ceil(base.len()).max(1);
    let mut keys: Vec<(usize, usize, usize)> =
        (0..realisations).flat_map(|k| base.iter().map(move |&(si, t)| (k, si, t))).collect();
    let mut r = rng::stream(seed, &[rng::TAG_FRAMES, split as u64]);
    keys.shuffle(&mut r);
    keys.truncate(max);
    let mut wanted: BTreeMap<(usize, usize), BTreeMap<usize, usize>> = BTreeMap::new();
    for (pos, &(k, si, t)) in keys.iter().enumerate() {
        wanted.entry((k, si)).or_default().insert(t, pos);
    }
    let mut out = vec![None; keys.len()];
    for (&(k, si), frames) in &wanted {
        let s = &scenarios[si];
        let det_seed = rng::derive(seed, &[rng::TAG_FRAMES, k as u64]);
        let dets = simulate_detections(s, noise, &cfg.grid, &cfg.appearance, det_seed);
        let mut rec = Recorder {
            cfg,
            geom: GridGeometry::new(&cfg.grid),
            scorer,
            wanted: frames,
            frame: 0,
            out: &mut out,
            rng: rng::stream(seed, &[rng::TAG_FRAMES, s.seed, split as u64, k as u64]),
            error: None,
        };
        let mut tracker = Tracker::new(cfg.tracker);
        let last = *frames.keys().next_back().expect("non-empty");
        for (t, frame) in s.frames.iter().enumerate().take(last + 1) {
            rec.frame = t;
            tracker.step(&dets[t], frame.pose, s.dt(), &mut rec).expect("oracle association cannot fail");
        }
        if let Some(e) = rec.error {
            return Err(e);
        }
    }
    Ok(out.into_iter().map(|f| f.expect("every wanted frame is labeled")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::CostKind;
    use crate::config::{AppearanceConfig, ScenarioConfig};
    use crate::data::generate_scenario;

    fn setup() -> (RunConfig, Scenario) {
        let cfg = RunConfig { appearance: AppearanceConfig { height: 2, width: 2, channels: 2 }, ..RunConfig::default() };
        let s = generate_scenario(&ScenarioConfig { frames: 10, ..cfg.scenario }, &cfg.grid, "f", 77);
        (cfg, s)
    }

    #[test]
    fn noiseless_targets_find_their_detections() {
        let (cfg, s) = setup();
        let scorer = Scorer::new(CostKind::Euclidean, None, &cfg.baselines, 2).unwrap();
        let frames = sample_frames(&cfg, &[s], Split::Train, &NoiseConfig::zero(), &scorer, 100, 1).unwrap();
        assert!(!frames.is_empty());
        let cells = 441u16;
        for f in &frames {
            assert!(f.sample.targets > 0);
            assert_eq!(f.sample.truth.len(), f.sample.targets);
            let real = f.sample.truth.iter().filter(|&&t| t < cells).count();
            // only departed objects or lost collisions can be spurious without noise
            assert!(real + 2 >= f.sample.targets, "{real} of {}", f.sample.targets);
            for (slot, &t) in f.sample.truth.iter().enumerate() {
                if t < cells {
                    assert!(f.sample.entries.iter().any(|&(s, k, _)| s as usize == slot && k == t));
                }
            }
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let (cfg, s) = setup();
        let scorer = Scorer::new(CostKind::Manhattan, None, &cfg.baselines, 2).unwrap();
        let ss = [s];
        let a = sample_frames(&cfg, &ss, Split::Train, &cfg.noise, &scorer, 5, 9).unwrap();
        let b = sample_frames(&cfg, &ss, Split::Train, &cfg.noise, &scorer, 5, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
    }
}
