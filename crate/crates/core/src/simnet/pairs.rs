//! Training pairs for the similarity network.
//!
//! A target is an object's ground-truth box in the previous frame, moved
//! into the current ego frame. Its detection is a jittered proposal around a
//! ground-truth box of the current frame. A proposal is positive when its
//! bird's-eye IoU with its own ground truth exceeds the positive threshold;
//! proposals at or below it are discarded, and proposals overlapping an
//! already accepted proposal above the diversity threshold are rejected.
//! Negatives pair a target with a proposal of a different identity.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{AppearanceConfig, NoiseConfig, PairConfig};
use crate::data::appearance::{synth_appearance, AppearanceFeature};
use crate::data::{split_frames, Scenario};
use crate::geometry::{ego_compensate, iou_bev, normalize_angle, BoundingBox3D};
use crate::rng;
use crate::tensor::Tensor;

/// Observation noise multiplier range for pair appearances.
const NOISE_RANGE: (f64, f64) = (0.5, 1.5);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProposalOutcome {
    Positive,
    /// IoU with its own ground truth at or below the positive threshold.
    Discarded,
    /// Too similar to a proposal already accepted for the same object.
    Redundant,
}

pub fn classify_proposal(
    proposal: &BoundingBox3D,
    truth: &BoundingBox3D,
    accepted: &[BoundingBox3D],
    cfg: &PairConfig,
) -> ProposalOutcome {
    if iou_bev(proposal, truth) <= cfg.positive_iou {
        return ProposalOutcome::Discarded;
    }
    if accepted.iter().any(|a| iou_bev(proposal, a) > cfg.diversity_iou) {
        return ProposalOutcome::Redundant;
    }
    ProposalOutcome::Positive
}

pub fn jitter(b: &BoundingBox3D, cfg: &PairConfig, r: &mut ChaCha8Rng) -> BoundingBox3D {
    let g = |r: &mut ChaCha8Rng, s: f64| if s > 0.0 { Normal::new(0.0, s).expect("sigma").sample(r) } else { 0.0 };
    let mut p = *b;
    p.cx += g(r, cfg.translation_sigma);
    p.cy += g(r, cfg.translation_sigma);
    p.l *= (1.0 + g(r, cfg.scale_sigma)).max(0.5);
    p.w *= (1.0 + g(r, cfg.scale_sigma)).max(0.5);
    p.h *= (1.0 + g(r, cfg.scale_sigma)).max(0.5);
    p.yaw = normalize_angle(p.yaw + g(r, cfg.rotation_sigma));
    p
}

/// Recipe for one object's appearance observation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairObject {
    pub bbox: BoundingBox3D,
    pub identity: u64,
    pub observation: u64,
    pub noise: f64,
}

impl PairObject {
    pub fn appearance(&self, shape: &AppearanceConfig) -> AppearanceFeature {
        synth_appearance(self.identity, self.noise, self.observation, shape)
    }
}

/// Lightweight pair description; appearances are synthesised on demand.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairSpec {
    pub target: PairObject,
    pub detection: PairObject,
    pub label: i8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub label: i8,
    pub target_box: BoundingBox3D,
    pub detection_box: BoundingBox3D,
    pub target_appearance: AppearanceFeature,
    pub detection_appearance: AppearanceFeature,
}

impl PairSpec {
    pub fn materialize(&self, shape: &AppearanceConfig) -> TrainingPair {
        TrainingPair {
            label: self.label,
            target_box: self.target.bbox,
            detection_box: self.detection.bbox,
            target_appearance: self.target.appearance(shape),
            detection_appearance: self.detection.appearance(shape),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PairStats {
    pub positives: usize,
    pub negatives: usize,
    pub discarded: usize,
    pub redundant: usize,
}

/// All pairs of `split` over `scenarios`, in a deterministic order.
pub fn generate_pair_specs(
    scenarios: &[Scenario],
    split: Split,
    cfg: &PairConfig,
    noise: &NoiseConfig,
    seed: u64,
) -> (Vec<PairSpec>, PairStats) {
    let mut out = Vec::new();
    let mut stats = PairStats::default();
    for s in scenarios {
        let (train, val) = split_frames(s.frames.len());
        let range = match split {
            Split::Train => train,
            Split::Validation => val,
        };
        for t in range.start.max(1)..range.end {
            frame_pairs(s, t, cfg, noise, seed, &mut out, &mut stats);
        }
    }
    (out, stats)
}

fn observation(s: &Scenario, seed: u64, t: usize, id: u32, slot: u64, noise: f64, r: &mut ChaCha8Rng) -> (u64, f64) {
    let obs = rng::derive(seed, &[rng::TAG_PAIRS, s.seed, t as u64, id as u64, slot]);
    (obs, noise * r.random_range(NOISE_RANGE.0..NOISE_RANGE.1))
}

fn frame_pairs(
    s: &Scenario,
    t: usize,
    cfg: &PairConfig,
    noise: &NoiseConfig,
    seed: u64,
    out: &mut Vec<PairSpec>,
    stats: &mut PairStats,
) {
    let prev = &s.frames[t - 1];
    let cur = &s.frames[t];
    let mut r = rng::stream(seed, &[rng::TAG_PAIRS, s.seed, t as u64]);
    let targets: Vec<PairObject> = prev
        .objects
        .iter()
        .map(|o| {
            let (obs, n) = observation(s, seed, t, o.id, 0, noise.appearance, &mut r);
            PairObject {
                bbox: ego_compensate(&o.bbox, &prev.pose, &cur.pose),
                identity: s.identity_key(o.id),
                observation: obs,
                noise: n,
            }
        })
        .collect();
    let ids_prev: Vec<u32> = prev.objects.iter().map(|o| o.id).collect();
    let mut positives = 0usize;
    for o in &cur.objects {
        let Some(ti) = ids_prev.iter().position(|&id| id == o.id) else { continue };
        let mut accepted: Vec<BoundingBox3D> = Vec::new();
        for _ in 0..cfg.max_attempts {
            if accepted.len() >= cfg.proposals_per_object {
                break;
            }
            let p = jitter(&o.bbox, cfg, &mut r);
            match classify_proposal(&p, &o.bbox, &accepted, cfg) {
                ProposalOutcome::Positive => {
                    let slot = 1 + accepted.len() as u64;
                    accepted.push(p);
                    let (obs, n) = observation(s, seed, t, o.id, slot, noise.appearance, &mut r);
                    let det = PairObject { bbox: p, identity: s.identity_key(o.id), observation: obs, noise: n };
                    out.push(PairSpec { target: targets[ti], detection: det, label: 1 });
                    positives += 1;
                    stats.positives += 1;
                }
                ProposalOutcome::Discarded => stats.discarded += 1,
                ProposalOutcome::Redundant => stats.redundant += 1,
            }
        }
    }
    if prev.objects.is_empty() || cur.objects.len() < 2 {
        return;
    }
    let want = cfg.negatives_per_positive * positives as f64;
    let mut count = want.floor() as usize;
    if r.random_bool((want - want.floor()).clamp(0.0, 1.0)) {
        count += 1;
    }
    let mut slot = 100u64;
    for _ in 0..count {
        let ti = r.random_range(0..prev.objects.len());
        let others: Vec<usize> = (0..cur.objects.len()).filter(|&k| cur.objects[k].id != ids_prev[ti]).collect();
        let Some(&k) = others.get(r.random_range(0..others.len().max(1))) else { continue };
        let o = &cur.objects[k];
        let mut p = jitter(&o.bbox, cfg, &mut r);
        for _ in 0..cfg.max_attempts {
            if iou_bev(&p, &o.bbox) > cfg.positive_iou {
                break;
            }
            p = jitter(&o.bbox, cfg, &mut r);
        }
        slot += 1;
        let (obs, n) = observation(s, seed, t, o.id, slot, noise.appearance, &mut r);
        let det = PairObject { bbox: p, identity: s.identity_key(o.id), observation: obs, noise: n };
        out.push(PairSpec { target: targets[ti], detection: det, label: -1 });
        stats.negatives += 1;
    }
}

/// Deterministic subsample of `n` specs (all of them if fewer).
pub fn sample_specs(specs: &[PairSpec], n: usize, r: &mut ChaCha8Rng) -> Vec<PairSpec> {
    let mut idx: Vec<usize> = (0..specs.len()).collect();
    idx.shuffle(r);
    idx.truncate(n);
    idx.into_iter().map(|i| specs[i]).collect()
}

const STREAM_MAGIC: &[u8; 8] = b"SAPAIRS1";

#[derive(Debug, thiserror::Error)]
pub enum PairStreamError {
    #[error("not a pair stream")]
    BadMagic,
    #[error("record {0}: {1}")]
    Record(usize, String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Writes a record stream: magic, shape `(H, W, C)` and count as u32, then
/// per record the label (i8), both boxes (7 × f64) and both appearances
/// (f32), all little-endian.
pub fn write_pairs<W: Write>(w: &mut W, shape: &AppearanceConfig, pairs: &[TrainingPair]) -> Result<(), PairStreamError> {
    w.write_all(STREAM_MAGIC)?;
    for v in [shape.height, shape.width, shape.channels, pairs.len()] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    for (i, p) in pairs.iter().enumerate() {
        for a in [&p.target_appearance, &p.detection_appearance] {
            if a.shape() != shape.shape() {
                return Err(PairStreamError::Record(i, format!("appearance shape {:?}", a.shape())));
            }
        }
        w.write_all(&[p.label as u8])?;
        for b in [&p.target_box, &p.detection_box] {
            for v in b.params() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        for a in [&p.target_appearance, &p.detection_appearance] {
            for v in a.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_pairs<R: Read>(r: &mut R) -> Result<(AppearanceConfig, Vec<TrainingPair>), PairStreamError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != STREAM_MAGIC {
        return Err(PairStreamError::BadMagic);
    }
    let mut u = [0u8; 4];
    let mut head = [0usize; 4];
    for h in head.iter_mut() {
        r.read_exact(&mut u)?;
        *h = u32::from_le_bytes(u) as usize;
    }
    let shape = AppearanceConfig { height: head[0], width: head[1], channels: head[2] };
    let mut out = Vec::with_capacity(head[3]);
    for i in 0..head[3] {
        let mut l = [0u8; 1];
        r.read_exact(&mut l)?;
        let label = l[0] as i8;
        if label != 1 && label != -1 {
            return Err(PairStreamError::Record(i, format!("label {label}")));
        }
        let mut boxes = [BoundingBox3D::new([0.0; 3], [1.0; 3], 0.0); 2];
        for b in boxes.iter_mut() {
            let mut p = [0f64; 7];
            for v in p.iter_mut() {
                let mut x = [0u8; 8];
                r.read_exact(&mut x)?;
                *v = f64::from_le_bytes(x);
            }
            *b = BoundingBox3D::new([p[0], p[1], p[2]], [p[3], p[4], p[5]], p[6]);
        }
        let mut app = Vec::with_capacity(2);
        for _ in 0..2 {
            let mut data = vec![0f32; shape.len()];
            for v in data.iter_mut() {
                r.read_exact(&mut u)?;
                *v = f32::from_le_bytes(u);
            }
            app.push(Tensor::new(shape.shape().to_vec(), data).map_err(|e| PairStreamError::Record(i, e.to_string()))?);
        }
        let detection_appearance = app.pop().expect("two");
        let target_appearance = app.pop().expect("two");
        out.push(TrainingPair {
            label,
            target_box: boxes[0],
            detection_box: boxes[1],
            target_appearance,
            detection_appearance,
        });
    }
    Ok((shape, out))
}
