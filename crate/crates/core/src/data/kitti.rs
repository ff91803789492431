//! KITTI tracking label files and flat ego-pose tables.
//!
//! Label lines hold
//! `frame id type truncated occluded alpha x1 y1 x2 y2 h w l x y z rotation_y [score]`
//! in camera coordinates (x right, y down, z forward; `x y z` is the bottom
//! centre of the box). Conversion to the ego frame used everywhere else:
//! `cx = x`, `cy = z`, `cz = h/2 - y`, `yaw = -rotation_y`.
//!
//! Pose tables hold one `x y z yaw` line per frame.

use std::fmt::Write as _;

use crate::geometry::{normalize_angle, BoundingBox3D, EgoPose};

use super::scenario::{Frame, GtObject, Scenario};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum KittiError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: frame {frame} follows frame {prev}")]
    OutOfOrder { line: usize, frame: usize, prev: usize },
    #[error("{poses} poses for {frames} frames")]
    PoseCount { poses: usize, frames: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct KittiRecord {
    pub frame: usize,
    pub track_id: i64,
    pub kind: String,
    pub truncated: f64,
    pub occluded: i64,
    pub alpha: f64,
    pub bbox2d: [f64; 4],
    /// `h, w, l`
    pub dims: [f64; 3],
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub score: Option<f64>,
}

impl KittiRecord {
    pub fn to_box(&self) -> BoundingBox3D {
        let [h, w, l] = self.dims;
        let [x, y, z] = self.location;
        BoundingBox3D::new([x, z, h / 2.0 - y], [l, w, h], -self.rotation_y)
    }

    /// Record for an ego-frame box; image-plane fields are zero.
    pub fn from_box(frame: usize, track_id: i64, kind: &str, b: &BoundingBox3D, score: Option<f64>) -> Self {
        let rotation_y = normalize_angle(-b.yaw);
        Self {
            frame,
            track_id,
            kind: kind.to_string(),
            truncated: 0.0,
            occluded: 0,
            alpha: 0.0,
            bbox2d: [0.0; 4],
            dims: [b.h, b.w, b.l],
            location: [b.cx, b.h / 2.0 - b.cz, b.cy],
            rotation_y,
            score,
        }
    }
}

fn field<T: std::str::FromStr>(tok: &str, line: usize, name: &str) -> Result<T, KittiError> {
    tok.parse().map_err(|_| KittiError::Malformed { line, msg: format!("bad {name} {tok:?}") })
}

/// Parses label text. Blank lines are skipped; frames must not decrease.
pub fn parse_kitti_records(text: &str) -> Result<Vec<KittiRecord>, KittiError> {
    let mut out = Vec::new();
    let mut prev = 0usize;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t: Vec<&str> = raw.split_whitespace().collect();
        if t.is_empty() {
            continue;
        }
        if t.len() != 17 && t.len() != 18 {
            return Err(KittiError::Malformed { line, msg: format!("expected 17 or 18 fields, found {}", t.len()) });
        }
        let f = |k: usize, name: &str| field::<f64>(t[k], line, name);
        let rec = KittiRecord {
            frame: field(t[0], line, "frame")?,
            track_id: field(t[1], line, "track id")?,
            kind: t[2].to_string(),
            truncated: f(3, "truncated")?,
            occluded: field(t[4], line, "occluded")?,
            alpha: f(5, "alpha")?,
            bbox2d: [f(6, "bbox")?, f(7, "bbox")?, f(8, "bbox")?, f(9, "bbox")?],
            dims: [f(10, "height")?, f(11, "width")?, f(12, "length")?],
            location: [f(13, "x")?, f(14, "y")?, f(15, "z")?],
            rotation_y: f(16, "rotation_y")?,
            score: if t.len() == 18 { Some(f(17, "score")?) } else { None },
        };
        if rec.frame < prev {
            return Err(KittiError::OutOfOrder { line, frame: rec.frame, prev });
        }
        prev = rec.frame;
        out.push(rec);
    }
    Ok(out)
}

/// Writes records with six decimals, one per line.
pub fn write_kitti_records(records: &[KittiRecord]) -> String {
    let mut s = String::new();
    for r in records {
        let _ = write!(
            s,
            "{} {} {} {:.6} {} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
            r.frame,
            r.track_id,
            r.kind,
            r.truncated,
            r.occluded,
            r.alpha,
            r.bbox2d[0],
            r.bbox2d[1],
            r.bbox2d[2],
            r.bbox2d[3],
            r.dims[0],
            r.dims[1],
            r.dims[2],
            r.location[0],
            r.location[1],
            r.location[2],
            r.rotation_y
        );
        if let Some(sc) = r.score {
            let _ = write!(s, " {sc:.6}");
        }
        s.push('\n');
    }
    s
}

/// Builds a scenario from records of the listed classes. Frames run from 0
/// to the largest frame index seen (or `min_frames - 1`), empty ones
/// included; records with negative track ids are ignored.
pub fn records_to_scenario(
    records: &[KittiRecord],
    classes: &[String],
    poses: Option<&[EgoPose]>,
    frame_rate: f64,
    name: &str,
    min_frames: usize,
) -> Result<Scenario, KittiError> {
    let frames = records.iter().map(|r| r.frame + 1).max().unwrap_or(0).max(min_frames);
    if let Some(p) = poses {
        if p.len() != frames {
            return Err(KittiError::PoseCount { poses: p.len(), frames });
        }
    }
    let mut s = Scenario::empty(name, 0, frame_rate);
    for k in 0..frames {
        let pose = poses.map(|p| p[k]).unwrap_or_default();
        s.frames.push(Frame { index: k, timestamp: k as f64 / frame_rate, pose, objects: Vec::new() });
    }
    for r in records {
        if r.track_id < 0 || !classes.iter().any(|c| c == &r.kind) {
            continue;
        }
        s.frames[r.frame].objects.push(GtObject { id: r.track_id as u32, bbox: r.to_box() });
    }
    Ok(s)
}

pub fn scenario_to_records(s: &Scenario, kind: &str) -> Vec<KittiRecord> {
    s.frames
        .iter()
        .flat_map(|f| f.objects.iter().map(move |o| KittiRecord::from_box(f.index, o.id as i64, kind, &o.bbox, None)))
        .collect()
}

pub fn parse_ego_poses(text: &str, expected_frames: Option<usize>) -> Result<Vec<EgoPose>, KittiError> {
    let mut poses = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let t: Vec<&str> = raw.split_whitespace().collect();
        if t.is_empty() {
            continue;
        }
        if t.len() != 4 {
            return Err(KittiError::Malformed { line: i + 1, msg: format!("expected 4 pose fields, found {}", t.len()) });
        }
        let v: Vec<f64> = t.iter().map(|x| field(x, i + 1, "pose")).collect::<Result<_, _>>()?;
        poses.push(EgoPose::new(v[0], v[1], v[2], v[3]));
    }
    if let Some(n) = expected_frames {
        if n != poses.len() {
            return Err(KittiError::PoseCount { poses: poses.len(), frames: n });
        }
    }
    Ok(poses)
}

pub fn write_ego_poses(poses: &[EgoPose]) -> String {
    let mut s = String::new();
    for p in poses {
        let _ = writeln!(s, "{:.9} {:.9} {:.9} {:.9}", p.x, p.y, p.z, p.yaw);
    }
    s
}
