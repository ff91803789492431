//! CLEAR MOT evaluation on 3D centre distances.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::baselines::hungarian;
use crate::config::EvalConfig;
use crate::data::KittiRecord;

/// One ground-truth object or hypothesis in a frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalObject {
    pub id: u64,
    pub center: [f64; 3],
}

fn dist(a: &EvalObject, b: &EvalObject) -> f64 {
    let d = [a.center[0] - b.center[0], a.center[1] - b.center[1], a.center[2] - b.center[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Correspondences of one frame as `(gt index, hypothesis index, distance)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameMatch {
    pub pairs: Vec<(usize, usize, f64)>,
}

/// Keeps the previous frame's correspondences that are still within
/// `threshold`, then matches the rest by minimum total distance.
pub fn match_frame(gt: &[EvalObject], hyp: &[EvalObject], prior: &HashMap<u64, u64>, threshold: f64) -> FrameMatch {
    let mut pairs = Vec::new();
    let mut gt_used = vec![false; gt.len()];
    let mut hyp_used = vec![false; hyp.len()];
    for (i, g) in gt.iter().enumerate() {
        let Some(&hid) = prior.get(&g.id) else { continue };
        if let Some(j) = hyp.iter().position(|h| h.id == hid) {
            let d = dist(g, &hyp[j]);
            if d <= threshold && !hyp_used[j] {
                pairs.push((i, j, d));
                gt_used[i] = true;
                hyp_used[j] = true;
            }
        }
    }
    let gi: Vec<usize> = (0..gt.len()).filter(|&i| !gt_used[i]).collect();
    let hj: Vec<usize> = (0..hyp.len()).filter(|&j| !hyp_used[j]).collect();
    if !gi.is_empty() && !hj.is_empty() {
        let costs: Vec<Vec<Option<f64>>> = gi
            .iter()
            .map(|&i| {
                hj.iter()
                    .map(|&j| {
                        let d = dist(&gt[i], &hyp[j]);
                        (d <= threshold).then_some(d)
                    })
                    .collect()
            })
            .collect();
        let a = hungarian(&costs).expect("distances are finite and rectangular");
        for (r, c) in a.pairs {
            let (i, j) = (gi[r], hj[c]);
            pairs.push((i, j, dist(&gt[i], &hyp[j])));
        }
    }
    pairs.sort_by_key(|p| p.0);
    FrameMatch { pairs }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MotReport {
    /// Percent; `None` without ground truth.
    pub mota: Option<f64>,
    /// Percent, `(1 − mean distance / threshold)·100`; `None` without matches.
    pub motp: Option<f64>,
    pub mt: f64,
    pub pt: f64,
    pub ml: f64,
    pub ids: usize,
    pub frag: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub gt: usize,
    pub matches: usize,
    pub trajectories: usize,
}

#[derive(Clone, Debug, Default)]
struct Trajectory {
    frames: usize,
    tracked: usize,
    last_hyp: Option<u64>,
    was_tracked: bool,
}

/// Folds sequences frame by frame into a report.
#[derive(Clone, Debug)]
pub struct MotAccumulator {
    config: EvalConfig,
    sequence: usize,
    prior: HashMap<u64, u64>,
    trajectories: HashMap<(usize, u64), Trajectory>,
    report: MotReport,
    distance: f64,
}

impl MotAccumulator {
    pub fn new(config: EvalConfig) -> Self {
        Self {
            config,
            sequence: 0,
            prior: HashMap::new(),
            trajectories: HashMap::new(),
            report: MotReport::default(),
            distance: 0.0,
        }
    }

    /// Starts a new sequence; identities do not carry over.
    pub fn next_sequence(&mut self) {
        self.sequence += 1;
        self.prior.clear();
    }

    pub fn frame(&mut self, gt: &[EvalObject], hyp: &[EvalObject]) -> FrameMatch {
        let m = match_frame(gt, hyp, &self.prior, self.config.threshold);
        let r = &mut self.report;
        r.gt += gt.len();
        r.matches += m.pairs.len();
        r.fn_ += gt.len() - m.pairs.len();
        r.fp += hyp.len() - m.pairs.len();
        let mut matched_hyp: HashMap<usize, u64> = HashMap::new();
        for &(i, j, d) in &m.pairs {
            matched_hyp.insert(i, hyp[j].id);
            self.distance += d;
        }
        self.prior.clear();
        for (i, g) in gt.iter().enumerate() {
            let t = self.trajectories.entry((self.sequence, g.id)).or_default();
            t.frames += 1;
            match matched_hyp.get(&i) {
                Some(&h) => {
                    if t.last_hyp.is_some_and(|p| p != h) {
                        r.ids += 1;
                    }
                    t.last_hyp = Some(h);
                    t.tracked += 1;
                    t.was_tracked = true;
                    self.prior.insert(g.id, h);
                }
                None => {
                    if t.was_tracked {
                        r.frag += 1;
                    }
                    t.was_tracked = false;
                }
            }
        }
        m
    }

    pub fn report(&self) -> MotReport {
        let mut r = self.report.clone();
        let c = &self.config;
        if r.gt > 0 {
            r.mota = Some((1.0 - (r.fn_ + r.fp + r.ids) as f64 / r.gt as f64) * 100.0);
        }
        if r.matches > 0 {
            r.motp = Some((1.0 - self.distance / r.matches as f64 / c.threshold) * 100.0);
        }
        r.trajectories = self.trajectories.len();
        let (mut mt, mut ml) = (0usize, 0usize);
        for t in self.trajectories.values() {
            let ratio = t.tracked as f64 / t.frames as f64;
            if ratio >= c.mostly_tracked {
                mt += 1;
            } else if ratio <= c.mostly_lost {
                ml += 1;
            }
        }
        if r.trajectories > 0 {
            let n = r.trajectories as f64;
            r.mt = mt as f64 / n * 100.0;
            r.ml = ml as f64 / n * 100.0;
            r.pt = (r.trajectories - mt - ml) as f64 / n * 100.0;
        }
        r
    }
}

/// Evaluates `(ground truth, hypotheses)` frame lists of several sequences.
pub fn evaluate(sequences: &[(Vec<Vec<EvalObject>>, Vec<Vec<EvalObject>>)], config: EvalConfig) -> MotReport {
    let mut acc = MotAccumulator::new(config);
    for (gt, hyp) in sequences {
        let empty = Vec::new();
        for k in 0..gt.len().max(hyp.len()) {
            acc.frame(gt.get(k).unwrap_or(&empty), hyp.get(k).unwrap_or(&empty));
        }
        acc.next_sequence();
    }
    acc.report()
}

/// Groups KITTI records into per-frame objects (ego-frame box centres).
pub fn frames_from_records(records: &[KittiRecord], frames: usize) -> Vec<Vec<EvalObject>> {
    let n = records.iter().map(|r| r.frame + 1).max().unwrap_or(0).max(frames);
    let mut out = vec![Vec::new(); n];
    for r in records.iter().filter(|r| r.track_id >= 0) {
        out[r.frame].push(EvalObject { id: r.track_id as u64, center: r.to_box().center() });
    }
    out
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"))
}

impl MotReport {
    /// Aligned table with a header row; `rows` are `(label, report)`.
    pub fn table(rows: &[(String, MotReport)]) -> String {
        let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max("method".len());
        let mut s = format!(
            "{:<width$}  {:>7}  {:>7}  {:>7}  {:>7}  {:>7}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}\n",
            "method", "MOTA%", "MOTP%", "MT%", "PT%", "ML%", "IDS", "FRAG", "FP", "FN", "GT"
        );
        for (label, r) in rows {
            let _ = writeln!(
                s,
                "{:<width$}  {:>7}  {:>7}  {:>7.2}  {:>7.2}  {:>7.2}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}",
                label,
                pct(r.mota),
                pct(r.motp),
                r.mt,
                r.pt,
                r.ml,
                r.ids,
                r.frag,
                r.fp,
                r.fn_,
                r.gt
            );
        }
        s
    }

    /// `key=value` lines, optionally prefixed (`prefix.key=value`).
    pub fn key_values(&self, prefix: &str) -> String {
        let p = if prefix.is_empty() { String::new() } else { format!("{prefix}.") };
        let mut s = String::new();
        let fields: [(&str, String); 12] = [
            ("mota", pct(self.mota)),
            ("motp", pct(self.motp)),
            ("mt", format!("{:.2}", self.mt)),
            ("pt", format!("{:.2}", self.pt)),
            ("ml", format!("{:.2}", self.ml)),
            ("ids", self.ids.to_string()),
            ("frag", self.frag.to_string()),
            ("fp", self.fp.to_string()),
            ("fn", self.fn_.to_string()),
            ("gt", self.gt.to_string()),
            ("matches", self.matches.to_string()),
            ("trajectories", self.trajectories.to_string()),
        ];
        for (k, v) in fields {
            let _ = writeln!(s, "{p}{k}={v}");
        }
        s
    }
}
