//! Frame association strategies used by the tracker.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Track;
use crate::assocnet::{decode, AssocNet, AssocNetError, AssocSample, AssociationMap};
use crate::association::{FrameMaps, ObjectView, ScoreError, Scorer};
use crate::baselines::{greedy, hungarian, Assignment, AssignmentError};
use crate::data::Detection;
use crate::geometry::BoundingBox3D;
use crate::simnet::GridGeometry;

#[derive(Debug, thiserror::Error)]
pub enum AssociateError {
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Net(#[from] AssocNetError),
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
    #[error("the assocnet solver needs an association network")]
    MissingAssocNet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    AssocNet,
    Hungarian,
    Greedy,
}

impl Solver {
    pub const ALL: [Solver; 3] = [Solver::AssocNet, Solver::Hungarian, Solver::Greedy];

    pub fn name(self) -> &'static str {
        match self {
            Solver::AssocNet => "assocnet",
            Solver::Hungarian => "hungarian",
            Solver::Greedy => "greedy",
        }
    }
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Solver {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Solver::ALL
            .into_iter()
            .find(|v| v.name() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown association {s:?} (expected assocnet, hungarian or greedy)"))
    }
}

/// Anything that can pair the tracker's predicted tracks with a frame's
/// detections. Rows of the assignment index `tracks`, columns `dets`.
pub trait Associate {
    fn associate(&mut self, tracks: &[Track], dets: &[Detection]) -> Result<Assignment, AssociateError>;
}

/// Scorer plus solver.
pub struct Associator<'a> {
    pub scorer: Scorer<'a>,
    pub solver: Solver,
    pub assocnet: Option<&'a AssocNet>,
    pub geometry: GridGeometry,
    /// Ground-plane gate of the classical solvers (m).
    pub gate: f64,
}

impl<'a> Associator<'a> {
    pub fn new(
        scorer: Scorer<'a>,
        solver: Solver,
        assocnet: Option<&'a AssocNet>,
        geometry: GridGeometry,
        gate: f64,
    ) -> Result<Self, AssociateError> {
        if solver == Solver::AssocNet && assocnet.is_none() {
            return Err(AssociateError::MissingAssocNet);
        }
        Ok(Self { scorer, solver, assocnet, geometry, gate })
    }

    fn learned(&self, net: &AssocNet, tracks: &[Track], dets: &[Detection]) -> Result<Assignment, AssociateError> {
        let tv: Vec<ObjectView> = tracks.iter().map(|t| ObjectView { bbox: t.bbox(), appearance: &t.appearance }).collect();
        let dv: Vec<ObjectView> = dets.iter().map(|d| ObjectView { bbox: d.bbox, appearance: &d.appearance }).collect();
        let sim = self.scorer.similarity(&tv, &dv)?;
        let boxes: Vec<BoundingBox3D> = tv.iter().map(|v| v.bbox).collect();
        let scored: Vec<(BoundingBox3D, f64)> = dets.iter().map(|d| (d.bbox, d.score)).collect();
        let maps = FrameMaps::build(&self.geometry, &boxes, &scored, &sim);
        let inside: Vec<usize> = (0..tracks.len()).filter(|&i| maps.locals[i].is_some()).collect();
        let mut samples = Vec::new();
        for chunk in inside.chunks(net.config.n_max) {
            let mut s = AssocSample { targets: chunk.len(), entries: Vec::new(), truth: Vec::new() };
            for (slot, &i) in chunk.iter().enumerate() {
                let local = maps.locals[i].as_ref().expect("filtered");
                for &(k, _) in &local.occupied {
                    s.entries.push((slot as u16, k as u16, local.scores[k]));
                }
            }
            samples.push(s);
        }
        let refs: Vec<&AssocSample> = samples.iter().collect();
        let predicted = if refs.is_empty() { Vec::new() } else { net.predict(&refs)? };
        let mut out: Vec<Option<AssociationMap>> = vec![None; tracks.len()];
        for (i, m) in inside.iter().zip(predicted.into_iter().flatten()) {
            out[*i] = Some(m);
        }
        Ok(decode(&out, &maps.locals, dets.len())?)
    }
}

impl Associate for Associator<'_> {
    fn associate(&mut self, tracks: &[Track], dets: &[Detection]) -> Result<Assignment, AssociateError> {
        if tracks.is_empty() || dets.is_empty() {
            return Ok(Assignment {
                pairs: Vec::new(),
                unassigned_rows: (0..tracks.len()).collect(),
                unassigned_cols: (0..dets.len()).collect(),
            });
        }
        match self.solver {
            Solver::AssocNet => {
                let net = self.assocnet.ok_or(AssociateError::MissingAssocNet)?;
                self.learned(net, tracks, dets)
            }
            Solver::Hungarian | Solver::Greedy => {
                let tv: Vec<ObjectView> =
                    tracks.iter().map(|t| ObjectView { bbox: t.bbox(), appearance: &t.appearance }).collect();
                let dv: Vec<ObjectView> = dets.iter().map(|d| ObjectView { bbox: d.bbox, appearance: &d.appearance }).collect();
                let costs = self.scorer.costs(&tv, &dv, self.gate)?;
                Ok(if self.solver == Solver::Hungarian { hungarian(&costs)? } else { greedy(&costs)? })
            }
        }
    }
}

/// Pairs tracks with detections of the ground-truth object that spawned
/// them. For tests and upper-bound runs on simulated data.
#[derive(Clone, Copy, Debug, Default)]
pub struct OracleAssociator;

impl Associate for OracleAssociator {
    fn associate(&mut self, tracks: &[Track], dets: &[Detection]) -> Result<Assignment, AssociateError> {
        let mut pairs = Vec::new();
        let mut used = vec![false; dets.len()];
        for (i, t) in tracks.iter().enumerate() {
            let hit = t.origin.and_then(|id| (0..dets.len()).find(|&j| !used[j] && dets[j].source == Some(id)));
            if let Some(j) = hit {
                used[j] = true;
                pairs.push((i, j));
            }
        }
        let rows: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        Ok(Assignment {
            unassigned_rows: (0..tracks.len()).filter(|i| !rows.contains(i)).collect(),
            unassigned_cols: (0..dets.len()).filter(|&j| !used[j]).collect(),
            pairs,
        })
    }
}
