//! Glue between scorers, similarity maps and solvers: everything needed to
//! associate one frame's targets with its detections.

use crate::baselines::{self, CostKind};
use crate::config::BaselineConfig;
use crate::data::AppearanceFeature;
use crate::geometry::BoundingBox3D;
use crate::simnet::{build_global_map, crop_local_map, Cell, GridGeometry, LocalSimilarityMap, Occupancy, SimNet, SimNetError};

/// A target or detection as seen by a scorer.
#[derive(Clone, Copy, Debug)]
pub struct ObjectView<'a> {
    pub bbox: BoundingBox3D,
    pub appearance: &'a AppearanceFeature,
}

#[derive(Debug, thiserror::Error)]
pub enum ScoreError {
    #[error(transparent)]
    SimNet(#[from] SimNetError),
    #[error(transparent)]
    Cost(#[from] baselines::CostError),
    #[error("the simnet cost needs a similarity network")]
    MissingSimNet,
}

/// Pairwise scoring of targets against detections.
#[derive(Clone, Copy, Debug)]
pub enum Scorer<'a> {
    SimNet(&'a SimNet),
    Baseline { kind: CostKind, config: &'a BaselineConfig, channels: usize },
}

/// Per-kind raw scores before conversion: distances or similarities.
struct Raw {
    values: Vec<Vec<f64>>,
    bev: Vec<Vec<f64>>,
}

impl<'a> Scorer<'a> {
    pub fn new(kind: CostKind, simnet: Option<&'a SimNet>, config: &'a BaselineConfig, channels: usize) -> Result<Self, ScoreError> {
        match kind {
            CostKind::SimNet => simnet.map(Scorer::SimNet).ok_or(ScoreError::MissingSimNet),
            k => Ok(Scorer::Baseline { kind: k, config, channels }),
        }
    }

    pub fn kind(&self) -> CostKind {
        match self {
            Scorer::SimNet(_) => CostKind::SimNet,
            Scorer::Baseline { kind, .. } => *kind,
        }
    }

    fn raw(&self, targets: &[ObjectView], dets: &[ObjectView]) -> Result<Raw, ScoreError> {
        let bev = targets
            .iter()
            .map(|t| dets.iter().map(|d| ((t.bbox.cx - d.bbox.cx).powi(2) + (t.bbox.cy - d.bbox.cy).powi(2)).sqrt()).collect())
            .collect();
        let values = match *self {
            Scorer::SimNet(net) => {
                let embed = |v: &[ObjectView]| {
                    let boxes: Vec<_> = v.iter().map(|o| o.bbox).collect();
                    let apps: Vec<_> = v.iter().map(|o| o.appearance).collect();
                    net.embed(&boxes, &apps)
                };
                let (et, ed) = (embed(targets)?, embed(dets)?);
                (0..targets.len()).map(|i| (0..dets.len()).map(|j| et.similarity(i, &ed, j) as f64).collect()).collect()
            }
            Scorer::Baseline { kind: CostKind::Euclidean, .. } => {
                targets.iter().map(|t| dets.iter().map(|d| baselines::euclidean(&t.bbox, &d.bbox)).collect()).collect()
            }
            Scorer::Baseline { kind: CostKind::Manhattan, .. } => {
                targets.iter().map(|t| dets.iter().map(|d| baselines::manhattan(&t.bbox, &d.bbox)).collect()).collect()
            }
            Scorer::Baseline { kind, config, channels } => {
                let hist = |o: &ObjectView| baselines::histogram(o.appearance.data(), channels, config.histogram_bins);
                let th: Vec<_> = targets.iter().map(hist).collect();
                let dh: Vec<_> = dets.iter().map(hist).collect();
                let mut out = Vec::with_capacity(targets.len());
                for p in &th {
                    let mut row = Vec::with_capacity(dets.len());
                    for q in &dh {
                        row.push(if kind == CostKind::Bhattacharyya {
                            baselines::bhattacharyya(p, q)?.value
                        } else {
                            baselines::chi_square(p, q, config.chi_square_eps)?
                        });
                    }
                    out.push(row);
                }
                out
            }
        };
        Ok(Raw { values, bev })
    }

    /// Similarities in `[-1, 1]`, the input of the association network.
    pub fn similarity(&self, targets: &[ObjectView], dets: &[ObjectView]) -> Result<Vec<Vec<f32>>, ScoreError> {
        let raw = self.raw(targets, dets)?;
        let convert = |v: f64| -> f64 {
            match *self {
                Scorer::SimNet(_) => v,
                Scorer::Baseline { kind: CostKind::Euclidean | CostKind::Manhattan, config, .. } => {
                    baselines::distance_similarity(v, config.gate)
                }
                Scorer::Baseline { kind: CostKind::Bhattacharyya, .. } => baselines::bhattacharyya_similarity(v),
                Scorer::Baseline { .. } => baselines::chi_square_similarity(v),
            }
        };
        Ok(raw.values.iter().map(|r| r.iter().map(|&v| convert(v) as f32).collect()).collect())
    }

    /// Costs for the classical solvers. Pairs farther apart than `gate` in
    /// the ground plane are infeasible, as are simnet pairs with negative
    /// similarity.
    pub fn costs(&self, targets: &[ObjectView], dets: &[ObjectView], gate: f64) -> Result<Vec<Vec<Option<f64>>>, ScoreError> {
        let raw = self.raw(targets, dets)?;
        let simnet = matches!(self, Scorer::SimNet(_));
        Ok(raw
            .values
            .iter()
            .zip(&raw.bev)
            .map(|(vals, dist)| {
                vals.iter()
                    .zip(dist)
                    .map(|(&v, &d)| {
                        if d > gate || (simnet && v < 0.0) {
                            None
                        } else if simnet {
                            Some(1.0 - v)
                        } else {
                            Some(v)
                        }
                    })
                    .collect()
            })
            .collect())
    }
}

/// Occupancy and local similarity maps of one frame.
#[derive(Clone, Debug)]
pub struct FrameMaps {
    pub occupancy: Occupancy,
    pub target_cells: Vec<Option<Cell>>,
    /// `None` for targets outside the grid.
    pub locals: Vec<Option<LocalSimilarityMap>>,
}

impl FrameMaps {
    /// Builds each target's global map from selective similarities at the
    /// occupied cells, then crops it around the target.
    pub fn build(
        geom: &GridGeometry,
        targets: &[BoundingBox3D],
        dets: &[(BoundingBox3D, f64)],
        similarity: &[Vec<f32>],
    ) -> Self {
        let occupancy = Occupancy::from_boxes(geom, dets.iter().copied());
        let target_cells: Vec<Option<Cell>> = targets.iter().map(|b| geom.box_cell(b)).collect();
        let locals = target_cells
            .iter()
            .enumerate()
            .map(|(i, cell)| {
                cell.map(|c| {
                    let global = build_global_map(geom, &occupancy, |j| similarity[i][j]);
                    crop_local_map(&global, c)
                })
            })
            .collect();
        Self { occupancy, target_cells, locals }
    }
}
