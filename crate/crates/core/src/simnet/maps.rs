//! Global and local similarity maps.
//!
//! A global map places one score per detection at the detection's grid
//! cell; every other cell is zero. Scores are computed only at occupied
//! cells (selective dot products), which is equivalent to convolving the
//! target's unit feature as a 1×1 kernel over a zero-filled feature grid.

use crate::config::GridConfig;
use crate::data::Detection;
use crate::geometry::BoundingBox3D;

/// Cell index pair `(ix, iy)`: `ix` along the lateral axis, `iy` forward.
pub type Cell = (usize, usize);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridGeometry {
    pub x_min: f64,
    pub y_min: f64,
    pub resolution: f64,
    pub nx: usize,
    pub ny: usize,
    pub radius: usize,
}

impl GridGeometry {
    pub fn new(g: &GridConfig) -> Self {
        Self {
            x_min: g.x_min,
            y_min: g.y_min,
            resolution: g.resolution,
            nx: ((g.x_max - g.x_min) / g.resolution).round() as usize,
            ny: ((g.y_max - g.y_min) / g.resolution).round() as usize,
            radius: g.local_radius,
        }
    }

    /// Side of the square local crop.
    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn local_cells(&self) -> usize {
        self.side() * self.side()
    }

    pub fn cell(&self, x: f64, y: f64) -> Option<Cell> {
        let fx = ((x - self.x_min) / self.resolution).floor();
        let fy = ((y - self.y_min) / self.resolution).floor();
        if !(fx >= 0.0 && fy >= 0.0) {
            return None;
        }
        let (ix, iy) = (fx as usize, fy as usize);
        (ix < self.nx && iy < self.ny).then_some((ix, iy))
    }

    pub fn box_cell(&self, b: &BoundingBox3D) -> Option<Cell> {
        self.cell(b.cx, b.cy)
    }

    /// Flat index within the local crop centred on `target`, if `cell` is
    /// inside it.
    pub fn local_index(&self, target: Cell, cell: Cell) -> Option<usize> {
        let r = self.radius as i64;
        let a = cell.0 as i64 - target.0 as i64 + r;
        let b = cell.1 as i64 - target.1 as i64 + r;
        let s = self.side() as i64;
        (a >= 0 && b >= 0 && a < s && b < s).then(|| (a * s + b) as usize)
    }
}

/// Which detection owns each occupied cell of a frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Occupancy {
    /// `(cell, detection index)` for every winning detection, in detection order.
    pub cells: Vec<(Cell, usize)>,
    /// Cell of each detection, `None` if outside the grid or beaten in a collision.
    pub owner_cell: Vec<Option<Cell>>,
    pub collisions: usize,
    pub outside: usize,
}

impl Occupancy {
    /// Resolves cell collisions by detector score, ties to the lower index.
    pub fn build(geom: &GridGeometry, detections: &[Detection]) -> Self {
        Self::from_boxes(geom, detections.iter().map(|d| (d.bbox, d.score)))
    }

    pub fn from_boxes(geom: &GridGeometry, items: impl Iterator<Item = (BoundingBox3D, f64)>) -> Self {
        let items: Vec<(BoundingBox3D, f64)> = items.collect();
        let mut owner: std::collections::HashMap<Cell, usize> = std::collections::HashMap::new();
        let mut out = Occupancy { owner_cell: vec![None; items.len()], ..Default::default() };
        for (j, (b, score)) in items.iter().enumerate() {
            let Some(cell) = geom.box_cell(b) else {
                log::warn!("detection {j} at ({:.2}, {:.2}) lies outside the grid; dropped", b.cx, b.cy);
                out.outside += 1;
                continue;
            };
            match owner.get(&cell) {
                Some(&k) => {
                    out.collisions += 1;
                    log::debug!("cell {cell:?} collision between detections {k} and {j}");
                    if *score > items[k].1 {
                        owner.insert(cell, j);
                    }
                }
                None => {
                    owner.insert(cell, j);
                }
            }
        }
        for (cell, j) in owner {
            out.owner_cell[j] = Some(cell);
        }
        out.cells = out.owner_cell.iter().enumerate().filter_map(|(j, c)| c.map(|c| (c, j))).collect();
        out
    }
}

/// Sparse global map of one target: scores at occupied cells only.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalSimilarityMap {
    pub geometry: GridGeometry,
    /// `(cell, detection index, score)`
    pub entries: Vec<(Cell, usize, f32)>,
}

impl GlobalSimilarityMap {
    pub fn dense(&self) -> Vec<f32> {
        let mut out = vec![0.0; self.geometry.nx * self.geometry.ny];
        for &((ix, iy), _, s) in &self.entries {
            out[ix * self.geometry.ny + iy] = s;
        }
        out
    }

    pub fn occupancy_mask(&self) -> Vec<bool> {
        let mut out = vec![false; self.geometry.nx * self.geometry.ny];
        for &((ix, iy), _, _) in &self.entries {
            out[ix * self.geometry.ny + iy] = true;
        }
        out
    }
}

/// Builds the global map of target `i` from a score function evaluated
/// only at occupied cells.
pub fn build_global_map(geom: &GridGeometry, occ: &Occupancy, score: impl Fn(usize) -> f32) -> GlobalSimilarityMap {
    GlobalSimilarityMap { geometry: *geom, entries: occ.cells.iter().map(|&(c, j)| (c, j, score(j))).collect() }
}

/// Local crop centred on `target`, zero-padded at the region border.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalSimilarityMap {
    pub center: Cell,
    /// Row-major `side × side` scores, `[ix offset][iy offset]`.
    pub scores: Vec<f32>,
    /// Occupied local cells and the detection at each.
    pub occupied: Vec<(usize, usize)>,
}

pub fn crop_local_map(global: &GlobalSimilarityMap, target: Cell) -> LocalSimilarityMap {
    let g = &global.geometry;
    let mut scores = vec![0.0; g.local_cells()];
    let mut occupied = Vec::new();
    for &(cell, j, s) in &global.entries {
        if let Some(k) = g.local_index(target, cell) {
            scores[k] = s;
            occupied.push((k, j));
        }
    }
    LocalSimilarityMap { center: target, scores, occupied }
}
