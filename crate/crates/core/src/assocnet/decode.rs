//! Turns association maps into a one-to-one target/detection assignment.

use super::network::AssociationMap;
use crate::baselines::{hungarian, Assignment, AssignmentError};
use crate::simnet::LocalSimilarityMap;

/// Probability floor before taking logarithms.
const P_FLOOR: f64 = 1e-12;

/// Solves the assignment over `-ln p`. Each target may take an occupied
/// cell of its own map (that cell's detection) or its private spurious
/// outcome; targets without a map can only be spurious. Rows of the result
/// are targets, columns detections; targets left unassigned are missed.
pub fn decode(
    maps: &[Option<AssociationMap>],
    locals: &[Option<LocalSimilarityMap>],
    detections: usize,
) -> Result<Assignment, AssignmentError> {
    let n = maps.len();
    let cost = |p: f32| -(p as f64).max(P_FLOOR).ln();
    let mut costs = vec![vec![None; detections + n]; n];
    for (i, row) in costs.iter_mut().enumerate() {
        match (&maps[i], locals.get(i).and_then(|l| l.as_ref())) {
            (Some(m), Some(local)) => {
                for &(k, j) in &local.occupied {
                    row[j] = Some(cost(m.cells[k]));
                }
                row[detections + i] = Some(cost(m.spurious));
            }
            _ => row[detections + i] = Some(0.0),
        }
    }
    let full = hungarian(&costs)?;
    let pairs: Vec<(usize, usize)> = full.pairs.into_iter().filter(|&(_, j)| j < detections).collect();
    let mut rows = vec![false; n];
    let mut cols = vec![false; detections];
    for &(i, j) in &pairs {
        rows[i] = true;
        cols[j] = true;
    }
    Ok(Assignment {
        pairs,
        unassigned_rows: (0..n).filter(|&i| !rows[i]).collect(),
        unassigned_cols: (0..detections).filter(|&j| !cols[j]).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(cells: &[(usize, f32)], spurious: f32) -> AssociationMap {
        let mut c = vec![0.0; 441];
        for &(k, p) in cells {
            c[k] = p;
        }
        AssociationMap { cells: c, spurious }
    }

    fn local(occ: &[(usize, usize)]) -> LocalSimilarityMap {
        LocalSimilarityMap { center: (0, 0), scores: vec![0.0; 441], occupied: occ.to_vec() }
    }

    #[test]
    fn contested_detection_goes_to_the_stronger_claim() {
        let maps = vec![Some(map(&[(5, 0.9)], 0.1)), Some(map(&[(7, 0.6)], 0.3))];
        let locals = vec![Some(local(&[(5, 0)])), Some(local(&[(7, 0)]))];
        let a = decode(&maps, &locals, 1).unwrap();
        assert_eq!(a.pairs, vec![(0, 0)]);
        assert_eq!(a.unassigned_rows, vec![1]);
    }

    #[test]
    fn spurious_wins_when_most_probable() {
        let maps = vec![Some(map(&[(5, 0.2)], 0.8))];
        let a = decode(&maps, &[Some(local(&[(5, 0)]))], 1).unwrap();
        assert!(a.pairs.is_empty());
        assert_eq!(a.unassigned_cols, vec![0]);
    }

    #[test]
    fn targets_without_maps_are_missed() {
        let a = decode(&[None], &[None], 2).unwrap();
        assert!(a.pairs.is_empty());
        assert_eq!(a.unassigned_rows, vec![0]);
        assert_eq!(a.unassigned_cols, vec![0, 1]);
        let e = decode(&[], &[], 0).unwrap();
        assert!(e.pairs.is_empty());
    }
}
