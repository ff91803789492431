//! One-to-one assignment solvers over cost matrices with infeasible cells.

/// Rows and columns matched by a solver, plus everything left over.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Assignment {
    /// `(row, column)` pairs, sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub unassigned_rows: Vec<usize>,
    pub unassigned_cols: Vec<usize>,
}

impl Assignment {
    fn from_pairs(mut pairs: Vec<(usize, usize)>, rows: usize, cols: usize) -> Self {
        pairs.sort_unstable();
        let mut rused = vec![false; rows];
        let mut cused = vec![false; cols];
        for &(r, c) in &pairs {
            rused[r] = true;
            cused[c] = true;
        }
        Self {
            pairs,
            unassigned_rows: (0..rows).filter(|&r| !rused[r]).collect(),
            unassigned_cols: (0..cols).filter(|&c| !cused[c]).collect(),
        }
    }

    pub fn column_of(&self, row: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == row).map(|p| p.1)
    }

    /// Total cost of the matched cells, summed in row order.
    pub fn total_cost(&self, costs: &[Vec<Option<f64>>]) -> f64 {
        self.pairs.iter().map(|&(r, c)| costs[r][c].expect("assigned cell is feasible")).sum()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AssignmentError {
    #[error("row {row} has {found} columns, expected {expected}")]
    Ragged { row: usize, found: usize, expected: usize },
    #[error("non-finite cost at ({0}, {1})")]
    NonFinite(usize, usize),
}

fn check(costs: &[Vec<Option<f64>>]) -> Result<usize, AssignmentError> {
    let cols = costs.first().map_or(0, |r| r.len());
    for (i, row) in costs.iter().enumerate() {
        if row.len() != cols {
            return Err(AssignmentError::Ragged { row: i, found: row.len(), expected: cols });
        }
        if let Some(j) = row.iter().position(|c| c.is_some_and(|v| !v.is_finite())) {
            return Err(AssignmentError::NonFinite(i, j));
        }
    }
    Ok(cols)
}

/// Minimum-cost assignment (Hungarian method with potentials). `None`
/// marks an infeasible cell. Among assignments with the most feasible
/// matches, the one with the least total cost is returned.
pub fn hungarian(costs: &[Vec<Option<f64>>]) -> Result<Assignment, AssignmentError> {
    let cols = check(costs)?;
    let rows = costs.len();
    let n = rows.max(cols);
    if n == 0 {
        return Ok(Assignment::default());
    }
    // Infeasible and padding cells cost more than any feasible assignment.
    let span: f64 = costs.iter().flatten().flatten().map(|v| v.abs()).sum::<f64>();
    let big = 2.0 * span + 1.0;
    let cell = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            costs[i][j].unwrap_or(big)
        } else {
            big
        }
    };
    // 1-indexed potentials; p[j] is the row matched to column j.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cell(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let pairs = (1..=n)
        .filter(|&j| p[j] != 0)
        .map(|j| (p[j] - 1, j - 1))
        .filter(|&(i, j)| i < rows && j < cols && costs[i][j].is_some())
        .collect();
    Ok(Assignment::from_pairs(pairs, rows, cols))
}

/// Repeatedly takes the cheapest remaining feasible cell. Ties go to the
/// lower row, then the lower column.
pub fn greedy(costs: &[Vec<Option<f64>>]) -> Result<Assignment, AssignmentError> {
    let cols = check(costs)?;
    let mut cells: Vec<(f64, usize, usize)> = costs
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().enumerate().filter_map(move |(j, c)| c.map(|v| (v, i, j))))
        .collect();
    cells.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut rused = vec![false; costs.len()];
    let mut cused = vec![false; cols];
    let mut pairs = Vec::new();
    for (_, i, j) in cells {
        if !rused[i] && !cused[j] {
            rused[i] = true;
            cused[j] = true;
            pairs.push((i, j));
        }
    }
    Ok(Assignment::from_pairs(pairs, costs.len(), cols))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense(m: &[&[f64]]) -> Vec<Vec<Option<f64>>> {
        m.iter().map(|r| r.iter().map(|&v| Some(v)).collect()).collect()
    }

    /// Exhaustive oracle: most feasible matches first, then least cost.
    fn brute(costs: &[Vec<Option<f64>>]) -> (usize, f64) {
        let rows = costs.len();
        let cols = costs.first().map_or(0, |r| r.len());
        let mut best = (0usize, 0.0f64);
        let mut first = true;
        let mut used = vec![false; cols];
        fn rec(
            i: usize,
            costs: &[Vec<Option<f64>>],
            used: &mut Vec<bool>,
            count: usize,
            total: f64,
            best: &mut (usize, f64),
            first: &mut bool,
        ) {
            if i == costs.len() {
                if *first || count > best.0 || (count == best.0 && total < best.1) {
                    *best = (count, total);
                    *first = false;
                }
                return;
            }
            rec(i + 1, costs, used, count, total, best, first);
            for j in 0..used.len() {
                if !used[j] {
                    if let Some(c) = costs[i][j] {
                        used[j] = true;
                        rec(i + 1, costs, used, count + 1, total + c, best, first);
                        used[j] = false;
                    }
                }
            }
        }
        let _ = rows;
        rec(0, costs, &mut used, 0, 0.0, &mut best, &mut first);
        best
    }

    #[test]
    fn reference_example() {
        let c = dense(&[&[4.0, 1.0, 3.0], &[2.0, 0.0, 5.0], &[3.0, 2.0, 2.0]]);
        let a = hungarian(&c).unwrap();
        assert_eq!(a.total_cost(&c), 5.0);
        assert_eq!(a.pairs, vec![(0, 1), (1, 0), (2, 2)]);
    }

    #[test]
    fn single_cell_and_empty() {
        let c = dense(&[&[3.5]]);
        assert_eq!(hungarian(&c).unwrap().pairs, vec![(0, 0)]);
        let e: Vec<Vec<Option<f64>>> = vec![];
        assert_eq!(hungarian(&e).unwrap(), Assignment::default());
        let rows_only = vec![vec![], vec![]];
        let a = hungarian(&rows_only).unwrap();
        assert_eq!(a.unassigned_rows, vec![0, 1]);
    }

    #[test]
    fn rectangular_leaves_extras_unassigned() {
        let c = dense(&[&[1.0, 9.0, 9.0, 0.5], &[9.0, 1.0, 9.0, 9.0]]);
        let a = hungarian(&c).unwrap();
        assert_eq!(a.pairs, vec![(0, 3), (1, 1)]);
        assert_eq!(a.unassigned_cols, vec![0, 2]);
        let t: Vec<Vec<Option<f64>>> = (0..4).map(|j| (0..2).map(|i| c[i][j]).collect()).collect();
        let b = hungarian(&t).unwrap();
        assert_eq!(b.pairs, vec![(1, 1), (3, 0)]);
        assert_eq!(b.unassigned_rows, vec![0, 2]);
    }

    #[test]
    fn infeasible_cells_are_never_used() {
        let c = vec![vec![None, Some(1.0)], vec![None, Some(2.0)]];
        let a = hungarian(&c).unwrap();
        assert_eq!(a.pairs.len(), 1);
        assert_eq!(a.pairs[0], (0, 1));
        assert_eq!(a.unassigned_rows, vec![1]);
        let none = vec![vec![None; 3]; 2];
        assert!(hungarian(&none).unwrap().pairs.is_empty());
    }

    #[test]
    fn greedy_can_be_suboptimal() {
        let c = dense(&[&[1.0, 2.0], &[2.0, 100.0]]);
        let g = greedy(&c).unwrap();
        assert_eq!(g.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(hungarian(&c).unwrap().total_cost(&c), 4.0);
    }

    #[test]
    fn errors() {
        let ragged = vec![vec![Some(1.0)], vec![Some(1.0), Some(2.0)]];
        assert!(matches!(hungarian(&ragged), Err(AssignmentError::Ragged { .. })));
        let nan = vec![vec![Some(f64::NAN)]];
        assert!(matches!(greedy(&nan), Err(AssignmentError::NonFinite(0, 0))));
    }

    fn matrix(max: usize) -> impl Strategy<Value = Vec<Vec<Option<f64>>>> {
        (1..=max, 1..=max).prop_flat_map(|(r, c)| {
            proptest::collection::vec(
                proptest::collection::vec(prop_oneof![4 => (0u32..1000).prop_map(|v| Some(v as f64)), 1 => Just(None)], c),
                r,
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn matches_exhaustive_search(c in matrix(7)) {
            let a = hungarian(&c).unwrap();
            let (count, cost) = brute(&c);
            prop_assert_eq!(a.pairs.len(), count);
            prop_assert_eq!(a.total_cost(&c), cost);
            let mut cols: Vec<usize> = a.pairs.iter().map(|p| p.1).collect();
            cols.sort_unstable();
            cols.dedup();
            prop_assert_eq!(cols.len(), a.pairs.len());
        }

        #[test]
        fn greedy_is_a_valid_matching(c in matrix(7)) {
            let g = greedy(&c).unwrap();
            let h = hungarian(&c).unwrap();
            prop_assert!(g.pairs.iter().all(|&(i, j)| c[i][j].is_some()));
            prop_assert_eq!(g.pairs.len() + g.unassigned_rows.len(), c.len());
            if g.pairs.len() == h.pairs.len() {
                prop_assert!(g.total_cost(&c) >= h.total_cost(&c));
            }
        }
    }
}
