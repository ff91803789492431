//! Baseline association: hand-crafted costs and classical assignment
//! solvers.

pub mod assignment;
pub mod costs;

pub use assignment::{greedy, hungarian, Assignment, AssignmentError};
pub use costs::{
    bhattacharyya, bhattacharyya_similarity, chi_square, chi_square_similarity, distance_similarity, euclidean,
    histogram, manhattan, CostError, CostKind, HistogramDistance, BHATTACHARYYA_CAP,
};
