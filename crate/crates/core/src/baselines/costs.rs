//! Hand-crafted association costs: centroid distances and appearance
//! histogram distances.

use crate::geometry::BoundingBox3D;

/// Value reported for histograms with no overlap, where the Bhattacharyya
/// distance is infinite.
pub const BHATTACHARYYA_CAP: f64 = 50.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostKind {
    Euclidean,
    Manhattan,
    Bhattacharyya,
    ChiSquare,
    SimNet,
}

impl CostKind {
    pub const BASELINES: [CostKind; 4] = [CostKind::Euclidean, CostKind::Manhattan, CostKind::Bhattacharyya, CostKind::ChiSquare];

    pub fn name(self) -> &'static str {
        match self {
            CostKind::Euclidean => "euclidean",
            CostKind::Manhattan => "manhattan",
            CostKind::Bhattacharyya => "bhattacharyya",
            CostKind::ChiSquare => "chi-square",
            CostKind::SimNet => "simnet",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [CostKind::Euclidean, CostKind::Manhattan, CostKind::Bhattacharyya, CostKind::ChiSquare, CostKind::SimNet]
            .into_iter()
            .find(|k| k.name() == s || (s == "chisquare" && *k == CostKind::ChiSquare))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CostError {
    #[error("histogram lengths differ: {0} vs {1}")]
    Length(usize, usize),
    #[error("histogram has zero total mass")]
    Empty,
    #[error("histogram has a negative or non-finite bin")]
    Invalid,
}

/// Euclidean centroid distance in 3D.
pub fn euclidean(a: &BoundingBox3D, b: &BoundingBox3D) -> f64 {
    ((a.cx - b.cx).powi(2) + (a.cy - b.cy).powi(2) + (a.cz - b.cz).powi(2)).sqrt()
}

/// Manhattan centroid distance in 3D.
pub fn manhattan(a: &BoundingBox3D, b: &BoundingBox3D) -> f64 {
    (a.cx - b.cx).abs() + (a.cy - b.cy).abs() + (a.cz - b.cz).abs()
}

/// Normalised histogram: `bins` bins per channel over the feature's own
/// value range (min-max per feature), concatenated over channels and
/// scaled to unit mass.
pub fn histogram(values: &[f32], channels: usize, bins: usize) -> Vec<f64> {
    let mut out = vec![0.0; channels * bins];
    if values.is_empty() || channels == 0 || bins == 0 {
        return out;
    }
    let lo = values.iter().copied().fold(f32::INFINITY, f32::min) as f64;
    let hi = values.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let width = (hi - lo).max(f64::MIN_POSITIVE);
    for (k, &v) in values.iter().enumerate() {
        let c = k % channels;
        let b = (((v as f64 - lo) / width) * bins as f64).floor().clamp(0.0, bins as f64 - 1.0) as usize;
        out[c * bins + b] += 1.0;
    }
    let total = values.len() as f64;
    out.iter_mut().for_each(|v| *v /= total);
    out
}

fn validate(p: &[f64], q: &[f64]) -> Result<(), CostError> {
    if p.len() != q.len() {
        return Err(CostError::Length(p.len(), q.len()));
    }
    for h in [p, q] {
        if h.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(CostError::Invalid);
        }
        if h.iter().sum::<f64>() <= 0.0 {
            return Err(CostError::Empty);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistogramDistance {
    pub value: f64,
    /// Set when the true distance is infinite and `value` is the cap.
    pub capped: bool,
}

/// `-ln Σ √(p·q)`, capped at [`BHATTACHARYYA_CAP`] for disjoint support.
pub fn bhattacharyya(p: &[f64], q: &[f64]) -> Result<HistogramDistance, CostError> {
    validate(p, q)?;
    let bc: f64 = p.iter().zip(q).map(|(a, b)| (a * b).sqrt()).sum();
    if bc <= 0.0 {
        return Ok(HistogramDistance { value: BHATTACHARYYA_CAP, capped: true });
    }
    let d = (-bc.ln()).max(0.0);
    Ok(if d > BHATTACHARYYA_CAP {
        HistogramDistance { value: BHATTACHARYYA_CAP, capped: true }
    } else {
        HistogramDistance { value: d, capped: false }
    })
}

/// `½ Σ (p - q)² / (p + q + ε)`.
pub fn chi_square(p: &[f64], q: &[f64], eps: f64) -> Result<f64, CostError> {
    validate(p, q)?;
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).powi(2) / (a + b + eps)).sum::<f64>())
}

/// Maps a gated distance to a similarity in `[-1, 1]`.
pub fn distance_similarity(d: f64, gate: f64) -> f64 {
    1.0 - 2.0 * (d / gate).min(1.0)
}

/// Bhattacharyya coefficient mapped to `[-1, 1]`.
pub fn bhattacharyya_similarity(d: f64) -> f64 {
    2.0 * (-d).exp() - 1.0
}

/// Chi-square (bounded by 1 for unit-mass histograms) mapped to `[-1, 1]`.
pub fn chi_square_similarity(d: f64) -> f64 {
    1.0 - 2.0 * d.min(1.0)
}
