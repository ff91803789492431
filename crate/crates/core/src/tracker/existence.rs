//! Bayesian probability of existence.

use crate::config::TrackerConfig;

pub fn existence_predict(p: f64, cfg: &TrackerConfig) -> f64 {
    cfg.p_survive * p
}

pub fn existence_matched(p: f64, cfg: &TrackerConfig) -> f64 {
    let num = cfg.p_detect * p;
    let den = num + cfg.p_false_alarm * (1.0 - p);
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

pub fn existence_missed(p: f64, cfg: &TrackerConfig) -> f64 {
    let num = (1.0 - cfg.p_detect) * p;
    let den = num + (1.0 - cfg.p_false_alarm) * (1.0 - p);
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Number of consecutive missed frames (prediction then miss update) after
/// which a track starting at `p` falls below the prune threshold, or
/// `None` if it never does within `limit` frames.
pub fn misses_until_prune(mut p: f64, cfg: &TrackerConfig, limit: usize) -> Option<usize> {
    for k in 1..=limit {
        p = existence_missed(existence_predict(p, cfg), cfg);
        if p < cfg.prune_threshold {
            return Some(k);
        }
    }
    None
}
