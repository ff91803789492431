//! Learned similarity and data association for online 3D multi-object
//! tracking.
//!
//! A Siamese similarity network ([`simnet`]) scores target/detection pairs
//! from box geometry and appearance, arranges the scores into local similarity
//! maps, and an association network ([`assocnet`]) turns those maps into
//! per-target association probabilities. The [`tracker`] wraps both in a
//! Kalman filter with Bayesian existence management, [`baselines`] provides
//! the classical costs and solvers used for comparison, and [`eval`]
//! computes CLEAR MOT metrics.

pub mod tensor;
pub mod assocnet;
pub mod association;
pub mod baselines;
pub mod config;
pub mod data;
pub mod eval;
pub mod geometry;
pub mod pipeline;
pub mod rng;
pub mod simnet;
pub mod tracker;
