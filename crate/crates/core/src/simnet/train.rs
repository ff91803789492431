//! Similarity-network training loop.

use std::io::Write;

use rand::seq::SliceRandom;
use serde::Serialize;

use super::network::{pair_scores, simnet_loss, SimNet, SimNetError};
use super::pairs::{generate_pair_specs, sample_specs, PairSpec, Split};
use crate::config::RunConfig;
use crate::data::Scenario;
use crate::geometry::BoundingBox3D;
use crate::rng;
use crate::tensor::{Adam, Mode, StepOutcome, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub network: &'static str,
    pub epoch: u32,
    pub steps: usize,
    pub skipped_steps: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainReport {
    pub history: Vec<EpochLog>,
    pub best_epoch: u32,
    pub best_val_accuracy: f64,
    pub stopped_early: bool,
}

/// Stacks `[targets; detections]` of the given pairs.
fn stack(net: &SimNet, specs: &[PairSpec]) -> Result<(crate::simnet::ObjectBatch<f32>, Vec<i8>), SimNetError> {
    let pairs: Vec<_> = specs.iter().map(|s| s.materialize(&net.shape)).collect();
    let mut boxes: Vec<BoundingBox3D> = pairs.iter().map(|p| p.target_box).collect();
    boxes.extend(pairs.iter().map(|p| p.detection_box));
    let mut apps: Vec<&Tensor<f32>> = pairs.iter().map(|p| &p.target_appearance).collect();
    apps.extend(pairs.iter().map(|p| &p.detection_appearance));
    let labels = pairs.iter().map(|p| p.label).collect();
    Ok((net.batch(&boxes, &apps)?, labels))
}

struct StepResult {
    loss: f64,
    correct: usize,
    outcome: StepOutcome,
}

fn train_step(net: &mut SimNet, adam: &mut Adam, specs: &[PairSpec], epoch: u32, seed: u64) -> Result<StepResult, SimNetError> {
    let (batch, labels) = stack(net, specs)?;
    let n = specs.len();
    let threshold = net.threshold;
    let (grads, loss, correct, stats) = {
        let mut tape = Tape::new(&net.store);
        let br = net.forward(&mut tape, &batch, Mode::Train, seed)?;
        let y = pair_scores(&mut tape, &br, n)?;
        let (l, _) = simnet_loss(&mut tape, y, &labels, net.config.gamma, net.config.cost_cutoff)?;
        let correct = tape.value(y).data().iter().zip(&labels).filter(|(s, &l)| (f64::from(**s) > threshold) == (l == 1)).count();
        let loss = tape.value(l).item() as f64;
        let grads = tape.backward(l)?;
        (grads, loss, correct, tape.take_batch_stats())
    };
    let outcome = adam.step(&mut net.store, &grads, epoch);
    if outcome == StepOutcome::Applied {
        net.layers.absorb(&stats)?;
    }
    Ok(StepResult { loss, correct, outcome })
}

/// Pair scores `ŷ` of `specs`, in order.
pub fn spec_scores(net: &SimNet, specs: &[PairSpec]) -> Result<Vec<f64>, SimNetError> {
    let mut out = Vec::with_capacity(specs.len());
    for chunk in specs.chunks(256) {
        let pairs: Vec<_> = chunk.iter().map(|s| s.materialize(&net.shape)).collect();
        let tb: Vec<_> = pairs.iter().map(|p| p.target_box).collect();
        let ta: Vec<_> = pairs.iter().map(|p| &p.target_appearance).collect();
        let db: Vec<_> = pairs.iter().map(|p| p.detection_box).collect();
        let da: Vec<_> = pairs.iter().map(|p| &p.detection_appearance).collect();
        let t = net.embed(&tb, &ta)?;
        let d = net.embed(&db, &da)?;
        out.extend((0..pairs.len()).map(|i| f64::from(t.similarity(i, &d, i))));
    }
    Ok(out)
}

/// Fraction of pairs classified correctly at `threshold`.
pub fn accuracy_at(scores: &[f64], labels: &[i8], threshold: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let correct = scores.iter().zip(labels).filter(|(&s, &l)| (s > threshold) == (l == 1)).count();
    correct as f64 / scores.len() as f64
}

/// Threshold maximising accuracy: the midpoint of the best gap between
/// consecutive sorted scores. Ties go to the threshold nearest zero.
pub fn sweep_threshold(scores: &[f64], labels: &[i8]) -> (f64, f64) {
    let n = scores.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // everything above a threshold below the minimum is called positive
    let mut correct = labels.iter().filter(|&&l| l == 1).count() as i64;
    let mut best = (correct, scores[idx[0]] - 1e-6);
    for k in 0..n {
        correct += if labels[idx[k]] == 1 { -1 } else { 1 };
        if k + 1 < n && scores[idx[k + 1]] == scores[idx[k]] {
            continue;
        }
        let t = if k + 1 < n { 0.5 * (scores[idx[k]] + scores[idx[k + 1]]) } else { scores[idx[k]] + 1e-6 };
        if correct > best.0 || (correct == best.0 && t.abs() < best.1.abs()) {
            best = (correct, t);
        }
    }
    (best.1, best.0 as f64 / n as f64)
}

/// Fraction of pairs classified correctly at the network's threshold.
pub fn pair_accuracy(net: &SimNet, specs: &[PairSpec]) -> Result<f64, SimNetError> {
    let scores = spec_scores(net, specs)?;
    let labels: Vec<i8> = specs.iter().map(|s| s.label).collect();
    Ok(accuracy_at(&scores, &labels, net.threshold))
}

/// Validation pairs used for model selection.
pub fn validation_specs(cfg: &RunConfig, scenarios: &[Scenario]) -> Vec<PairSpec> {
    let (all, _) = generate_pair_specs(scenarios, Split::Validation, &cfg.pairs, &cfg.noise, cfg.seed);
    let mut r = rng::stream(cfg.seed, &[rng::TAG_PAIRS, u64::MAX]);
    sample_specs(&all, cfg.simnet.validation_pairs, &mut r)
}

/// Trains from `start` (or a fresh network), writing one JSON line per epoch
/// to `log`. Returns the network of the best validation epoch.
pub fn train_simnet(
    cfg: &RunConfig,
    scenarios: &[Scenario],
    start: Option<SimNet>,
    log: &mut dyn Write,
) -> Result<(SimNet, TrainReport), SimNetError> {
    let sc = &cfg.simnet;
    let mut net = match start {
        Some(n) => n,
        None => SimNet::new(sc, &cfg.appearance, rng::derive(cfg.seed, &[rng::TAG_INIT, 1])),
    };
    let (train, stats) = generate_pair_specs(scenarios, Split::Train, &cfg.pairs, &cfg.noise, cfg.seed);
    log::info!(
        "simnet pairs: {} positive, {} negative, {} discarded, {} redundant",
        stats.positives,
        stats.negatives,
        stats.discarded,
        stats.redundant
    );
    if stats.positives == 0 {
        return Err(SimNetError::Batch("no positive training pairs".into()));
    }
    let val = validation_specs(cfg, scenarios);
    let val_labels: Vec<i8> = val.iter().map(|s| s.label).collect();
    let mut adam = Adam::new(sc.schedule);
    let mut report = TrainReport { best_val_accuracy: -1.0, ..Default::default() };
    let mut best = net.clone();
    let mut since_best = 0;
    let first = net.epochs;
    for epoch in first..first + sc.epochs {
        let mut r = rng::stream(cfg.seed, &[rng::TAG_BATCH, 1, epoch as u64]);
        let mut specs = sample_specs(&train, sc.train_pairs, &mut r);
        specs.shuffle(&mut r);
        let (mut loss, mut correct, mut seen, mut steps, mut skipped) = (0.0, 0usize, 0usize, 0usize, 0usize);
        for (k, chunk) in specs.chunks(sc.batch_pairs).enumerate() {
            if !chunk.iter().any(|p| p.label == 1) {
                continue;
            }
            let seed = rng::derive(cfg.seed, &[rng::TAG_DROPOUT, epoch as u64, k as u64]);
            let s = train_step(&mut net, &mut adam, chunk, epoch, seed)?;
            if s.outcome == StepOutcome::SkippedNonFinite {
                skipped += 1;
            }
            loss += s.loss * chunk.len() as f64;
            correct += s.correct;
            seen += chunk.len();
            steps += 1;
        }
        net.epochs = epoch + 1;
        let (threshold, val_accuracy) = sweep_threshold(&spec_scores(&net, &val)?, &val_labels);
        net.threshold = threshold;
        let entry = EpochLog {
            network: "simnet",
            epoch,
            steps,
            skipped_steps: skipped,
            learning_rate: sc.schedule.rate(epoch),
            train_loss: loss / seen.max(1) as f64,
            train_accuracy: correct as f64 / seen.max(1) as f64,
            val_accuracy,
            threshold,
        };
        log::info!("simnet epoch {epoch}: loss {:.4}, val accuracy {:.4} at {threshold:.3}", entry.train_loss, val_accuracy);
        writeln!(log, "{}", serde_json::to_string(&entry).expect("serializable")).map_err(|e| SimNetError::Batch(e.to_string()))?;
        report.history.push(entry);
        if val_accuracy > report.best_val_accuracy {
            report.best_val_accuracy = val_accuracy;
            report.best_epoch = epoch;
            best = net.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= sc.patience {
                report.stopped_early = true;
                break;
            }
        }
    }
    Ok((best, report))
}
