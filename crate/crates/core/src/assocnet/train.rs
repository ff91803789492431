//! Association-network training loop.

use std::io::Write;

use rand::seq::SliceRandom;
use serde::Serialize;

use super::frames::{sample_frames, LabeledFrame};
use super::network::{AssocNet, AssocNetError, AssocSample};
use crate::association::{ScoreError, Scorer};
use crate::config::RunConfig;
use crate::data::Scenario;
use crate::rng;
use crate::simnet::{GridGeometry, Split};
use crate::tensor::{Adam, Mode, StepOutcome, Tape};

#[derive(Debug, thiserror::Error)]
pub enum AssocTrainError {
    #[error(transparent)]
    Net(#[from] AssocNetError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error("log write failed: {0}")]
    Log(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssocEpochLog {
    pub network: &'static str,
    pub epoch: u32,
    pub steps: usize,
    pub skipped_steps: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AssocTrainReport {
    pub history: Vec<AssocEpochLog>,
    pub best_epoch: u32,
    pub best_val_accuracy: f64,
    pub stopped_early: bool,
}

/// Per-target argmax accuracy, optionally restricted to slots selected by
/// `keep(frame, slot)`. Returns `(correct, counted)`.
pub fn argmax_accuracy(
    net: &AssocNet,
    frames: &[LabeledFrame],
    keep: impl Fn(&LabeledFrame, usize) -> bool,
) -> Result<(usize, usize), AssocNetError> {
    let (mut correct, mut counted) = (0, 0);
    for chunk in frames.chunks(32) {
        let samples: Vec<&AssocSample> = chunk.iter().map(|f| &f.sample).collect();
        let maps = net.predict(&samples)?;
        for (f, m) in chunk.iter().zip(&maps) {
            for (slot, map) in m.iter().enumerate() {
                if keep(f, slot) {
                    counted += 1;
                    if map.argmax() == f.sample.truth[slot] as usize {
                        correct += 1;
                    }
                }
            }
        }
    }
    Ok((correct, counted))
}

fn ratio((c, n): (usize, usize)) -> f64 {
    if n == 0 {
        0.0
    } else {
        c as f64 / n as f64
    }
}

/// Trains on frames scored by `scorer`, writing one JSON line per epoch.
/// Returns the network of the best validation epoch.
pub fn train_assocnet(
    cfg: &RunConfig,
    scenarios: &[Scenario],
    scorer: &Scorer,
    start: Option<AssocNet>,
    log: &mut dyn Write,
) -> Result<(AssocNet, AssocTrainReport), AssocTrainError> {
    let ac = &cfg.assocnet;
    let side = GridGeometry::new(&cfg.grid).side();
    let mut net = match start {
        Some(n) => n,
        None => AssocNet::new(ac, side, rng::derive(cfg.seed, &[rng::TAG_INIT, 2])),
    };
    let train = sample_frames(cfg, scenarios, Split::Train, &cfg.noise, scorer, ac.train_frames, cfg.seed)?;
    let val = sample_frames(cfg, scenarios, Split::Validation, &cfg.noise, scorer, ac.validation_frames, cfg.seed)?;
    log::info!("assocnet frames: {} train, {} validation", train.len(), val.len());
    let mut adam = Adam::new(ac.schedule);
    let mut report = AssocTrainReport { best_val_accuracy: -1.0, ..Default::default() };
    let mut best = net.clone();
    let mut since_best = 0;
    let first = net.epochs;
    for epoch in first..first + ac.epochs {
        let mut r = rng::stream(cfg.seed, &[rng::TAG_BATCH, 2, epoch as u64]);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut r);
        let (mut loss, mut targets, mut steps, mut skipped) = (0.0, 0usize, 0usize, 0usize);
        for chunk in order.chunks(ac.batch_frames) {
            let samples: Vec<&AssocSample> = chunk.iter().map(|&i| &train[i].sample).filter(|s| s.targets > 0).collect();
            if samples.len() < 2 {
                continue;
            }
            let input = net.input(&samples)?;
            let (grads, l, stats) = {
                let mut tape = Tape::new(&net.store);
                let probs = net.forward(&mut tape, &input, Mode::Train)?;
                let l = net.loss(&mut tape, probs, &input, &samples)?;
                let value = tape.value(l).item() as f64;
                (tape.backward(l)?, value, tape.take_batch_stats())
            };
            if adam.step(&mut net.store, &grads, epoch) == StepOutcome::Applied {
                net.layers.absorb(&stats)?;
            } else {
                skipped += 1;
            }
            loss += l;
            targets += input.real_rows.len();
            steps += 1;
        }
        net.epochs = epoch + 1;
        let val_accuracy = ratio(argmax_accuracy(&net, &val, |_, _| true)?);
        let entry = AssocEpochLog {
            network: "assocnet",
            epoch,
            steps,
            skipped_steps: skipped,
            learning_rate: ac.schedule.rate(epoch),
            train_loss: loss / targets.max(1) as f64,
            val_accuracy,
        };
        log::info!("assocnet epoch {epoch}: loss/target {:.4}, val accuracy {:.4}", entry.train_loss, val_accuracy);
        writeln!(log, "{}", serde_json::to_string(&entry).expect("serializable"))?;
        report.history.push(entry);
        if val_accuracy > report.best_val_accuracy {
            report.best_val_accuracy = val_accuracy;
            report.best_epoch = epoch;
            best = net.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= ac.patience {
                report.stopped_early = true;
                break;
            }
        }
    }
    Ok((best, report))
}
