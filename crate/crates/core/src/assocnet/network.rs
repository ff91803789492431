//! Association network over stacked local similarity maps.
//!
//! Input `[B, S, S, N_max]`: one local map per target slot. Three dilated
//! 3×3 convolutions (BN, leaky ReLU) and a 3×3 head produce one logit map
//! per slot; unoccupied cells and empty slots are pushed to `M_NEG`. A
//! dense branch over the occupancy-masked logits scores the spurious
//! (no-detection) outcome of every slot. Each slot's cells plus its
//! spurious entry go through a softmax.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::AssocNetConfig;
use crate::simnet::{load_store, push_stats, read_stats};
use crate::tensor::{
    BatchNorm, BatchStats, Checkpoint, CheckpointError, Conv2d, Dense, Elem, Mode, Padding, ParamStore, Tape, Tensor,
    TensorError, Var,
};

pub const CHECKPOINT_KIND: &str = "assocnet";

#[derive(Debug, thiserror::Error)]
pub enum AssocNetError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{0} targets exceed the network capacity of {1}")]
    Capacity(usize, usize),
    #[error("invalid sample: {0}")]
    Sample(String),
    #[error("network has not seen any training batch (no batch-norm statistics)")]
    Untrained,
}

/// Sparse description of one frame: which slot sees which score where, and
/// optionally the true outcome of each slot.
#[derive(Clone, Debug, PartialEq)]
pub struct AssocSample {
    pub targets: usize,
    /// `(slot, local cell, score)` for every occupied cell of every slot.
    pub entries: Vec<(u16, u16, f32)>,
    /// Per slot: the true local cell, or `cells` for spurious.
    pub truth: Vec<u16>,
}

#[derive(Clone, Debug)]
pub struct AssocNetLayers {
    pub convs: Vec<Conv2d>,
    pub bns: Vec<BatchNorm>,
    pub head: Conv2d,
    pub spurious_hidden: Dense,
    pub spurious_out: Dense,
}

impl AssocNetLayers {
    pub fn absorb(&mut self, stats: &[BatchStats]) -> Result<(), TensorError> {
        for s in stats {
            for bn in self.bns.iter_mut().filter(|bn| bn.name == s.layer) {
                bn.absorb(&s.mean, &s.var)?;
            }
        }
        Ok(())
    }
}

/// Dense network inputs for a batch.
#[derive(Clone, Debug)]
pub struct AssocInput<T: Elem = f32> {
    pub maps: Tensor<T>,
    /// Additive mask: zero at occupied cells, `M_NEG` elsewhere.
    pub mask: Tensor<T>,
    /// One at occupied cells.
    pub occupancy: Tensor<T>,
    /// Output rows belonging to real targets, in sample then slot order.
    pub real_rows: Vec<usize>,
}

/// Per-target output: probabilities over local cells plus spurious.
#[derive(Clone, Debug, PartialEq)]
pub struct AssociationMap {
    pub cells: Vec<f32>,
    pub spurious: f32,
}

impl AssociationMap {
    /// Index of the most probable outcome; `cells.len()` means spurious.
    pub fn argmax(&self) -> usize {
        let mut best = (self.cells.len(), self.spurious);
        for (k, &p) in self.cells.iter().enumerate() {
            if p > best.1 {
                best = (k, p);
            }
        }
        best.0
    }
}

#[derive(Clone, Debug)]
pub struct AssocNet<T: Elem = f32> {
    pub config: AssocNetConfig,
    /// Side of the local map.
    pub side: usize,
    pub store: ParamStore<T>,
    pub layers: AssocNetLayers,
    pub epochs: u32,
}

impl<T: Elem> AssocNet<T> {
    pub fn new(config: &AssocNetConfig, side: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let leak = config.leaky_slope;
        let n = config.n_max;
        let mut convs = Vec::new();
        let mut bns = Vec::new();
        let mut cin = n;
        for (k, (&f, &d)) in config.filters.iter().zip(&config.dilations).enumerate() {
            convs.push(Conv2d::init(&mut s, &format!("trunk.conv{k}"), 3, cin, f, d, Padding::Same, leak, &mut rng));
            bns.push(BatchNorm::init(&mut s, &format!("trunk.bn{k}"), f));
            cin = f;
        }
        let head = Conv2d::init(&mut s, "head.conv", 3, cin, n, 1, Padding::Same, 1.0, &mut rng);
        let flat = side * side * n;
        let spurious_hidden = Dense::init(&mut s, "spurious.fc1", flat, config.spurious_hidden, leak, &mut rng);
        let spurious_out = Dense::init(&mut s, "spurious.fc2", config.spurious_hidden, n, 1.0, &mut rng);
        Self {
            config: config.clone(),
            side,
            store: s,
            layers: AssocNetLayers { convs, bns, head, spurious_hidden, spurious_out },
            epochs: 0,
        }
    }

    pub fn cells(&self) -> usize {
        self.side * self.side
    }

    pub fn is_trained(&self) -> bool {
        self.layers.bns.iter().all(|bn| bn.stats.is_some())
    }

    /// Dense tensors for a batch of samples.
    pub fn input(&self, samples: &[&AssocSample]) -> Result<AssocInput<T>, AssocNetError> {
        let n = self.config.n_max;
        let cells = self.cells();
        let b = samples.len();
        let shape = [b, self.side, self.side, n];
        let mut maps = vec![T::zero(); b * cells * n];
        let mut mask = vec![T::of(self.config.m_neg); b * cells * n];
        let mut occ = vec![T::zero(); b * cells * n];
        let mut real_rows = Vec::new();
        for (bi, s) in samples.iter().enumerate() {
            if s.targets > n {
                return Err(AssocNetError::Capacity(s.targets, n));
            }
            for &(slot, cell, v) in &s.entries {
                let (slot, cell) = (slot as usize, cell as usize);
                if slot >= s.targets || cell >= cells || !v.is_finite() {
                    return Err(AssocNetError::Sample(format!("entry ({slot}, {cell}, {v})")));
                }
                let k = (bi * cells + cell) * n + slot;
                maps[k] = T::of(v as f64);
                mask[k] = T::zero();
                occ[k] = T::one();
            }
            real_rows.extend((0..s.targets).map(|slot| bi * n + slot));
        }
        Ok(AssocInput {
            maps: Tensor::new(shape.to_vec(), maps)?,
            mask: Tensor::new(shape.to_vec(), mask)?,
            occupancy: Tensor::new(shape.to_vec(), occ)?,
            real_rows,
        })
    }

    /// Probabilities `[B·N_max, S² + 1]`.
    pub fn forward(&self, tape: &mut Tape<'_, T>, input: &AssocInput<T>, mode: Mode) -> Result<Var, TensorError> {
        let l = &self.layers;
        let leak = self.config.leaky_slope;
        let b = input.maps.shape()[0];
        let mut x = tape.constant(input.maps.clone());
        for (conv, bn) in l.convs.iter().zip(&l.bns) {
            x = tape.conv2d(x, conv)?;
            x = tape.batchnorm(x, bn, mode)?;
            x = tape.leaky_relu(x, leak)?;
        }
        let logits = tape.conv2d(x, &l.head)?;
        let masked = tape.add_const(logits, &input.mask)?;
        let s = tape.mul_const(logits, &input.occupancy)?;
        let s = tape.reshape(s, &[b, self.cells() * self.config.n_max])?;
        let s = tape.dense(s, &l.spurious_hidden)?;
        let s = tape.leaky_relu(s, leak)?;
        let spurious = tape.dense(s, &l.spurious_out)?;
        let rows = tape.channels_to_rows(masked, spurious)?;
        tape.softmax(rows)
    }

    /// Margin cross-entropy over the real targets' rows plus `λ·‖Θ‖²`.
    pub fn loss(
        &self,
        tape: &mut Tape<'_, T>,
        probs: Var,
        input: &AssocInput<T>,
        samples: &[&AssocSample],
    ) -> Result<Var, AssocNetError> {
        let width = self.cells() + 1;
        let truth_idx: Vec<u16> = samples.iter().flat_map(|s| s.truth.iter().copied()).collect();
        if truth_idx.len() != input.real_rows.len() || samples.iter().any(|s| s.truth.len() != s.targets) {
            return Err(AssocNetError::Sample("every target needs a truth label".into()));
        }
        if input.real_rows.is_empty() {
            return Err(AssocNetError::Sample("batch has no targets".into()));
        }
        let mut truth = vec![T::zero(); truth_idx.len() * width];
        for (r, &t) in truth_idx.iter().enumerate() {
            if t as usize >= width {
                return Err(AssocNetError::Sample(format!("truth index {t} out of range")));
            }
            truth[r * width + t as usize] = T::one();
        }
        let p = tape.gather_rows(probs, &input.real_rows)?;
        let truth = Tensor::new(vec![truth_idx.len(), width], truth)?;
        let bce = tape.margin_bce(p, &truth, self.config.margin)?;
        let ids: Vec<_> = self.store.ids().collect();
        let mut reg: Option<Var> = None;
        for id in ids {
            let v = tape.param(id);
            let sq = tape.sum_squares(v);
            reg = Some(match reg {
                Some(acc) => tape.add(acc, sq)?,
                None => sq,
            });
        }
        match reg {
            Some(r) => {
                let r = tape.scale(r, T::of(self.config.lambda));
                Ok(tape.add(bce, r)?)
            }
            None => Ok(bce),
        }
    }

    /// Infer-mode association maps for every real target of each sample.
    pub fn predict(&self, samples: &[&AssocSample]) -> Result<Vec<Vec<AssociationMap>>, AssocNetError> {
        if samples.iter().all(|s| s.targets == 0) {
            return Ok(samples.iter().map(|_| Vec::new()).collect());
        }
        if !self.is_trained() {
            return Err(AssocNetError::Untrained);
        }
        let input = self.input(samples)?;
        let mut tape = Tape::new(&self.store);
        let probs = self.forward(&mut tape, &input, Mode::Infer)?;
        let v = tape.value(probs).data();
        let width = self.cells() + 1;
        let n = self.config.n_max;
        Ok(samples
            .iter()
            .enumerate()
            .map(|(bi, s)| {
                (0..s.targets)
                    .map(|slot| {
                        let row = &v[(bi * n + slot) * width..(bi * n + slot + 1) * width];
                        AssociationMap {
                            cells: row[..width - 1].iter().map(|x| x.f64() as f32).collect(),
                            spurious: row[width - 1].f64() as f32,
                        }
                    })
                    .collect()
            })
            .collect())
    }
}

impl AssocNet<f32> {
    pub fn to_checkpoint(&self, meta_extra: serde_json::Value) -> Checkpoint {
        let meta = serde_json::json!({
            "config": self.config,
            "side": self.side,
            "epochs": self.epochs,
            "extra": meta_extra,
        });
        let mut ck = Checkpoint::new(CHECKPOINT_KIND, meta);
        for (_, name, t) in self.store.iter() {
            ck.push(name, t.clone());
        }
        for bn in &self.layers.bns {
            if let Some(s) = &bn.stats {
                push_stats(&mut ck, &bn.name, s);
            }
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, AssocNetError> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let bad = |m: String| AssocNetError::Checkpoint(CheckpointError::Meta(m));
        let config: AssocNetConfig =
            serde_json::from_value(ck.meta["config"].clone()).map_err(|e| bad(format!("config: {e}")))?;
        let side = ck.meta["side"].as_u64().ok_or_else(|| bad("missing side".into()))? as usize;
        let mut net = AssocNet::new(&config, side, 0);
        net.epochs = ck.meta["epochs"].as_u64().unwrap_or(0) as u32;
        load_store(&mut net.store, ck)?;
        for bn in net.layers.bns.iter_mut() {
            bn.stats = read_stats(ck, &bn.name, bn.channels)?;
        }
        Ok(net)
    }
}
