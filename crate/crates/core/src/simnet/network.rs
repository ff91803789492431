//! Three-branch similarity network.
//!
//! Bounding-box branch: `[n,1,1,7]` box → 1×1 conv → BN → lrelu → dense →
//! BN → lrelu → dropout → dense → unit feature. Appearance branch: `[n,H,W,C]`
//! crop → 3×3 conv → BN → lrelu → global average pool → dense → unit
//! feature. Importance branch: both unit features → dense(2) → ReLU →
//! softmax, giving the weights `ω_b, ω_a`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{AppearanceConfig, SimNetConfig};
use crate::geometry::BoundingBox3D;
use crate::tensor::{
    BatchNorm, BatchStats, Checkpoint, CheckpointError, Conv2d, Dense, Elem, Mode, Padding, ParamStore,
    RunningStats, Tape, Tensor, TensorError, Var,
};

pub const CHECKPOINT_KIND: &str = "simnet";

/// Fixed input normalisation of the seven box parameters
/// `(cx, cy, cz, l, w, h, yaw)`: `(v - shift) / scale`.
pub const BOX_SHIFT: [f64; 7] = [0.0, 40.0, -0.9, 4.2, 1.8, 1.55, 0.0];
pub const BOX_SCALE: [f64; 7] = [10.0, 10.0, 0.25, 0.5, 0.15, 0.15, std::f64::consts::PI];

#[derive(Debug, thiserror::Error)]
pub enum SimNetError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("appearance feature has shape {found:?}, expected {expected:?}")]
    AppearanceShape { found: Vec<usize>, expected: Vec<usize> },
    #[error("{0} boxes but {1} appearance features")]
    Count(usize, usize),
    #[error("invalid batch: {0}")]
    Batch(String),
    #[error("network has not seen any training batch (no batch-norm statistics)")]
    Untrained,
}

#[derive(Clone, Debug)]
pub struct SimNetLayers {
    pub bbox_conv: Conv2d,
    pub bbox_bn1: BatchNorm,
    pub bbox_fc1: Dense,
    pub bbox_bn2: BatchNorm,
    pub bbox_fc2: Dense,
    pub app_conv: Conv2d,
    pub app_bn: BatchNorm,
    pub app_fc: Dense,
    pub importance: Dense,
}

impl SimNetLayers {
    pub fn batchnorms(&self) -> [&BatchNorm; 3] {
        [&self.bbox_bn1, &self.bbox_bn2, &self.app_bn]
    }

    fn batchnorms_mut(&mut self) -> [&mut BatchNorm; 3] {
        [&mut self.bbox_bn1, &mut self.bbox_bn2, &mut self.app_bn]
    }

    /// Folds the batch statistics recorded by a train-mode pass.
    pub fn absorb(&mut self, stats: &[BatchStats]) -> Result<(), TensorError> {
        for s in stats {
            for bn in self.batchnorms_mut() {
                if bn.name == s.layer {
                    bn.absorb(&s.mean, &s.var)?;
                }
            }
        }
        Ok(())
    }
}

/// Branch outputs for a stacked batch of objects.
#[derive(Clone, Copy, Debug)]
pub struct Branches {
    pub bbox: Var,
    pub appearance: Var,
    /// `[n, 2]` softmax weights `(ω_b, ω_a)`.
    pub importance: Var,
}

/// Network inputs for `n` objects.
#[derive(Clone, Debug)]
pub struct ObjectBatch<T: Elem = f32> {
    pub boxes: Tensor<T>,
    pub appearance: Tensor<T>,
}

impl<T: Elem> ObjectBatch<T> {
    pub fn new(boxes: &[BoundingBox3D], appearance: &[&Tensor<f32>], shape: &AppearanceConfig) -> Result<Self, SimNetError> {
        if boxes.len() != appearance.len() {
            return Err(SimNetError::Count(boxes.len(), appearance.len()));
        }
        let expected = shape.shape().to_vec();
        let mut app = Vec::with_capacity(boxes.len() * shape.len());
        for a in appearance {
            if a.shape() != expected.as_slice() {
                return Err(SimNetError::AppearanceShape { found: a.shape().to_vec(), expected });
            }
            app.extend(a.data().iter().map(|&v| T::of(v as f64)));
        }
        let mut bx = Vec::with_capacity(boxes.len() * 7);
        for b in boxes {
            for (k, v) in b.params().iter().enumerate() {
                bx.push(T::of((v - BOX_SHIFT[k]) / BOX_SCALE[k]));
            }
        }
        let n = boxes.len();
        Ok(Self {
            boxes: Tensor::new(vec![n, 1, 1, 7], bx)?,
            appearance: Tensor::new(vec![n, shape.height, shape.width, shape.channels], app)?,
        })
    }

    pub fn len(&self) -> usize {
        self.boxes.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Unit features and importance weights of a set of objects, detached from
/// any tape.
#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    pub dim: usize,
    pub bbox: Vec<f32>,
    pub appearance: Vec<f32>,
    pub importance: Vec<f32>,
}

impl Embeddings {
    pub fn len(&self) -> usize {
        self.importance.len() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.importance.is_empty()
    }

    pub fn bbox_row(&self, i: usize) -> &[f32] {
        &self.bbox[i * self.dim..(i + 1) * self.dim]
    }

    pub fn appearance_row(&self, i: usize) -> &[f32] {
        &self.appearance[i * self.dim..(i + 1) * self.dim]
    }

    /// `(ω_b, ω_a)` of object `i`.
    pub fn omega(&self, i: usize) -> (f32, f32) {
        (self.importance[2 * i], self.importance[2 * i + 1])
    }

    /// Similarity between object `i` here and object `j` of `other`. The
    /// importance weights of the two objects are averaged.
    pub fn similarity(&self, i: usize, other: &Embeddings, j: usize) -> f32 {
        let cos_b = dot(self.bbox_row(i), other.bbox_row(j));
        let cos_a = dot(self.appearance_row(i), other.appearance_row(j));
        let (wb_i, wa_i) = self.omega(i);
        let (wb_j, wa_j) = other.omega(j);
        (0.5 * (wb_i as f64 + wb_j as f64) * cos_b + 0.5 * (wa_i as f64 + wa_j as f64) * cos_a) as f32
    }

    /// Dense `len × other.len()` similarity matrix.
    pub fn similarity_matrix(&self, other: &Embeddings) -> Vec<Vec<f32>> {
        (0..self.len()).map(|i| (0..other.len()).map(|j| self.similarity(i, other, j)).collect()).collect()
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Similarity network with its parameters.
#[derive(Clone, Debug)]
pub struct SimNet<T: Elem = f32> {
    pub config: SimNetConfig,
    pub shape: AppearanceConfig,
    pub store: ParamStore<T>,
    pub layers: SimNetLayers,
    /// Training epochs completed so far.
    pub epochs: u32,
    /// Pair score above which a pair is classified as the same object,
    /// chosen on validation pairs during training.
    pub threshold: f64,
}

impl<T: Elem> SimNet<T> {
    pub fn new(config: &SimNetConfig, shape: &AppearanceConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let leak = config.leaky_slope;
        let f = config.feature_dim;
        let bf = config.bbox_filters;
        let af = config.appearance_filters;
        let layers = SimNetLayers {
            bbox_conv: Conv2d::init(&mut s, "bbox.conv", 1, 7, bf, 1, Padding::Valid, leak, &mut rng),
            bbox_bn1: BatchNorm::init(&mut s, "bbox.bn1", bf),
            bbox_fc1: Dense::init(&mut s, "bbox.fc1", bf, f, leak, &mut rng),
            bbox_bn2: BatchNorm::init(&mut s, "bbox.bn2", f),
            bbox_fc2: Dense::init(&mut s, "bbox.fc2", f, f, 1.0, &mut rng),
            app_conv: Conv2d::init(&mut s, "app.conv", 3, shape.channels, af, 1, Padding::Same, leak, &mut rng),
            app_bn: BatchNorm::init(&mut s, "app.bn", af),
            app_fc: Dense::init(&mut s, "app.fc", af, f, 1.0, &mut rng),
            importance: Dense::init(&mut s, "importance.fc", 2 * f, 2, 1.0, &mut rng),
        };
        Self { config: config.clone(), shape: *shape, store: s, layers, epochs: 0, threshold: 0.0 }
    }

    pub fn batch(&self, boxes: &[BoundingBox3D], appearance: &[&Tensor<f32>]) -> Result<ObjectBatch<T>, SimNetError> {
        ObjectBatch::new(boxes, appearance, &self.shape)
    }

    /// Records the three branches for `batch` on `tape`.
    pub fn forward(
        &self,
        tape: &mut Tape<'_, T>,
        batch: &ObjectBatch<T>,
        mode: Mode,
        dropout_seed: u64,
    ) -> Result<Branches, TensorError> {
        forward(&self.config, &self.layers, tape, batch, mode, dropout_seed)
    }

    pub fn is_trained(&self) -> bool {
        self.layers.batchnorms().iter().all(|bn| bn.stats.is_some())
    }

    /// Infer-mode embeddings.
    pub fn embed(&self, boxes: &[BoundingBox3D], appearance: &[&Tensor<f32>]) -> Result<Embeddings, SimNetError> {
        let f = self.config.feature_dim;
        if boxes.is_empty() {
            if !appearance.is_empty() {
                return Err(SimNetError::Count(0, appearance.len()));
            }
            return Ok(Embeddings { dim: f, bbox: vec![], appearance: vec![], importance: vec![] });
        }
        if !self.is_trained() {
            return Err(SimNetError::Untrained);
        }
        let batch = self.batch(boxes, appearance)?;
        let mut tape = Tape::new(&self.store);
        let br = self.forward(&mut tape, &batch, Mode::Infer, 0)?;
        let conv = |v: Var| tape.value(v).data().iter().map(|x| x.f64() as f32).collect::<Vec<f32>>();
        Ok(Embeddings { dim: f, bbox: conv(br.bbox), appearance: conv(br.appearance), importance: conv(br.importance) })
    }
}

fn forward<T: Elem>(
    cfg: &SimNetConfig,
    l: &SimNetLayers,
    tape: &mut Tape<'_, T>,
    batch: &ObjectBatch<T>,
    mode: Mode,
    dropout_seed: u64,
) -> Result<Branches, TensorError> {
    let n = batch.len();
    let leak = cfg.leaky_slope;
    let b = tape.constant(batch.boxes.clone());
    let b = tape.conv2d(b, &l.bbox_conv)?;
    let b = tape.batchnorm(b, &l.bbox_bn1, mode)?;
    let b = tape.leaky_relu(b, leak)?;
    let b = tape.reshape(b, &[n, cfg.bbox_filters])?;
    let b = tape.dense(b, &l.bbox_fc1)?;
    let b = tape.batchnorm(b, &l.bbox_bn2, mode)?;
    let b = tape.leaky_relu(b, leak)?;
    let b = tape.dropout(b, cfg.dropout, mode, dropout_seed)?;
    let b = tape.dense(b, &l.bbox_fc2)?;
    let bbox = tape.l2_normalize(b);

    let a = tape.constant(batch.appearance.clone());
    let a = tape.conv2d(a, &l.app_conv)?;
    let a = tape.batchnorm(a, &l.app_bn, mode)?;
    let a = tape.leaky_relu(a, leak)?;
    let a = tape.global_avg_pool(a)?;
    let a = tape.dense(a, &l.app_fc)?;
    let appearance = tape.l2_normalize(a);

    let c = tape.concat_cols(bbox, appearance)?;
    let w = tape.dense(c, &l.importance)?;
    let w = tape.relu(w)?;
    let importance = tape.softmax(w)?;
    Ok(Branches { bbox, appearance, importance })
}

/// Pair scores `ŷ` for a batch stacked as `[targets; detections]`, each
/// half holding `pairs` rows.
pub fn pair_scores<T: Elem>(tape: &mut Tape<'_, T>, br: &Branches, pairs: usize) -> Result<Var, TensorError> {
    let half = |tape: &mut Tape<'_, T>, v: Var| -> Result<(Var, Var), TensorError> {
        Ok((tape.slice_rows(v, 0, pairs)?, tape.slice_rows(v, pairs, pairs)?))
    };
    let (bt, bd) = half(tape, br.bbox)?;
    let (at, ad) = half(tape, br.appearance)?;
    let (wt, wd) = half(tape, br.importance)?;
    let cos_b = tape.row_dot(bt, bd)?;
    let cos_a = tape.row_dot(at, ad)?;
    let w = tape.add(wt, wd)?;
    let w = tape.scale(w, T::of(0.5));
    let wb = tape.column(w, 0)?;
    let wa = tape.column(w, 1)?;
    let sb = tape.mul(wb, cos_b)?;
    let sa = tape.mul(wa, cos_a)?;
    tape.add(sb, sa)
}

/// Per-pair weights of the weighted loss.
#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub skew: Vec<f64>,
    pub cost: Vec<f64>,
    pub positives: usize,
}

/// Class-balance and hard-example weights. The cost weight is
/// `((1 - yŷ)/2)^γ`, zeroed below `cutoff`; it is treated as a constant.
pub fn loss_weights(scores: &[f64], labels: &[i8], gamma: f64, cutoff: f64) -> Result<LossWeights, SimNetError> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(SimNetError::Batch(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(l) = labels.iter().find(|&&l| l != 1 && l != -1) {
        return Err(SimNetError::Batch(format!("label {l} is not ±1")));
    }
    let b = labels.len() as f64;
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 {
        return Err(SimNetError::Batch("batch has no positive pairs".into()));
    }
    let skew = labels
        .iter()
        .map(|&l| if l == 1 { b / (2.0 * pos as f64) } else { b / (2.0 * neg as f64) })
        .collect();
    let cost = scores
        .iter()
        .zip(labels)
        .map(|(&s, &l)| {
            let w = ((1.0 - l as f64 * s) / 2.0).max(0.0).powf(gamma);
            if w < cutoff {
                0.0
            } else {
                w
            }
        })
        .collect();
    Ok(LossWeights { skew, cost, positives: pos })
}

/// `(1/N⁺) Σ w_skew·w_cost·(1 - yŷ)` on the tape, plus the weights used.
pub fn simnet_loss<T: Elem>(
    tape: &mut Tape<'_, T>,
    scores: Var,
    labels: &[i8],
    gamma: f64,
    cutoff: f64,
) -> Result<(Var, LossWeights), SimNetError> {
    let values: Vec<f64> = tape.value(scores).data().iter().map(|v| v.f64()).collect();
    let w = loss_weights(&values, labels, gamma, cutoff)?;
    Ok((weighted_loss(tape, scores, labels, &w)?, w))
}

/// The loss with precomputed weights.
pub fn weighted_loss<T: Elem>(tape: &mut Tape<'_, T>, scores: Var, labels: &[i8], w: &LossWeights) -> Result<Var, TensorError> {
    let np = w.positives as f64;
    let mut constant = 0.0;
    let coef: Vec<T> = (0..labels.len())
        .map(|i| {
            let wi = w.skew[i] * w.cost[i] / np;
            constant += wi;
            T::of(-wi * labels[i] as f64)
        })
        .collect();
    let d = tape.dot_const(scores, &coef)?;
    Ok(tape.add_scalar(d, T::of(constant)))
}

/// Reference global map of target `i`: a dense 1×1 convolution of a
/// zero-filled feature grid. Grid channels at an occupied cell are
/// `[f_b, f_a, ω_b·f_b/2, ω_a·f_a/2]` of the detection there; the kernel is
/// `[ω_b·f_b/2, ω_a·f_a/2, f_b, f_a]` of the target. Computed in `f64`.
pub fn dense_reference_map(
    geom: &super::GridGeometry,
    occ: &super::Occupancy,
    targets: &Embeddings,
    i: usize,
    detections: &Embeddings,
) -> Result<Vec<f32>, TensorError> {
    let f = targets.dim;
    let c = 4 * f;
    let mut grid = vec![0f64; geom.nx * geom.ny * c];
    for &((ix, iy), j) in &occ.cells {
        let cell = &mut grid[(ix * geom.ny + iy) * c..(ix * geom.ny + iy + 1) * c];
        let (wb, wa) = detections.omega(j);
        let (wb, wa) = (wb as f64, wa as f64);
        for k in 0..f {
            let (fb, fa) = (detections.bbox_row(j)[k] as f64, detections.appearance_row(j)[k] as f64);
            cell[k] = fb;
            cell[f + k] = fa;
            cell[2 * f + k] = 0.5 * wb * fb;
            cell[3 * f + k] = 0.5 * wa * fa;
        }
    }
    let (wb, wa) = targets.omega(i);
    let (wb, wa) = (wb as f64, wa as f64);
    let mut kernel = vec![0f64; c];
    for k in 0..f {
        let (fb, fa) = (targets.bbox_row(i)[k] as f64, targets.appearance_row(i)[k] as f64);
        kernel[k] = 0.5 * wb * fb;
        kernel[f + k] = 0.5 * wa * fa;
        kernel[2 * f + k] = fb;
        kernel[3 * f + k] = fa;
    }
    let store = ParamStore::<f64>::new();
    let mut tape = Tape::new(&store);
    let x = tape.constant(Tensor::new(vec![1, geom.nx, geom.ny, c], grid)?);
    let w = tape.constant(Tensor::new(vec![1, 1, c, 1], kernel)?);
    let b = tape.constant(Tensor::zeros(&[1]));
    let y = tape.conv2d_raw(x, w, b, 1, 1, Padding::Valid)?;
    Ok(tape.value(y).data().iter().map(|&v| v as f32).collect())
}

impl SimNet<f32> {
    pub fn to_checkpoint(&self, meta_extra: serde_json::Value) -> Checkpoint {
        let meta = serde_json::json!({
            "config": self.config,
            "appearance": self.shape,
            "epochs": self.epochs,
            "threshold": self.threshold,
            "extra": meta_extra,
        });
        let mut ck = Checkpoint::new(CHECKPOINT_KIND, meta);
        for (_, name, t) in self.store.iter() {
            ck.push(name, t.clone());
        }
        for bn in self.layers.batchnorms() {
            if let Some(s) = &bn.stats {
                push_stats(&mut ck, &bn.name, s);
            }
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, SimNetError> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let bad = |m: String| SimNetError::Checkpoint(CheckpointError::Meta(m));
        let config: SimNetConfig =
            serde_json::from_value(ck.meta["config"].clone()).map_err(|e| bad(format!("config: {e}")))?;
        let shape: AppearanceConfig =
            serde_json::from_value(ck.meta["appearance"].clone()).map_err(|e| bad(format!("appearance: {e}")))?;
        let mut net = SimNet::new(&config, &shape, 0);
        net.epochs = ck.meta["epochs"].as_u64().unwrap_or(0) as u32;
        net.threshold = ck.meta["threshold"].as_f64().unwrap_or(0.0);
        load_store(&mut net.store, ck)?;
        for bn in net.layers.batchnorms_mut() {
            bn.stats = read_stats(ck, &bn.name, bn.channels)?;
        }
        Ok(net)
    }
}

pub(crate) fn push_stats(ck: &mut Checkpoint, name: &str, s: &RunningStats) {
    let f = |v: &[f64]| Tensor::new(vec![v.len()], v.iter().map(|&x| x as f32).collect()).expect("1-d");
    ck.push(format!("{name}.running_mean"), f(&s.mean));
    ck.push(format!("{name}.running_var"), f(&s.var));
}

pub(crate) fn read_stats(ck: &Checkpoint, name: &str, channels: usize) -> Result<Option<RunningStats>, CheckpointError> {
    let key = format!("{name}.running_mean");
    if !ck.tensors.iter().any(|(n, _)| *n == key) {
        return Ok(None);
    }
    let mean = ck.get(&key)?;
    let var = ck.get(&format!("{name}.running_var"))?;
    if mean.len() != channels || var.len() != channels {
        return Err(CheckpointError::Meta(format!("{name} statistics have the wrong length")));
    }
    let v = |t: &Tensor<f32>| t.data().iter().map(|&x| x as f64).collect();
    Ok(Some(RunningStats { mean: v(mean), var: v(var) }))
}

pub(crate) fn load_store(store: &mut ParamStore<f32>, ck: &Checkpoint) -> Result<(), CheckpointError> {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.name(id).to_string();
        let t = ck.get(&name)?;
        if t.shape() != store.get(id).shape() {
            return Err(CheckpointError::Meta(format!(
                "{name} has shape {:?}, network expects {:?}",
                t.shape(),
                store.get(id).shape()
            )));
        }
        *store.get_mut(id) = t.clone();
    }
    Ok(())
}
