//! Reverse-mode autodiff over a recorded op tape.
//!
//! Every forward op appends a node holding its output and whatever it needs
//! for the backward pass. [`Tape::backward`] walks the nodes in reverse,
//! accumulating gradients into parameters and explicit variables. Parameter
//! values are borrowed from a [`ParamStore`], never copied onto the tape.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BatchNorm, Conv2d, Dense, Elem, Padding, ParamId, ParamStore, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Train mode uses batch statistics and dropout; infer mode is a pure function
/// of the parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Pointwise activation kinds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Relu,
    /// Softmax over the trailing axis.
    Softmax,
}

#[derive(Clone, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub kh: usize,
    pub kw: usize,
    pub o: usize,
    pub ho: usize,
    pub wo: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.n * self.ho * self.wo
    }

    fn patch(&self) -> usize {
        self.kh * self.kw * self.c
    }
}

pub(crate) enum Op<T> {
    Constant,
    Variable,
    Param(ParamId),
    Conv { x: Var, w: Var, b: Var, geom: ConvGeom, cols: Vec<T> },
    Dense { x: Var, w: Var, b: Var },
    LeakyRelu { x: Var, alpha: T },
    Relu { x: Var },
    Softmax { x: Var },
    BatchNorm { x: Var, scale: Var, shift: Var, xhat: Vec<T>, inv_std: Vec<T>, train: bool },
    Gap { x: Var, hw: usize },
    L2Norm { x: Var, norms: Vec<T> },
    Dropout { x: Var, mask: Vec<T> },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    AddConst { x: Var },
    MulConst { x: Var, c: Vec<T> },
    Scale { x: Var, s: T },
    AddScalar { x: Var },
    RowDot { a: Var, b: Var },
    ConcatCols { a: Var, b: Var },
    SliceRows { x: Var, start: usize },
    GatherRows { x: Var, rows: Vec<usize> },
    Column { x: Var, col: usize },
    Reshape { x: Var },
    Sum { x: Var },
    DotConst { x: Var, c: Vec<T> },
    SumSquares { x: Var },
    ChannelsToRows { maps: Var, extra: Var, hw: usize, c: usize },
    MarginBce { p: Var, truth: Vec<T>, margin: T },
}

pub(crate) struct Node<T> {
    pub value: Option<Tensor<T>>,
    pub op: Op<T>,
    pub requires_grad: bool,
}

/// Batch statistics observed by a train-mode batch-norm node.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub layer: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Forward-pass recorder.
pub struct Tape<'p, T: Elem = f32> {
    pub(crate) params: &'p ParamStore<T>,
    pub(crate) nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
    batch_stats: Vec<BatchStats>,
    zero_norm_rows: usize,
}

fn shape_err(op: &'static str, detail: String) -> TensorError {
    TensorError::Shape { op, detail }
}

impl<'p, T: Elem> Tape<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            batch_stats: Vec::new(),
            zero_norm_rows: 0,
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Statistics gathered by train-mode batch norm since the last call.
    pub fn take_batch_stats(&mut self) -> Vec<BatchStats> {
        std::mem::take(&mut self.batch_stats)
    }

    /// Number of rows that reached an L2 normalization with zero norm.
    pub fn zero_norm_rows(&self) -> usize {
        self.zero_norm_rows
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value: Some(value), op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn unary(&mut self, x: Var, value: Tensor<T>, op: Op<T>) -> Var {
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    fn binary(&mut self, a: Var, b: Var, value: Tensor<T>, op: Op<T>) -> Var {
        let rg = self.rg(a) || self.rg(b);
        self.push(value, op, rg)
    }

    /// Input that takes no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Leaf whose gradient is reported by [`Tape::backward`].
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Variable, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node { value: None, op: Op::Param(id), requires_grad: true });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    // ---- layers ----------------------------------------------------------

    pub fn conv2d(&mut self, x: Var, layer: &Conv2d) -> Result<Var, TensorError> {
        let w = self.param(layer.weight);
        let b = self.param(layer.bias);
        self.conv2d_raw(x, w, b, layer.stride, layer.dilation, layer.padding)
    }

    pub fn conv2d_raw(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        dilation: usize,
        padding: Padding,
    ) -> Result<Var, TensorError> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(shape_err("conv2d", format!("input {xs:?}, kernel {ws:?}")));
        }
        if dilation == 0 || stride == 0 {
            return Err(TensorError::Invalid("conv2d stride and dilation must be >= 1".into()));
        }
        let (n, h, wd, c) = (xs[0], xs[1], xs[2], xs[3]);
        let (kh, kw, kc, o) = (ws[0], ws[1], ws[2], ws[3]);
        if kc != c {
            return Err(shape_err(
                "conv2d",
                format!("kernel expects {kc} input channels, input has {c}"),
            ));
        }
        if self.shape(b) != [o] {
            return Err(shape_err("conv2d", format!("bias {:?} for {o} filters", self.shape(b))));
        }
        let ekh = (kh - 1) * dilation + 1;
        let ekw = (kw - 1) * dilation + 1;
        let (ho, wo, pad_top, pad_left) = match padding {
            Padding::Valid => {
                if ekh > h || ekw > wd {
                    return Err(shape_err(
                        "conv2d",
                        format!("dilated kernel {ekh}x{ekw} exceeds input {h}x{wd}"),
                    ));
                }
                ((h - ekh) / stride + 1, (wd - ekw) / stride + 1, 0, 0)
            }
            Padding::Same => {
                let ho = h.div_ceil(stride);
                let wo = wd.div_ceil(stride);
                let ph = ((ho - 1) * stride + ekh).saturating_sub(h);
                let pw = ((wo - 1) * stride + ekw).saturating_sub(wd);
                (ho, wo, ph / 2, pw / 2)
            }
        };
        let geom = ConvGeom { n, h, w: wd, c, kh, kw, o, ho, wo, stride, dilation, pad_top, pad_left };
        let cols = im2col(self.value(x).data(), &geom);
        let rows = geom.rows();
        let mut out = vec![T::zero(); rows * o];
        let bias = self.value(b).data();
        for r in out.chunks_mut(o) {
            r.copy_from_slice(bias);
        }
        T::gemm(rows, geom.patch(), o, &cols, false, self.value(w).data(), false, &mut out, T::one());
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        let value = Tensor::from_parts(vec![n, ho, wo, o], out);
        Ok(self.push(value, Op::Conv { x, w, b, geom, cols }, rg))
    }

    pub fn dense(&mut self, x: Var, layer: &Dense) -> Result<Var, TensorError> {
        let w = self.param(layer.weight);
        let b = self.param(layer.bias);
        self.dense_raw(x, w, b)
    }

    pub fn dense_raw(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || self.shape(b) != [ws[1]] {
            return Err(shape_err(
                "dense",
                format!("input {xs:?}, weight {ws:?}, bias {:?}", self.shape(b)),
            ));
        }
        if !self.value(w).all_finite() || !self.value(b).all_finite() {
            return Err(TensorError::NonFinite("dense parameters"));
        }
        let (n, d, k) = (xs[0], xs[1], ws[1]);
        let mut out = vec![T::zero(); n * k];
        let bias = self.value(b).data();
        for r in out.chunks_mut(k) {
            r.copy_from_slice(bias);
        }
        T::gemm(n, d, k, self.value(x).data(), false, self.value(w).data(), false, &mut out, T::one());
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(Tensor::from_parts(vec![n, k], out), Op::Dense { x, w, b }, rg))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var, TensorError> {
        if !self.value(x).all_finite() {
            return Err(TensorError::NonFinite("activation input"));
        }
        Ok(match kind {
            Activation::LeakyRelu(alpha) => {
                let a = T::of(alpha);
                let y = self.value(x).map(|v| if v > T::zero() { v } else { a * v });
                self.unary(x, y, Op::LeakyRelu { x, alpha: a })
            }
            Activation::Relu => {
                let y = self.value(x).map(|v| v.max(T::zero()));
                self.unary(x, y, Op::Relu { x })
            }
            Activation::Softmax => {
                let xv = self.value(x);
                let k = xv.last_dim();
                if k == 0 {
                    return Err(shape_err("softmax", "empty trailing axis".into()));
                }
                let mut out = xv.data().to_vec();
                for row in out.chunks_mut(k) {
                    softmax_in_place(row);
                }
                let y = Tensor::from_parts(xv.shape().to_vec(), out);
                self.unary(x, y, Op::Softmax { x })
            }
        })
    }

    pub fn leaky_relu(&mut self, x: Var, alpha: f64) -> Result<Var, TensorError> {
        self.activation(x, Activation::LeakyRelu(alpha))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        self.activation(x, Activation::Relu)
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        self.activation(x, Activation::Softmax)
    }

    /// Normalizes over every axis but the last. Train mode records the batch
    /// statistics (see [`Tape::take_batch_stats`]).
    pub fn batchnorm(&mut self, x: Var, layer: &BatchNorm, mode: Mode) -> Result<Var, TensorError> {
        let xs = self.shape(x).to_vec();
        let ch = *xs.last().unwrap_or(&0);
        if ch != layer.channels {
            return Err(shape_err(
                "batchnorm",
                format!("input has {ch} channels, layer {} expects {}", layer.name, layer.channels),
            ));
        }
        let scale = self.param(layer.scale);
        let shift = self.param(layer.shift);
        let count = self.value(x).len() / ch;
        let (mean, var) = match mode {
            Mode::Train => {
                let batch = xs.first().copied().unwrap_or(0);
                if batch < 2 {
                    return Err(TensorError::BatchTooSmall(batch));
                }
                let xv = self.value(x).data();
                let mut mean = vec![0.0f64; ch];
                for row in xv.chunks(ch) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v.f64();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count as f64);
                let mut var = vec![0.0f64; ch];
                for row in xv.chunks(ch) {
                    for c in 0..ch {
                        let d = row[c].f64() - mean[c];
                        var[c] += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v /= count as f64);
                self.batch_stats.push(BatchStats {
                    layer: layer.name.clone(),
                    mean: mean.clone(),
                    var: var.clone(),
                });
                (mean, var)
            }
            Mode::Infer => {
                let stats = layer.stats.as_ref().ok_or(TensorError::MissingStatistics)?;
                (stats.mean.clone(), stats.var.clone())
            }
        };
        let inv_std: Vec<T> = var.iter().map(|v| T::of(1.0 / (v + layer.eps).sqrt())).collect();
        let mean_t: Vec<T> = mean.iter().map(|&m| T::of(m)).collect();
        let xv = self.value(x).data();
        let g = self.value(scale).data();
        let s = self.value(shift).data();
        let mut xhat = Vec::with_capacity(xv.len());
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.chunks(ch) {
            for c in 0..ch {
                let h = (row[c] - mean_t[c]) * inv_std[c];
                xhat.push(h);
                out.push(g[c] * h + s[c]);
            }
        }
        let rg = self.rg(x) || self.rg(scale) || self.rg(shift);
        let value = Tensor::from_parts(xs, out);
        let train = mode == Mode::Train;
        Ok(self.push(value, Op::BatchNorm { x, scale, shift, xhat, inv_std, train }, rg))
    }

    /// `[N, H, W, C] -> [N, C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var, TensorError> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 || xs[1] == 0 || xs[2] == 0 {
            return Err(shape_err("global_avg_pool", format!("input {xs:?}")));
        }
        let (n, hw, c) = (xs[0], xs[1] * xs[2], xs[3]);
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); n * c];
        for b in 0..n {
            let mut acc = vec![0.0f64; c];
            for p in 0..hw {
                let row = &xv[(b * hw + p) * c..(b * hw + p + 1) * c];
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += v.f64();
                }
            }
            for (o, a) in out[b * c..(b + 1) * c].iter_mut().zip(acc) {
                *o = T::of(a / hw as f64);
            }
        }
        Ok(self.unary(x, Tensor::from_parts(vec![n, c], out), Op::Gap { x, hw }))
    }

    /// Scales each trailing-axis row to unit Euclidean norm. Zero rows stay
    /// zero and are counted in [`Tape::zero_norm_rows`].
    pub fn l2_normalize(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let d = xv.last_dim().max(1);
        let mut out = xv.data().to_vec();
        let mut norms = Vec::with_capacity(out.len() / d);
        let mut zero = 0;
        for row in out.chunks_mut(d) {
            let nrm = row.iter().map(|v| v.f64() * v.f64()).sum::<f64>().sqrt();
            if nrm > 0.0 {
                row.iter_mut().for_each(|v| *v = T::of(v.f64() / nrm));
            } else {
                zero += 1;
            }
            norms.push(T::of(nrm));
        }
        let y = Tensor::from_parts(xv.shape().to_vec(), out);
        self.zero_norm_rows += zero;
        self.unary(x, y, Op::L2Norm { x, norms })
    }

    /// Inverted dropout: kept entries are scaled by `1/(1-rate)`.
    pub fn dropout(&mut self, x: Var, rate: f64, mode: Mode, seed: u64) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::Invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        if mode == Mode::Infer || rate == 0.0 {
            return Ok(x);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = T::of(1.0 / (1.0 - rate));
        let xv = self.value(x);
        let mask: Vec<T> = (0..xv.len())
            .map(|_| if rng.random::<f64>() >= rate { keep } else { T::zero() })
            .collect();
        let out = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let y = Tensor::from_parts(xv.shape().to_vec(), out);
        Ok(self.unary(x, y, Op::Dropout { x, mask }))
    }

    // ---- elementwise and structural ops -----------------------------------

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.binary(a, b, out, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("mul", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.binary(a, b, out, Op::Mul { a, b }))
    }

    /// Adds a constant tensor (no gradient flows into it).
    pub fn add_const(&mut self, x: Var, c: &Tensor<T>) -> Result<Var, TensorError> {
        if self.shape(x) != c.shape() {
            return Err(shape_err("add_const", format!("{:?} vs {:?}", self.shape(x), c.shape())));
        }
        let out = zip_map(self.value(x), c, |a, b| a + b);
        Ok(self.unary(x, out, Op::AddConst { x }))
    }

    pub fn mul_const(&mut self, x: Var, c: &Tensor<T>) -> Result<Var, TensorError> {
        if self.shape(x) != c.shape() {
            return Err(shape_err("mul_const", format!("{:?} vs {:?}", self.shape(x), c.shape())));
        }
        let out = zip_map(self.value(x), c, |a, b| a * b);
        Ok(self.unary(x, out, Op::MulConst { x, c: c.data().to_vec() }))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.unary(x, out, Op::Scale { x, s })
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v + s);
        self.unary(x, out, Op::AddScalar { x })
    }

    /// Row-wise inner product of two `[N, D]` tensors, giving `[N]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("row_dot", a, b)?;
        let av = self.value(a);
        if av.shape().len() != 2 {
            return Err(shape_err("row_dot", format!("expected rank 2, got {:?}", av.shape())));
        }
        let n = av.shape()[0];
        let out: Vec<T> = av
            .rows()
            .zip(self.value(b).rows())
            .map(|(x, y)| T::of(x.iter().zip(y).map(|(p, q)| p.f64() * q.f64()).sum()))
            .collect();
        Ok(self.binary(a, b, Tensor::from_parts(vec![n], out), Op::RowDot { a, b }))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(shape_err("concat_cols", format!("{sa:?} vs {sb:?}")));
        }
        let mut out = Vec::with_capacity((sa[1] + sb[1]) * sa[0]);
        for (x, y) in self.value(a).rows().zip(self.value(b).rows()) {
            out.extend_from_slice(x);
            out.extend_from_slice(y);
        }
        let value = Tensor::from_parts(vec![sa[0], sa[1] + sb[1]], out);
        Ok(self.binary(a, b, value, Op::ConcatCols { a, b }))
    }

    /// Rows `start..start+len` along the leading axis.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let xs = self.shape(x).to_vec();
        if xs.is_empty() || start + len > xs[0] {
            return Err(shape_err("slice_rows", format!("{start}..{} of {xs:?}", start + len)));
        }
        let inner: usize = xs[1..].iter().product();
        let data = self.value(x).data()[start * inner..(start + len) * inner].to_vec();
        let mut shape = xs;
        shape[0] = len;
        Ok(self.unary(x, Tensor::from_parts(shape, data), Op::SliceRows { x, start }))
    }

    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var, TensorError> {
        let xs = self.shape(x).to_vec();
        if xs.is_empty() || rows.iter().any(|&r| r >= xs[0]) {
            return Err(shape_err("gather_rows", format!("rows {rows:?} of {xs:?}")));
        }
        let inner: usize = xs[1..].iter().product();
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(rows.len() * inner);
        for &r in rows {
            data.extend_from_slice(&xv[r * inner..(r + 1) * inner]);
        }
        let mut shape = xs;
        shape[0] = rows.len();
        Ok(self.unary(x, Tensor::from_parts(shape, data), Op::GatherRows { x, rows: rows.to_vec() }))
    }

    /// Column `col` of an `[N, K]` tensor as `[N]`.
    pub fn column(&mut self, x: Var, col: usize) -> Result<Var, TensorError> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 || col >= xs[1] {
            return Err(shape_err("column", format!("column {col} of {xs:?}")));
        }
        let data: Vec<T> = self.value(x).rows().map(|r| r[col]).collect();
        Ok(self.unary(x, Tensor::from_parts(vec![xs[0]], data), Op::Column { x, col }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.unary(x, value, Op::Reshape { x }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|v| v.f64()).sum();
        self.unary(x, Tensor::scalar(T::of(s)), Op::Sum { x })
    }

    /// `Σ c_i x_i` for a constant coefficient vector.
    pub fn dot_const(&mut self, x: Var, c: &[T]) -> Result<Var, TensorError> {
        if self.value(x).len() != c.len() {
            return Err(shape_err("dot_const", format!("{} values vs {} coefficients", self.value(x).len(), c.len())));
        }
        let s: f64 = self.value(x).data().iter().zip(c).map(|(a, b)| a.f64() * b.f64()).sum();
        Ok(self.unary(x, Tensor::scalar(T::of(s)), Op::DotConst { x, c: c.to_vec() }))
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|v| v.f64() * v.f64()).sum();
        self.unary(x, Tensor::scalar(T::of(s)), Op::SumSquares { x })
    }

    /// `[B, H, W, C]` maps plus `[B, C]` extras become `[B·C, H·W + 1]`:
    /// one row per channel, its spatial cells followed by its extra entry.
    pub fn channels_to_rows(&mut self, maps: Var, extra: Var) -> Result<Var, TensorError> {
        let ms = self.shape(maps).to_vec();
        let es = self.shape(extra).to_vec();
        if ms.len() != 4 || es != [ms[0], ms[3]] {
            return Err(shape_err("channels_to_rows", format!("maps {ms:?}, extra {es:?}")));
        }
        let (b, hw, c) = (ms[0], ms[1] * ms[2], ms[3]);
        let mv = self.value(maps).data();
        let ev = self.value(extra).data();
        let width = hw + 1;
        let mut out = vec![T::zero(); b * c * width];
        for bi in 0..b {
            for p in 0..hw {
                let src = &mv[(bi * hw + p) * c..(bi * hw + p + 1) * c];
                for (ci, &v) in src.iter().enumerate() {
                    out[(bi * c + ci) * width + p] = v;
                }
            }
            for ci in 0..c {
                out[(bi * c + ci) * width + hw] = ev[bi * c + ci];
            }
        }
        let value = Tensor::from_parts(vec![b * c, width], out);
        Ok(self.binary(maps, extra, value, Op::ChannelsToRows { maps, extra, hw, c }))
    }

    /// Margin binary cross-entropy between predicted probabilities and
    /// a constant target of the same shape:
    /// `Σ -(1-p)·ln(min(1-p̂+m, 1)) - p·ln(min(p̂+m, 1))`.
    pub fn margin_bce(&mut self, pred: Var, truth: &Tensor<T>, margin: f64) -> Result<Var, TensorError> {
        if self.shape(pred) != truth.shape() {
            return Err(shape_err("margin_bce", format!("{:?} vs {:?}", self.shape(pred), truth.shape())));
        }
        let m = margin;
        let total: f64 = self
            .value(pred)
            .data()
            .iter()
            .zip(truth.data())
            .map(|(ph, p)| {
                let (ph, p) = (ph.f64(), p.f64());
                let q = 1.0 - p;
                let qh = 1.0 - ph;
                -q * (qh + m).min(1.0).ln() - p * (ph + m).min(1.0).ln()
            })
            .sum();
        let op = Op::MarginBce { p: pred, truth: truth.data().to_vec(), margin: T::of(margin) };
        Ok(self.unary(pred, Tensor::scalar(T::of(total)), op))
    }
}

pub(crate) fn softmax_in_place<T: Elem>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let mut total = 0.0f64;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += v.f64();
    }
    let inv = T::of(1.0 / total);
    row.iter_mut().for_each(|v| *v = *v * inv);
}

fn zip_map<T: Elem>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

pub(crate) fn im2col<T: Elem>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let patch = g.patch();
    let mut cols = vec![T::zero(); g.rows() * patch];
    for b in 0..g.n {
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let row = (b * g.ho + oy) * g.wo + ox;
                let dst = &mut cols[row * patch..(row + 1) * patch];
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky * g.dilation) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (ox * g.stride + kx * g.dilation) as isize - g.pad_left as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let src = ((b * g.h + iy as usize) * g.w + ix as usize) * g.c;
                        let off = (ky * g.kw + kx) * g.c;
                        dst[off..off + g.c].copy_from_slice(&x[src..src + g.c]);
                    }
                }
            }
        }
    }
    cols
}

pub(crate) fn col2im<T: Elem>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let patch = g.patch();
    for b in 0..g.n {
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let row = (b * g.ho + oy) * g.wo + ox;
                let src = &cols[row * patch..(row + 1) * patch];
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky * g.dilation) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (ox * g.stride + kx * g.dilation) as isize - g.pad_left as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let dst = ((b * g.h + iy as usize) * g.w + ix as usize) * g.c;
                        let off = (ky * g.kw + kx) * g.c;
                        for (d, &s) in dx[dst..dst + g.c].iter_mut().zip(&src[off..off + g.c]) {
                            *d = *d + s;
                        }
                    }
                }
            }
        }
    }
}
