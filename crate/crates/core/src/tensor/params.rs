//! Trainable parameters and the layer descriptors that reference them.

use rand::Rng;

use super::{Elem, Tensor, TensorError};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T = f32> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Elem> ParamStore<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn count_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Elem>(&self) -> ParamStore<U> {
        ParamStore { names: self.names.clone(), values: self.values.iter().map(Tensor::cast).collect() }
    }
}

/// Fan-in scaled uniform initialization (He-uniform corrected for the
/// leaky-ReLU slope).
pub fn fan_in_uniform<T: Elem, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    leak: f64,
    rng: &mut R,
) -> Tensor<T> {
    let bound = (6.0 / ((1.0 + leak * leak) * fan_in.max(1) as f64)).sqrt();
    Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..bound)))
}

/// How a convolution treats borders.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

/// 2D convolution over NHWC input with an `[kh, kw, cin, cout]` kernel.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub dilation: usize,
    pub padding: Padding,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn init<T: Elem, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        kernel: usize,
        cin: usize,
        cout: usize,
        dilation: usize,
        padding: Padding,
        leak: f64,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            fan_in_uniform(&[kernel, kernel, cin, cout], kernel * kernel * cin, leak, rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[cout]));
        Self { weight, bias, stride: 1, dilation, padding }
    }
}

/// Affine layer `x·W + b` with `W: [d, k]`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn init<T: Elem, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        output: usize,
        leak: f64,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            fan_in_uniform(&[input, output], input, leak, rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[output]));
        Self { weight, bias }
    }
}

/// Running batch statistics; absent until the first training batch.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Batch normalization over the trailing (channel) axis.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub name: String,
    pub scale: ParamId,
    pub shift: ParamId,
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
    pub stats: Option<RunningStats>,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.99;

impl BatchNorm {
    pub fn init<T: Elem>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        let scale = store.add(format!("{name}.scale"), Tensor::full(&[channels], T::one()));
        let shift = store.add(format!("{name}.shift"), Tensor::zeros(&[channels]));
        Self {
            name: name.to_string(),
            scale,
            shift,
            channels,
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
            stats: None,
        }
    }

    /// Folds a batch's statistics into the running estimate. The first batch
    /// seeds the estimate directly. Values are kept at `f32` precision so
    /// checkpoints restore them exactly.
    pub fn absorb(&mut self, mean: &[f64], var: &[f64]) -> Result<(), TensorError> {
        if mean.len() != self.channels || var.len() != self.channels {
            return Err(TensorError::Shape {
                op: "batchnorm",
                detail: format!("statistics for {} channels, layer has {}", mean.len(), self.channels),
            });
        }
        match &mut self.stats {
            None => {
                let r = |v: &[f64]| v.iter().map(|&x| x as f32 as f64).collect();
                self.stats = Some(RunningStats { mean: r(mean), var: r(var) });
            }
            Some(s) => {
                let m = self.momentum;
                for c in 0..self.channels {
                    s.mean[c] = (m * s.mean[c] + (1.0 - m) * mean[c]) as f32 as f64;
                    s.var[c] = ((m * s.var[c] + (1.0 - m) * var[c]).max(0.0)) as f32 as f64;
                }
            }
        }
        Ok(())
    }
}
