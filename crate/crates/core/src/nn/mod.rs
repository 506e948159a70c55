//! A small dense network: linear layers, optional batch normalization before
//! each hidden ReLU, SGD with momentum, and the partial-label training loop.
//!
//! Hidden blocks are `linear → batch-norm → ReLU` (or `linear → ReLU`
//! without batch norm); the output block is a bare linear layer producing
//! one logit per class.

mod checkpoint;
mod optim;
mod train;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::distributions::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::DatasetError;
use crate::gumbel::{NoiseError, RandomSource};
use crate::loss::LossError;
use crate::metrics::MetricsError;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use optim::{sgd_step, OptimizerState};
pub use train::{
    evaluate, predict, train, EvalRecord, Evaluation, TrainConfig, TrainHistory, STREAM_INIT,
    STREAM_NOISE, STREAM_SHUFFLE,
};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("architecture needs at least an input and an output width")]
    TooFewLayers,
    #[error("layer {0} has zero width")]
    ZeroWidth(usize),
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("batch normalization needs at least 2 samples per training batch")]
    BatchTooSmall,
    #[error("cache was produced before the last parameter update")]
    StaleCache,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("model has {model} classes but the data has {data}")]
    ClassMismatch { model: usize, data: usize },
    #[error("evaluation data has rows without a true label")]
    MissingLabels,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn shape_err(expected: impl ToString, found: impl ToString) -> NnError {
    NnError::ShapeMismatch {
        expected: expected.to_string(),
        found: found.to_string(),
    }
}

/// Layer widths from input to output plus the batch-norm switch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub widths: Vec<usize>,
    pub batch_norm: bool,
}

impl Architecture {
    pub fn new(widths: Vec<usize>, batch_norm: bool) -> Result<Self, NnError> {
        if widths.len() < 2 {
            return Err(NnError::TooFewLayers);
        }
        if let Some(i) = widths.iter().position(|&w| w == 0) {
            return Err(NnError::ZeroWidth(i));
        }
        Ok(Self { widths, batch_norm })
    }

    /// Parses a comma-separated width list such as `784,300,10`.
    pub fn parse(text: &str, batch_norm: bool) -> Result<Self, NnError> {
        let widths = text
            .split(',')
            .map(|w| {
                w.trim()
                    .parse::<usize>()
                    .map_err(|_| NnError::InvalidConfig(format!("bad layer width {w:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(widths, batch_norm)
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.widths.last().expect("validated nonempty")
    }

    pub fn num_linear(&self) -> usize {
        self.widths.len() - 1
    }
}

/// `y = x Wᵀ + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub scale: Array1<f64>,
    pub shift: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub eps: f64,
}

impl BatchNorm {
    fn new(width: usize) -> Self {
        Self {
            scale: Array1::ones(width),
            shift: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
            eps: BN_EPSILON,
        }
    }

    fn width(&self) -> usize {
        self.scale.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Linear(Linear),
    BatchNorm(BatchNorm),
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated by [`MlpModel::forward`].
    Train,
    /// Running statistics; no side effects.
    Eval,
}

#[derive(Debug, Clone)]
enum LayerCache {
    Linear {
        input: Array2<f64>,
    },
    BatchNorm {
        x_hat: Array2<f64>,
        inv_std: Array1<f64>,
        mode: Mode,
    },
    Relu {
        output: Array2<f64>,
    },
}

/// Activations saved by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    rows: usize,
    layers: Vec<LayerCache>,
}

impl ForwardCache {
    pub fn rows(&self) -> usize {
        self.rows
    }
}

/// Gradient (or velocity) for one layer, congruent with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerGrad {
    Linear {
        weight: Array2<f64>,
        bias: Array1<f64>,
    },
    BatchNorm {
        scale: Array1<f64>,
        shift: Array1<f64>,
    },
    Relu,
}

/// Per-layer parameter gradients in model order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        let layers = model
            .layers
            .iter()
            .map(|l| match l {
                Layer::Linear(lin) => LayerGrad::Linear {
                    weight: Array2::zeros(lin.weight.raw_dim()),
                    bias: Array1::zeros(lin.bias.len()),
                },
                Layer::BatchNorm(bn) => LayerGrad::BatchNorm {
                    scale: Array1::zeros(bn.width()),
                    shift: Array1::zeros(bn.width()),
                },
                Layer::Relu => LayerGrad::Relu,
            })
            .collect();
        Self { layers }
    }

    /// Buffers in the same order as [`MlpModel::parameter_slices_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                LayerGrad::Linear { weight, bias } => {
                    out.push(weight.as_slice().expect("standard layout"));
                    out.push(bias.as_slice().expect("standard layout"));
                }
                LayerGrad::BatchNorm { scale, shift } => {
                    out.push(scale.as_slice().expect("standard layout"));
                    out.push(shift.as_slice().expect("standard layout"));
                }
                LayerGrad::Relu => {}
            }
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                LayerGrad::Linear { weight, bias } => {
                    out.push(weight.as_slice_mut().expect("standard layout"));
                    out.push(bias.as_slice_mut().expect("standard layout"));
                }
                LayerGrad::BatchNorm { scale, shift } => {
                    out.push(scale.as_slice_mut().expect("standard layout"));
                    out.push(shift.as_slice_mut().expect("standard layout"));
                }
                LayerGrad::Relu => {}
            }
        }
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }
}

/// The network. `version` counts parameter updates so that backward passes
/// can reject caches from before the latest step.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    architecture: Architecture,
    layers: Vec<Layer>,
    version: u64,
}

impl MlpModel {
    /// Weights uniform in `±√(6 / fan_in)`, biases zero, batch-norm scale 1,
    /// shift 0, running statistics `(0, 1)`.
    pub fn init(architecture: &Architecture, rng: &mut RandomSource) -> Result<Self, NnError> {
        let arch = Architecture::new(architecture.widths.clone(), architecture.batch_norm)?;
        let mut layers = Vec::new();
        let n = arch.num_linear();
        for (i, pair) in arch.widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            let weight = Array2::from_shape_simple_fn((fan_out, fan_in), || dist.sample(rng));
            layers.push(Layer::Linear(Linear {
                weight,
                bias: Array1::zeros(fan_out),
            }));
            if i + 1 < n {
                if arch.batch_norm {
                    layers.push(Layer::BatchNorm(BatchNorm::new(fan_out)));
                }
                layers.push(Layer::Relu);
            }
        }
        Ok(Self {
            architecture: arch,
            layers,
            version: 0,
        })
    }

    /// Builds a model from explicit layers, checking that widths chain.
    pub fn from_layers(architecture: Architecture, layers: Vec<Layer>) -> Result<Self, NnError> {
        let mut width = architecture.input_dim();
        let mut linear = 0;
        for layer in &layers {
            match layer {
                Layer::Linear(l) => {
                    if l.weight.ncols() != width || l.bias.len() != l.weight.nrows() {
                        return Err(shape_err(
                            format!("linear layer with {width} inputs"),
                            format!("weight {:?}, bias {}", l.weight.dim(), l.bias.len()),
                        ));
                    }
                    if architecture.widths.get(linear + 1) != Some(&l.weight.nrows()) {
                        return Err(shape_err(
                            format!("widths {:?}", architecture.widths),
                            format!("linear layer {linear} with {} outputs", l.weight.nrows()),
                        ));
                    }
                    width = l.weight.nrows();
                    linear += 1;
                }
                Layer::BatchNorm(bn) => {
                    let w = [&bn.shift, &bn.running_mean, &bn.running_var]
                        .iter()
                        .all(|a| a.len() == bn.width());
                    if !w || bn.width() != width {
                        return Err(shape_err(format!("batch norm of width {width}"), "ragged"));
                    }
                    if bn.running_var.iter().any(|&v| !(v > 0.0)) || !(bn.eps > 0.0) {
                        return Err(NnError::Checkpoint(
                            "batch-norm variance and epsilon must be positive".into(),
                        ));
                    }
                }
                Layer::Relu => {}
            }
        }
        if linear != architecture.num_linear() {
            return Err(shape_err(
                format!("{} linear layers", architecture.num_linear()),
                linear,
            ));
        }
        Ok(Self {
            architecture,
            layers,
            version: 0,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.architecture
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_classes(&self) -> usize {
        self.architecture.num_classes()
    }

    pub fn input_dim(&self) -> usize {
        self.architecture.input_dim()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn num_parameters(&self) -> usize {
        self.parameter_slices().iter().map(|s| s.len()).sum()
    }

    /// Trainable buffers: each linear weight then bias, each batch-norm
    /// scale then shift, in layer order.
    pub fn parameter_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Linear(lin) => {
                    out.push(lin.weight.as_slice().expect("standard layout"));
                    out.push(lin.bias.as_slice().expect("standard layout"));
                }
                Layer::BatchNorm(bn) => {
                    out.push(bn.scale.as_slice().expect("standard layout"));
                    out.push(bn.shift.as_slice().expect("standard layout"));
                }
                Layer::Relu => {}
            }
        }
        out
    }

    /// Mutable access to the trainable buffers. Counts as a parameter
    /// update, so earlier caches become stale.
    pub fn parameter_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.version += 1;
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                Layer::Linear(lin) => {
                    out.push(lin.weight.as_slice_mut().expect("standard layout"));
                    out.push(lin.bias.as_slice_mut().expect("standard layout"));
                }
                Layer::BatchNorm(bn) => {
                    out.push(bn.scale.as_slice_mut().expect("standard layout"));
                    out.push(bn.shift.as_slice_mut().expect("standard layout"));
                }
                Layer::Relu => {}
            }
        }
        out
    }

    fn check_input(&self, x: &ArrayView2<'_, f64>) -> Result<(), NnError> {
        if x.ncols() != self.input_dim() {
            return Err(shape_err(
                format!("{} input features", self.input_dim()),
                x.ncols(),
            ));
        }
        Ok(())
    }

    /// Eval-mode logits, no cache.
    pub fn logits(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, NnError> {
        self.check_input(&x)?;
        let mut h = x.to_owned();
        for layer in &self.layers {
            h = match layer {
                Layer::Linear(l) => linear_forward(l, h.view()),
                Layer::BatchNorm(bn) => {
                    let inv = bn.running_var.mapv(|v| 1.0 / (v + bn.eps).sqrt());
                    let mut h = h;
                    Zip::from(h.rows_mut()).for_each(|mut row| {
                        Zip::from(&mut row)
                            .and(&bn.running_mean)
                            .and(&inv)
                            .and(&bn.scale)
                            .and(&bn.shift)
                            .for_each(|v, &m, &i, &g, &b| *v = g * ((*v - m) * i) + b);
                    });
                    h
                }
                Layer::Relu => {
                    let mut h = h;
                    h.mapv_inplace(relu);
                    h
                }
            };
        }
        Ok(h)
    }

    /// Forward pass with cache. In train mode the batch statistics are also
    /// folded into the running statistics.
    pub fn forward(
        &mut self,
        x: ArrayView2<'_, f64>,
        mode: Mode,
    ) -> Result<(Array2<f64>, ForwardCache), NnError> {
        let (out, cache, stats) = self.run(x, mode)?;
        if mode == Mode::Train {
            let n = x.nrows() as f64;
            let bns = self.layers.iter_mut().filter_map(|l| match l {
                Layer::BatchNorm(bn) => Some(bn),
                _ => None,
            });
            for (bn, (mean, var)) in bns.zip(stats) {
                let unbiased = n / (n - 1.0);
                Zip::from(&mut bn.running_mean)
                    .and(&mean)
                    .for_each(|r, &m| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m);
                Zip::from(&mut bn.running_var)
                    .and(&var)
                    .for_each(|r, &v| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * unbiased);
            }
        }
        Ok((out, cache))
    }

    /// Forward pass with cache that leaves the running statistics untouched.
    pub fn forward_frozen(
        &self,
        x: ArrayView2<'_, f64>,
        mode: Mode,
    ) -> Result<(Array2<f64>, ForwardCache), NnError> {
        let (out, cache, _) = self.run(x, mode)?;
        Ok((out, cache))
    }

    #[allow(clippy::type_complexity)]
    fn run(
        &self,
        x: ArrayView2<'_, f64>,
        mode: Mode,
    ) -> Result<(Array2<f64>, ForwardCache, Vec<(Array1<f64>, Array1<f64>)>), NnError> {
        self.check_input(&x)?;
        let n = x.nrows();
        if n == 0 {
            return Err(NnError::EmptyDataset);
        }
        if mode == Mode::Train && self.architecture.batch_norm && n < 2 {
            return Err(NnError::BatchTooSmall);
        }
        let mut h = x.to_owned();
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut stats = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Linear(l) => {
                    let out = linear_forward(l, h.view());
                    caches.push(LayerCache::Linear { input: h });
                    h = out;
                }
                Layer::BatchNorm(bn) => {
                    let (mean, var) = match mode {
                        Mode::Train => {
                            let mean = h.mean_axis(Axis(0)).expect("nonempty batch");
                            let var = h.var_axis(Axis(0), 0.0);
                            (mean, var)
                        }
                        Mode::Eval => (bn.running_mean.clone(), bn.running_var.clone()),
                    };
                    let inv_std = var.mapv(|v| 1.0 / (v + bn.eps).sqrt());
                    let mut x_hat = h;
                    Zip::from(x_hat.rows_mut()).for_each(|mut row| {
                        Zip::from(&mut row)
                            .and(&mean)
                            .and(&inv_std)
                            .for_each(|v, &m, &i| *v = (*v - m) * i);
                    });
                    let mut out = x_hat.clone();
                    Zip::from(out.rows_mut()).for_each(|mut row| {
                        Zip::from(&mut row)
                            .and(&bn.scale)
                            .and(&bn.shift)
                            .for_each(|v, &g, &b| *v = g * *v + b);
                    });
                    caches.push(LayerCache::BatchNorm {
                        x_hat,
                        inv_std,
                        mode,
                    });
                    if mode == Mode::Train {
                        stats.push((mean, var));
                    }
                    h = out;
                }
                Layer::Relu => {
                    h.mapv_inplace(relu);
                    caches.push(LayerCache::Relu { output: h.clone() });
                }
            }
        }
        let cache = ForwardCache {
            version: self.version,
            rows: n,
            layers: caches,
        };
        Ok((h, cache, stats))
    }

    /// Gradients of the loss whose derivative with respect to the logits is
    /// `grad_logits` (for a mean batch loss it already carries the `1/n`).
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_logits: ArrayView2<'_, f64>,
    ) -> Result<Gradients, NnError> {
        if cache.version != self.version || cache.layers.len() != self.layers.len() {
            return Err(NnError::StaleCache);
        }
        if grad_logits.dim() != (cache.rows, self.num_classes()) {
            return Err(shape_err(
                format!("{:?}", (cache.rows, self.num_classes())),
                format!("{:?}", grad_logits.dim()),
            ));
        }
        let mut g = grad_logits.to_owned();
        let mut grads = Vec::with_capacity(self.layers.len());
        for (i, (layer, lc)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            match (layer, lc) {
                (Layer::Linear(l), LayerCache::Linear { input }) => {
                    let weight = g.t().dot(input);
                    let bias = g.sum_axis(Axis(0));
                    if i > 0 {
                        g = g.dot(&l.weight);
                    }
                    grads.push(LayerGrad::Linear { weight, bias });
                }
                (
                    Layer::BatchNorm(bn),
                    LayerCache::BatchNorm {
                        x_hat,
                        inv_std,
                        mode,
                    },
                ) => {
                    let shift = g.sum_axis(Axis(0));
                    let scale = (&g * x_hat).sum_axis(Axis(0));
                    match mode {
                        Mode::Train => {
                            let n = g.nrows() as f64;
                            let coef = &bn.scale * inv_std / n;
                            Zip::from(g.rows_mut())
                                .and(x_hat.rows())
                                .for_each(|mut gr, xr| {
                                    Zip::from(&mut gr)
                                        .and(&xr)
                                        .and(&coef)
                                        .and(&shift)
                                        .and(&scale)
                                        .for_each(|gv, &xh, &c, &db, &dg| {
                                            *gv = c * (n * *gv - db - xh * dg);
                                        });
                                });
                        }
                        Mode::Eval => {
                            let coef = &bn.scale * inv_std;
                            g *= &coef;
                        }
                    }
                    grads.push(LayerGrad::BatchNorm { scale, shift });
                }
                (Layer::Relu, LayerCache::Relu { output }) => {
                    Zip::from(&mut g).and(output).for_each(|gv, &o| {
                        if o <= 0.0 {
                            *gv = 0.0;
                        }
                    });
                    grads.push(LayerGrad::Relu);
                }
                _ => return Err(NnError::StaleCache),
            }
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

fn linear_forward(l: &Linear, x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = x.dot(&l.weight.t());
    out += &l.bias;
    out
}

/// Row-wise argmax; ties go to the lowest index.
pub fn argmax_rows(logits: ArrayView2<'_, f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{batch_cost, CandidateSet, StableConstants};
    use crate::oracles::relative_error;
    use ndarray::array;

    fn rng(seed: u64) -> RandomSource {
        RandomSource::new(seed)
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut r = rng(seed);
        let d = Uniform::new(-2.0, 2.0);
        Array2::from_shape_simple_fn((rows, cols), || d.sample(&mut r))
    }

    #[test]
    fn architecture_validation() {
        assert!(matches!(
            Architecture::new(vec![3], false),
            Err(NnError::TooFewLayers)
        ));
        assert!(matches!(
            Architecture::new(vec![3, 0, 2], false),
            Err(NnError::ZeroWidth(1))
        ));
        let a = Architecture::parse("784, 300,10", true).unwrap();
        assert_eq!(a.widths, vec![784, 300, 10]);
        assert!(Architecture::parse("784,x", true).is_err());
    }

    #[test]
    fn init_matches_architecture() {
        let arch = Architecture::new(vec![784, 300, 301, 302, 303, 10], true).unwrap();
        let m = MlpModel::init(&arch, &mut rng(1)).unwrap();
        let linear: Vec<_> = m
            .layers()
            .iter()
            .filter_map(|l| match l {
                Layer::Linear(l) => Some(l.weight.dim()),
                _ => None,
            })
            .collect();
        assert_eq!(
            linear,
            vec![(300, 784), (301, 300), (302, 301), (303, 302), (10, 303)]
        );
        assert_eq!(m.layers().len(), 5 + 4 + 4);
        assert!(matches!(m.layers().last(), Some(Layer::Linear(_))));

        let Layer::Linear(first) = &m.layers()[0] else {
            unreachable!()
        };
        let limit = (6.0f64 / 784.0).sqrt();
        assert!(first.weight.iter().all(|w| w.abs() <= limit));
        assert!(first.weight.mean().unwrap().abs() < 0.005);
        assert!(first.bias.iter().all(|&b| b == 0.0));

        let again = MlpModel::init(&arch, &mut rng(1)).unwrap();
        assert_eq!(m, again);
        assert_ne!(m, MlpModel::init(&arch, &mut rng(2)).unwrap());
    }

    #[test]
    fn identity_linear_passes_input_through() {
        let arch = Architecture::new(vec![3, 3], false).unwrap();
        let layer = Linear {
            weight: Array2::eye(3),
            bias: Array1::zeros(3),
        };
        let m = MlpModel::from_layers(arch, vec![Layer::Linear(layer)]).unwrap();
        let x = array![[1.0, -2.0, 3.5], [0.0, 0.25, -7.0]];
        assert_eq!(m.logits(x.view()).unwrap(), x);
    }

    #[test]
    fn eval_mode_is_deterministic_and_side_effect_free() {
        let arch = Architecture::new(vec![4, 6, 3], true).unwrap();
        let mut m = MlpModel::init(&arch, &mut rng(3)).unwrap();
        let x = random_matrix(8, 4, 4);
        m.forward(x.view(), Mode::Train).unwrap();
        let before = m.clone();
        let (a, _) = m.forward(x.view(), Mode::Eval).unwrap();
        let (b, _) = m.forward(x.view(), Mode::Eval).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, m.logits(x.view()).unwrap());
        assert_eq!(m, before);
    }

    #[test]
    fn batch_norm_normalizes_in_train_mode() {
        let arch = Architecture::new(vec![5, 7, 2], true).unwrap();
        let m = MlpModel::init(&arch, &mut rng(5)).unwrap();
        let x = random_matrix(64, 5, 6);
        let (_, cache) = m.forward_frozen(x.view(), Mode::Train).unwrap();
        let LayerCache::BatchNorm { x_hat, .. } = &cache.layers[1] else {
            panic!("expected batch norm cache")
        };
        for col in x_hat.columns() {
            let mean = col.mean().unwrap();
            let var = col.var(0.0);
            assert!(mean.abs() < 1e-6, "{mean}");
            // eps pulls the variance slightly below 1 for unit-scale inputs
            assert!((var - 1.0).abs() < 1e-4, "{var}");
        }
    }

    #[test]
    fn single_sample_train_batch_is_rejected() {
        let arch = Architecture::new(vec![2, 3, 2], true).unwrap();
        let mut m = MlpModel::init(&arch, &mut rng(0)).unwrap();
        let x = array![[1.0, 2.0]];
        assert!(matches!(
            m.forward(x.view(), Mode::Train),
            Err(NnError::BatchTooSmall)
        ));
        assert!(m.forward(x.view(), Mode::Eval).is_ok());
        assert!(matches!(
            m.logits(array![[1.0]].view()),
            Err(NnError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn running_statistics_update() {
        let arch = Architecture::new(vec![1, 1, 1], true).unwrap();
        let layers = vec![
            Layer::Linear(Linear {
                weight: array![[1.0]],
                bias: array![0.0],
            }),
            Layer::BatchNorm(BatchNorm::new(1)),
            Layer::Relu,
            Layer::Linear(Linear {
                weight: array![[1.0]],
                bias: array![0.0],
            }),
        ];
        let mut m = MlpModel::from_layers(arch, layers).unwrap();
        m.forward(array![[1.0], [3.0]].view(), Mode::Train).unwrap();
        let Layer::BatchNorm(bn) = &m.layers()[1] else {
            unreachable!()
        };
        // batch mean 2, unbiased variance 2
        assert!((bn.running_mean[0] - 0.2).abs() < 1e-15);
        assert!((bn.running_var[0] - (0.9 + 0.2)).abs() < 1e-15);
    }

    fn mean_loss(m: &MlpModel, x: &Array2<f64>, sets: &[CandidateSet], mode: Mode) -> f64 {
        let (logits, _) = m.forward_frozen(x.view(), mode).unwrap();
        batch_cost(logits.view(), sets, &StableConstants::default())
            .unwrap()
            .mean_cost
    }

    fn check_backward_against_finite_differences(batch_norm: bool, mode: Mode) {
        let arch = Architecture::new(vec![4, 6, 3], batch_norm).unwrap();
        let mut m = MlpModel::init(&arch, &mut rng(7)).unwrap();
        // move biases and batch-norm parameters off their initial values
        for (i, s) in m.parameter_slices_mut().into_iter().enumerate() {
            for (j, v) in s.iter_mut().enumerate() {
                *v += 0.1 * (((i * 31 + j * 17) % 13) as f64 / 13.0 - 0.5);
            }
        }
        let x = random_matrix(5, 4, 8);
        let sets = vec![
            CandidateSet::new(3, [0]).unwrap(),
            CandidateSet::new(3, [1, 2]).unwrap(),
            CandidateSet::new(3, [0, 2]).unwrap(),
            CandidateSet::new(3, [2]).unwrap(),
            CandidateSet::new(3, [0, 1]).unwrap(),
        ];
        let (logits, cache) = m.forward_frozen(x.view(), mode).unwrap();
        let bc = batch_cost(logits.view(), &sets, &StableConstants::default()).unwrap();
        let analytic = m.backward(&cache, bc.grad.view()).unwrap().flatten();

        let h = 1e-6;
        let mut numeric = Vec::new();
        let sizes: Vec<usize> = m.parameter_slices().iter().map(|s| s.len()).collect();
        for (b, &len) in sizes.iter().enumerate() {
            for j in 0..len {
                let orig = m.parameter_slices()[b][j];
                m.parameter_slices_mut()[b][j] = orig + h;
                let up = mean_loss(&m, &x, &sets, mode);
                m.parameter_slices_mut()[b][j] = orig - h;
                let down = mean_loss(&m, &x, &sets, mode);
                m.parameter_slices_mut()[b][j] = orig;
                numeric.push((up - down) / (2.0 * h));
            }
        }
        assert_eq!(analytic.len(), numeric.len());
        let worst = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| relative_error(*a, *n, 1e-6))
            .fold(0.0, f64::max);
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn backward_matches_finite_differences() {
        check_backward_against_finite_differences(false, Mode::Train);
        check_backward_against_finite_differences(true, Mode::Train);
        check_backward_against_finite_differences(true, Mode::Eval);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let arch = Architecture::new(vec![3, 4, 2], true).unwrap();
        let m = MlpModel::init(&arch, &mut rng(9)).unwrap();
        let x = random_matrix(6, 3, 10);
        let (_, cache) = m.forward_frozen(x.view(), Mode::Train).unwrap();
        let g = m.backward(&cache, Array2::zeros((6, 2)).view()).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_batch_has_the_same_mean_gradient() {
        let arch = Architecture::new(vec![3, 5, 3], true).unwrap();
        let m = MlpModel::init(&arch, &mut rng(11)).unwrap();
        let x = random_matrix(4, 3, 12);
        let sets: Vec<_> = (0..4)
            .map(|i| CandidateSet::new(3, [i % 3]).unwrap())
            .collect();
        let grad = |x: &Array2<f64>, sets: &[CandidateSet]| {
            let (logits, cache) = m.forward_frozen(x.view(), Mode::Train).unwrap();
            let bc = batch_cost(logits.view(), sets, &StableConstants::default()).unwrap();
            m.backward(&cache, bc.grad.view()).unwrap().flatten()
        };
        let single = grad(&x, &sets);
        let x2 = ndarray::concatenate![Axis(0), x, x];
        let sets2: Vec<_> = sets.iter().chain(&sets).cloned().collect();
        let double = grad(&x2, &sets2);
        for (a, b) in single.iter().zip(&double) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn stale_cache_is_rejected() {
        let arch = Architecture::new(vec![2, 2], false).unwrap();
        let mut m = MlpModel::init(&arch, &mut rng(0)).unwrap();
        let (_, cache) = m.forward(array![[1.0, 2.0]].view(), Mode::Train).unwrap();
        m.parameter_slices_mut()[0][0] += 1.0;
        assert!(matches!(
            m.backward(&cache, Array2::zeros((1, 2)).view()),
            Err(NnError::StaleCache)
        ));
    }

    #[test]
    fn argmax_breaks_ties_low() {
        let l = array![[0.1, 2.0, -1.0], [1.0, 1.0, 0.0], [-3.0, -3.0, -3.0]];
        assert_eq!(argmax_rows(l.view()), vec![1, 0, 0]);
        let r = random_matrix(1000, 5, 13);
        let s = r.mapv(crate::loss::primitives::sigmoid);
        assert_eq!(argmax_rows(r.view()), argmax_rows(s.view()));
    }
}
