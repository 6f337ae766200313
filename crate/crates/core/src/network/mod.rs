//! Feed-forward body of dense and convolution layers with ReLU, a bank of
//! per-task linear heads, and hand-written backpropagation.
//!
//! Samples are rows and a layer computes `y = x·W + b` with `W` of shape
//! `d_in × d_out`. Every body layer is followed by a ReLU; the head for the
//! active task maps the last body output to logits.

pub mod conv;
pub mod loss;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::adapter::{self, AdapterPair};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::SeededRng;

pub use conv::{col2im, im2col, ConvGeometry};
pub use loss::{argmax_rows, cross_entropy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LayerSpec {
    Dense {
        d_in: usize,
        d_out: usize,
    },
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        input_hw: [usize; 2],
    },
}

impl LayerSpec {
    /// Width of the flattened input rows.
    pub fn input_len(&self) -> usize {
        match *self {
            LayerSpec::Dense { d_in, .. } => d_in,
            LayerSpec::Conv { .. } => self.geometry().unwrap().input_len(),
        }
    }

    /// Width of the flattened output rows.
    pub fn output_len(&self) -> usize {
        match *self {
            LayerSpec::Dense { d_out, .. } => d_out,
            LayerSpec::Conv { out_channels, .. } => out_channels * self.geometry().unwrap().patches_per_sample(),
        }
    }

    /// Shape of `W`: rows are the input directions a null basis lives in.
    pub fn weight_shape(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Dense { d_in, d_out } => (d_in, d_out),
            LayerSpec::Conv { out_channels, .. } => (self.geometry().unwrap().patch_len(), out_channels),
        }
    }

    pub fn geometry(&self) -> Option<ConvGeometry> {
        match *self {
            LayerSpec::Dense { .. } => None,
            LayerSpec::Conv {
                in_channels,
                kernel,
                stride,
                input_hw,
                ..
            } => Some(ConvGeometry {
                channels: in_channels,
                height: input_hw[0],
                width: input_hw[1],
                kernel,
                stride,
            }),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::Dense { d_in, d_out } => {
                if d_in == 0 || d_out == 0 {
                    return Err(Error::Config(format!(
                        "dense layer needs non-zero dimensions, got {d_in}x{d_out}"
                    )));
                }
            }
            LayerSpec::Conv { out_channels, .. } => {
                if out_channels == 0 {
                    return Err(Error::Config("convolution needs output channels".into()));
                }
                self.geometry()
                    .unwrap()
                    .validate()
                    .map_err(|e| Error::Config(e.to_string()))?;
            }
        }
        Ok(())
    }
}

fn default_bias() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    /// Classes per task head.
    pub head_dim: usize,
    #[serde(default = "default_bias")]
    pub bias: bool,
}

impl NetworkSpec {
    /// Dense ReLU stack `d_in → hidden[0] → … → hidden[last]`.
    pub fn mlp(d_in: usize, hidden: &[usize], head_dim: usize) -> Self {
        let mut layers = Vec::with_capacity(hidden.len());
        let mut prev = d_in;
        for &h in hidden {
            layers.push(LayerSpec::Dense { d_in: prev, d_out: h });
            prev = h;
        }
        Self {
            layers,
            head_dim,
            bias: true,
        }
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("network needs at least one hidden layer".into()));
        }
        if self.head_dim == 0 {
            return Err(Error::Config("head_dim must be positive".into()));
        }
        for layer in &self.layers {
            layer.validate()?;
        }
        for (l, pair) in self.layers.windows(2).enumerate() {
            if pair[0].output_len() != pair[1].input_len() {
                return Err(Error::Config(format!(
                    "layer {} outputs {} values but layer {} expects {}",
                    l,
                    pair[0].output_len(),
                    l + 1,
                    pair[1].input_len()
                )));
            }
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].input_len()
    }

    pub fn feature_len(&self) -> usize {
        self.layers.last().map_or(0, LayerSpec::output_len)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub weight: Matrix,
    /// `1 × d_out` (one entry per output channel for convolutions).
    pub bias: Option<Matrix>,
}

/// Body weights of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    pub layers: Vec<LayerWeights>,
}

impl Network {
    /// He-normal weights (`std = √(2 / fan_in)`), zero biases.
    pub fn init(spec: NetworkSpec, rng: &mut SeededRng) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layers
            .iter()
            .map(|l| {
                let (fan_in, fan_out) = l.weight_shape();
                let std = (2.0 / fan_in as f64).sqrt();
                let weight = Matrix::from_fn(fan_in, fan_out, |_, _| std * rng.normal());
                LayerWeights {
                    weight,
                    bias: spec.bias.then(|| Matrix::zeros(1, fan_out)),
                }
            })
            .collect();
        Ok(Self { spec, layers })
    }

    pub fn from_weights(spec: NetworkSpec, layers: Vec<LayerWeights>) -> Result<Self> {
        spec.validate()?;
        if layers.len() != spec.depth() {
            return Err(Error::Shape(format!(
                "{} weight sets for {} layers",
                layers.len(),
                spec.depth()
            )));
        }
        for (l, (ls, w)) in spec.layers.iter().zip(&layers).enumerate() {
            let shape = ls.weight_shape();
            if w.weight.shape() != shape {
                return Err(Error::Shape(format!(
                    "layer {l} weight is {:?}, expected {:?}",
                    w.weight.shape(),
                    shape
                )));
            }
            match (&w.bias, spec.bias) {
                (Some(b), true) if b.shape() == (1, shape.1) => {}
                (None, false) => {}
                _ => return Err(Error::Shape(format!("layer {l} bias does not match spec"))),
            }
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.rows() * l.weight.cols() + l.bias.as_ref().map_or(0, |b| b.cols()))
            .sum()
    }
}

/// Linear classifier for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Head {
    /// Normal weights with `std = √(1 / feature_len)`, zero bias.
    pub fn init(feature_len: usize, classes: usize, rng: &mut SeededRng) -> Self {
        let std = (1.0 / feature_len as f64).sqrt();
        Self {
            weight: Matrix::from_fn(feature_len, classes, |_, _| std * rng.normal()),
            bias: Matrix::zeros(1, classes),
        }
    }

    pub fn classes(&self) -> usize {
        self.weight.cols()
    }

    pub fn apply(&self, features: &Matrix) -> Result<Matrix> {
        let mut out = features.matmul(&self.weight)?;
        add_row_bias(&mut out, &self.bias);
        Ok(out)
    }
}

/// One head per task, each created once before its task is trained.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HeadBank {
    heads: BTreeMap<usize, Head>,
}

impl HeadBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, task: usize, head: Head) -> Result<()> {
        if self.heads.contains_key(&task) {
            return Err(Error::State(format!("head for task {task} already exists")));
        }
        self.heads.insert(task, head);
        Ok(())
    }

    pub fn get(&self, task: usize) -> Result<&Head> {
        self.heads
            .get(&task)
            .ok_or_else(|| Error::State(format!("no head for task {task}")))
    }

    pub fn get_mut(&mut self, task: usize) -> Result<&mut Head> {
        self.heads
            .get_mut(&task)
            .ok_or_else(|| Error::State(format!("no head for task {task}")))
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input to each layer as seen by its weight matrix: the batch rows for a
    /// dense layer, the im2col patch matrix for a convolution.
    pub inputs: Vec<Matrix>,
    /// `x·W_eff + b` per layer, in the same row layout as `inputs`.
    pub pre_activations: Vec<Matrix>,
    /// ReLU output of the last layer (the head input).
    pub features: Matrix,
    pub logits: Matrix,
    batch: usize,
}

impl ForwardTrace {
    pub fn depth(&self) -> usize {
        self.inputs.len()
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    /// Gradient with respect to the effective weight `W + U·V`.
    pub weight: Matrix,
    pub bias: Option<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
    /// `∂L/∂V` per layer when adapters were active.
    pub adapters: Option<Vec<Matrix>>,
    pub head: Head,
}

fn add_row_bias(m: &mut Matrix, bias: &Matrix) {
    let b = bias.row(0);
    for r in 0..m.rows() {
        for (v, bb) in m.row_mut(r).iter_mut().zip(b) {
            *v += bb;
        }
    }
}

fn relu(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    out.as_mut_slice().iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v = 0.0
        }
    });
    out
}

fn column_sums(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, m.cols());
    for r in 0..m.rows() {
        for (o, v) in out.as_mut_slice().iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
    out
}

fn check_adapters(net: &Network, adapters: Option<&[AdapterPair]>) -> Result<()> {
    if let Some(pairs) = adapters {
        if pairs.len() != net.layers.len() {
            return Err(Error::Shape(format!(
                "{} adapters for {} layers",
                pairs.len(),
                net.layers.len()
            )));
        }
    }
    Ok(())
}

/// Runs the body on `batch`, returning the per-layer inputs and
/// pre-activations and the final features.
pub fn forward_body(
    net: &Network,
    adapters: Option<&[AdapterPair]>,
    batch: &Matrix,
) -> Result<(Vec<Matrix>, Vec<Matrix>, Matrix)> {
    check_adapters(net, adapters)?;
    if batch.cols() != net.spec.input_len() {
        return Err(Error::Shape(format!(
            "batch width {} does not match network input {}",
            batch.cols(),
            net.spec.input_len()
        )));
    }
    let n = batch.rows();
    let mut inputs = Vec::with_capacity(net.layers.len());
    let mut pre = Vec::with_capacity(net.layers.len());
    let mut h = batch.clone();
    for (l, (spec, weights)) in net.spec.layers.iter().zip(&net.layers).enumerate() {
        let x = match spec.geometry() {
            Some(g) => im2col(&h, &g)?,
            None => h,
        };
        let mut z = match adapters {
            Some(pairs) => adapter::adapted_forward(&weights.weight, &pairs[l], &x)?,
            None => x.matmul(&weights.weight)?,
        };
        if let Some(b) = &weights.bias {
            add_row_bias(&mut z, b);
        }
        let a = relu(&z);
        h = match spec.geometry() {
            Some(g) => conv::patches_to_maps(&a, n, g.patches_per_sample()),
            None => a,
        };
        inputs.push(x);
        pre.push(z);
    }
    Ok((inputs, pre, h))
}

/// Full forward pass through the body and one head.
pub fn forward(
    net: &Network,
    adapters: Option<&[AdapterPair]>,
    head: &Head,
    batch: &Matrix,
) -> Result<(Matrix, ForwardTrace)> {
    let (inputs, pre_activations, features) = forward_body(net, adapters, batch)?;
    if head.weight.rows() != features.cols() {
        return Err(Error::Shape(format!(
            "head expects {} features, body produces {}",
            head.weight.rows(),
            features.cols()
        )));
    }
    let logits = head.apply(&features)?;
    let trace = ForwardTrace {
        inputs,
        pre_activations,
        features,
        logits: logits.clone(),
        batch: batch.rows(),
    };
    Ok((logits, trace))
}

/// Gradients of the loss whose logit gradient is `dlogits`.
pub fn backward(
    net: &Network,
    adapters: Option<&[AdapterPair]>,
    head: &Head,
    trace: &ForwardTrace,
    dlogits: &Matrix,
) -> Result<Gradients> {
    check_adapters(net, adapters)?;
    let n = trace.batch;
    if trace.depth() != net.layers.len() || trace.pre_activations.len() != net.layers.len() {
        return Err(Error::State(format!(
            "trace has {} layers, network has {}",
            trace.depth(),
            net.layers.len()
        )));
    }
    for (l, (x, w)) in trace.inputs.iter().zip(&net.layers).enumerate() {
        if x.cols() != w.weight.rows() || trace.pre_activations[l].cols() != w.weight.cols() {
            return Err(Error::State(format!("trace for layer {l} does not match weights")));
        }
    }
    if dlogits.shape() != trace.logits.shape() || head.weight.rows() != trace.features.cols() {
        return Err(Error::State("logit gradient does not match trace".into()));
    }

    let head_grad = Head {
        weight: trace.features.t_matmul(dlogits)?,
        bias: column_sums(dlogits),
    };
    let mut upstream = dlogits.matmul_t(&head.weight)?;

    let depth = net.layers.len();
    let mut layer_grads = Vec::with_capacity(depth);
    let mut adapter_grads = adapters.map(|_| Vec::with_capacity(depth));
    for l in (0..depth).rev() {
        let spec = &net.spec.layers[l];
        let weights = &net.layers[l];
        let z = &trace.pre_activations[l];
        let x = &trace.inputs[l];
        let mut dz = match spec.geometry() {
            Some(g) => conv::maps_to_patches(&upstream, weights.weight.cols(), g.patches_per_sample()),
            None => upstream,
        };
        for (d, &zv) in dz.as_mut_slice().iter_mut().zip(z.as_slice()) {
            if zv <= 0.0 {
                *d = 0.0;
            }
        }
        let dw = x.t_matmul(&dz)?;
        let db = weights.bias.as_ref().map(|_| column_sums(&dz));
        if let (Some(grads), Some(pairs)) = (adapter_grads.as_mut(), adapters) {
            grads.push(adapter::grad_v(&pairs[l], x, &dz)?);
        }
        if l > 0 {
            let mut dx = dz.matmul_t(&weights.weight)?;
            if let Some(pairs) = adapters {
                let pair = &pairs[l];
                if pair.rank() > 0 {
                    let dzv = dz.matmul_t(pair.v())?;
                    dx.axpy(1.0, &dzv.matmul_t(pair.basis())?);
                }
            }
            upstream = match spec.geometry() {
                Some(g) => col2im(&dx, &g, n)?,
                None => dx,
            };
        } else {
            upstream = Matrix::zeros(0, 0);
        }
        layer_grads.push(LayerGrad { weight: dw, bias: db });
    }
    layer_grads.reverse();
    if let Some(g) = adapter_grads.as_mut() {
        g.reverse();
    }
    Ok(Gradients {
        layers: layer_grads,
        adapters: adapter_grads,
        head: head_grad,
    })
}

/// Mean cross-entropy loss and all gradients for one labelled batch.
pub fn loss_and_gradients(
    net: &Network,
    adapters: Option<&[AdapterPair]>,
    head: &Head,
    batch: &Matrix,
    labels: &[usize],
) -> Result<(f64, Gradients)> {
    let (logits, trace) = forward(net, adapters, head, batch)?;
    let (loss, dlogits) = cross_entropy(&logits, labels)?;
    let grads = backward(net, adapters, head, &trace, &dlogits)?;
    Ok((loss, grads))
}

/// Percentage of rows whose argmax logit equals the label.
pub fn accuracy(
    net: &Network,
    adapters: Option<&[AdapterPair]>,
    head: &Head,
    batch: &Matrix,
    labels: &[usize],
) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Shape("accuracy of an empty set".into()));
    }
    let (logits, _) = forward(net, adapters, head, batch)?;
    let correct = argmax_rows(&logits).iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(100.0 * correct as f64 / labels.len() as f64)
}
