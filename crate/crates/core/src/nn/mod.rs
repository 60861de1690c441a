//! A small feed-forward CNN engine: 3x3 conv + ReLU, 2x2 max pooling,
//! adaptive average pooling and dense layers, with hand-written backward
//! passes. Generic over the float type so gradients can be checked in f64
//! while training runs in f32.

mod layers;
pub mod loss;
mod sgd;

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use layers::{Conv3x3, Dense, Shape};
pub use sgd::Sgd;

pub trait Scalar: Float + FromPrimitive + Sum + Default + Debug + Send + Sync + 'static {}
impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("layer {layer}: input shape {shape:?} collapses to zero")]
    DegenerateShape { layer: String, shape: Shape },
    #[error("input has {actual} values, network expects {expected}")]
    InputSize { expected: usize, actual: usize },
    #[error("parameter {name} has {actual} values, expected {expected}")]
    ParamSize { name: String, expected: usize, actual: usize },
    #[error("no parameter named {0}")]
    UnknownParam(String),
}

/// Serializable description of one layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv { name: String, in_channels: usize, out_channels: usize },
    MaxPool,
    AdaptiveAvgPool { side: usize },
    Dense { name: String, inputs: usize, outputs: usize, relu: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind<T> {
    Conv(Conv3x3<T>),
    MaxPool,
    AdaptiveAvgPool(usize),
    Dense(Dense<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub name: String,
    pub kind: LayerKind<T>,
    pub frozen: bool,
    input_shape: Shape,
    output_shape: Shape,
}

impl<T: Scalar> Layer<T> {
    pub fn is_conv(&self) -> bool {
        matches!(self.kind, LayerKind::Conv(_))
    }

    pub fn has_params(&self) -> bool {
        matches!(self.kind, LayerKind::Conv(_) | LayerKind::Dense(_))
    }

    pub fn trainable(&self) -> bool {
        self.has_params() && !self.frozen
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn output_shape(&self) -> Shape {
        self.output_shape
    }

    pub fn spec(&self) -> LayerSpec {
        match &self.kind {
            LayerKind::Conv(c) => LayerSpec::Conv {
                name: self.name.clone(),
                in_channels: c.in_channels,
                out_channels: c.out_channels,
            },
            LayerKind::MaxPool => LayerSpec::MaxPool,
            LayerKind::AdaptiveAvgPool(side) => LayerSpec::AdaptiveAvgPool { side: *side },
            LayerKind::Dense(d) => LayerSpec::Dense {
                name: self.name.clone(),
                inputs: d.inputs,
                outputs: d.outputs,
                relu: d.relu,
            },
        }
    }

    /// (weight, bias) slices of a parametrized layer.
    pub fn params(&self) -> Option<(&[T], &[T])> {
        match &self.kind {
            LayerKind::Conv(c) => Some((&c.weight, &c.bias)),
            LayerKind::Dense(d) => Some((&d.weight, &d.bias)),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<(&mut Vec<T>, &mut Vec<T>)> {
        match &mut self.kind {
            LayerKind::Conv(c) => Some((&mut c.weight, &mut c.bias)),
            LayerKind::Dense(d) => Some((&mut d.weight, &mut d.bias)),
            _ => None,
        }
    }
}

/// Per-layer parameter gradients; `None` for layers without trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Option<(Vec<T>, Vec<T>)>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn scale(&mut self, factor: T) {
        for (w, b) in self.layers.iter_mut().flatten() {
            w.iter_mut().chain(b.iter_mut()).for_each(|v| *v = *v * factor);
        }
    }
}

/// Activations recorded by a forward pass, consumed by the backward pass.
pub struct Trace<T> {
    activations: Vec<Vec<T>>,
    pool_indices: Vec<Option<Vec<usize>>>,
}

impl<T> Trace<T> {
    pub fn output(&self) -> &[T] {
        self.activations.last().expect("trace always holds the input")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    input: Shape,
    layers: Vec<Layer<T>>,
}

impl Network<f32> {
    /// Builds a network with Glorot-uniform weights and zero biases, drawn
    /// from a ChaCha stream seeded by `seed` in layer order.
    pub fn init(input: Shape, specs: &[LayerSpec], seed: u64) -> Result<Self, NetworkError> {
        let mut net = Self::zeros(input, specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut net.layers {
            let (fan_in, fan_out) = match &layer.kind {
                LayerKind::Conv(c) => (c.in_channels * 9, c.out_channels * 9),
                LayerKind::Dense(d) => (d.inputs, d.outputs),
                _ => continue,
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
            let dist = Uniform::new_inclusive(-limit, limit);
            if let Some((w, _)) = layer.params_mut() {
                w.iter_mut().for_each(|v| *v = dist.sample(&mut rng));
            }
        }
        Ok(net)
    }
}

impl<T: Scalar> Network<T> {
    /// Builds the layer stack with all parameters zero, validating shapes.
    pub fn zeros(input: Shape, specs: &[LayerSpec]) -> Result<Self, NetworkError> {
        let mut shape = input;
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let (name, kind, out) = match spec {
                LayerSpec::Conv { name, in_channels, out_channels } => {
                    if *in_channels != shape.channels {
                        return Err(NetworkError::DegenerateShape { layer: name.clone(), shape });
                    }
                    let conv = Conv3x3 {
                        in_channels: *in_channels,
                        out_channels: *out_channels,
                        weight: vec![T::zero(); in_channels * out_channels * 9],
                        bias: vec![T::zero(); *out_channels],
                    };
                    (name.clone(), LayerKind::Conv(conv), Shape::new(*out_channels, shape.height, shape.width))
                }
                LayerSpec::MaxPool => (
                    format!("pool{i}"),
                    LayerKind::MaxPool,
                    Shape::new(shape.channels, shape.height / 2, shape.width / 2),
                ),
                LayerSpec::AdaptiveAvgPool { side } => (
                    format!("avgpool{i}"),
                    LayerKind::AdaptiveAvgPool(*side),
                    Shape::new(shape.channels, *side, *side),
                ),
                LayerSpec::Dense { name, inputs, outputs, relu } => {
                    if *inputs != shape.len() {
                        return Err(NetworkError::DegenerateShape { layer: name.clone(), shape });
                    }
                    let dense = Dense {
                        inputs: *inputs,
                        outputs: *outputs,
                        relu: *relu,
                        weight: vec![T::zero(); inputs * outputs],
                        bias: vec![T::zero(); *outputs],
                    };
                    (name.clone(), LayerKind::Dense(dense), Shape::flat(*outputs))
                }
            };
            if out.is_empty() {
                return Err(NetworkError::DegenerateShape { layer: name, shape });
            }
            layers.push(Layer { name, kind, frozen: false, input_shape: shape, output_shape: out });
            shape = out;
        }
        Ok(Self { input, layers })
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().map_or(self.input.len(), |l| l.output_shape.len())
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().filter_map(Layer::params).map(|(w, b)| w.len() + b.len()).sum()
    }

    /// Named parameter tensors (`<layer>.weight`, `<layer>.bias`) in layer order.
    pub fn named_params(&self) -> Vec<(String, &[T])> {
        self.layers
            .iter()
            .filter_map(|l| l.params().map(|(w, b)| (l, w, b)))
            .flat_map(|(l, w, b)| [(format!("{}.weight", l.name), w), (format!("{}.bias", l.name), b)])
            .collect()
    }

    pub fn set_param(&mut self, name: &str, values: &[T]) -> Result<(), NetworkError> {
        let (layer, which) = name.rsplit_once('.').ok_or_else(|| NetworkError::UnknownParam(name.into()))?;
        let target = self
            .layers
            .iter_mut()
            .find(|l| l.name == layer)
            .and_then(|l| l.params_mut())
            .and_then(|(w, b)| match which {
                "weight" => Some(w),
                "bias" => Some(b),
                _ => None,
            })
            .ok_or_else(|| NetworkError::UnknownParam(name.into()))?;
        if target.len() != values.len() {
            return Err(NetworkError::ParamSize { name: name.into(), expected: target.len(), actual: values.len() });
        }
        target.copy_from_slice(values);
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let conv_vec = |v: &[T]| v.iter().map(|x| U::from(*x).unwrap()).collect::<Vec<U>>();
        let layers = self
            .layers
            .iter()
            .map(|l| Layer {
                name: l.name.clone(),
                frozen: l.frozen,
                input_shape: l.input_shape,
                output_shape: l.output_shape,
                kind: match &l.kind {
                    LayerKind::Conv(c) => LayerKind::Conv(Conv3x3 {
                        in_channels: c.in_channels,
                        out_channels: c.out_channels,
                        weight: conv_vec(&c.weight),
                        bias: conv_vec(&c.bias),
                    }),
                    LayerKind::Dense(d) => LayerKind::Dense(Dense {
                        inputs: d.inputs,
                        outputs: d.outputs,
                        relu: d.relu,
                        weight: conv_vec(&d.weight),
                        bias: conv_vec(&d.bias),
                    }),
                    LayerKind::MaxPool => LayerKind::MaxPool,
                    LayerKind::AdaptiveAvgPool(s) => LayerKind::AdaptiveAvgPool(*s),
                },
            })
            .collect();
        Network { input: self.input, layers }
    }

    fn check_input(&self, input: &[T]) -> Result<(), NetworkError> {
        if input.len() != self.input.len() {
            return Err(NetworkError::InputSize { expected: self.input.len(), actual: input.len() });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[T]) -> Result<Vec<T>, NetworkError> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        for layer in &self.layers {
            x = match &layer.kind {
                LayerKind::Conv(c) => c.forward(&x, layer.input_shape),
                LayerKind::MaxPool => layers::max_pool2(&x, layer.input_shape).0,
                LayerKind::AdaptiveAvgPool(side) => layers::adaptive_avg_pool(&x, layer.input_shape, *side),
                LayerKind::Dense(d) => d.forward(&x),
            };
        }
        Ok(x)
    }

    pub fn forward_trace(&self, input: &[T]) -> Result<Trace<T>, NetworkError> {
        self.check_input(input)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pool_indices = Vec::with_capacity(self.layers.len());
        activations.push(input.to_vec());
        for layer in &self.layers {
            let x = activations.last().unwrap();
            let (y, idx) = match &layer.kind {
                LayerKind::Conv(c) => (c.forward(x, layer.input_shape), None),
                LayerKind::MaxPool => {
                    let (y, idx) = layers::max_pool2(x, layer.input_shape);
                    (y, Some(idx))
                }
                LayerKind::AdaptiveAvgPool(side) => (layers::adaptive_avg_pool(x, layer.input_shape, *side), None),
                LayerKind::Dense(d) => (d.forward(x), None),
            };
            activations.push(y);
            pool_indices.push(idx);
        }
        Ok(Trace { activations, pool_indices })
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| match (l.trainable(), l.params()) {
                    (true, Some((w, b))) => Some((vec![T::zero(); w.len()], vec![T::zero(); b.len()])),
                    _ => None,
                })
                .collect(),
        }
    }

    /// Backpropagates `grad_output` through the recorded trace, accumulating
    /// into `grads`. Frozen layers receive no gradient, and propagation stops
    /// below the lowest trainable layer.
    pub fn backward(&self, trace: &Trace<T>, grad_output: &[T], grads: &mut Gradients<T>) {
        let lowest_trainable = match self.layers.iter().position(Layer::trainable) {
            Some(i) => i,
            None => return,
        };
        let mut grad = grad_output.to_vec();
        for i in (lowest_trainable..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let input = &trace.activations[i];
            let output = &trace.activations[i + 1];
            let need_input_grad = i > lowest_trainable;
            let mut grad_in = if need_input_grad { Some(vec![T::zero(); input.len()]) } else { None };
            match &layer.kind {
                LayerKind::Conv(c) => {
                    let mut scratch = (Vec::new(), Vec::new());
                    let (gw, gb) = grads.layers[i].as_mut().unwrap_or(&mut scratch);
                    if gw.is_empty() {
                        gw.resize(c.weight.len(), T::zero());
                        gb.resize(c.bias.len(), T::zero());
                    }
                    c.backward(input, output, &grad, layer.input_shape, gw, gb, grad_in.as_deref_mut());
                }
                LayerKind::Dense(d) => {
                    let mut scratch = (Vec::new(), Vec::new());
                    let (gw, gb) = grads.layers[i].as_mut().unwrap_or(&mut scratch);
                    if gw.is_empty() {
                        gw.resize(d.weight.len(), T::zero());
                        gb.resize(d.bias.len(), T::zero());
                    }
                    d.backward(input, output, &grad, gw, gb, grad_in.as_deref_mut());
                }
                LayerKind::MaxPool => {
                    if let Some(gi) = grad_in.as_deref_mut() {
                        let idx = trace.pool_indices[i].as_ref().expect("max pool records indices");
                        for (&j, &g) in idx.iter().zip(&grad) {
                            gi[j] = gi[j] + g;
                        }
                    }
                }
                LayerKind::AdaptiveAvgPool(side) => {
                    if let Some(gi) = grad_in.as_deref_mut() {
                        layers::adaptive_avg_pool_backward(&grad, layer.input_shape, *side, gi);
                    }
                }
            }
            match grad_in {
                Some(g) => grad = g,
                None => break,
            }
        }
    }
}

/// Mean loss and mean parameter gradients over a batch.
pub fn batch_gradients<T: Scalar>(
    net: &Network<T>,
    inputs: &[Vec<T>],
    targets: &[loss::Target<T>],
    kind: loss::LossKind,
) -> Result<(T, Gradients<T>), NetworkError> {
    let mut grads = net.zero_gradients();
    let mut total = T::zero();
    for (x, target) in inputs.iter().zip(targets) {
        let trace = net.forward_trace(x)?;
        let (l, g) = loss::sample_loss(kind, trace.output(), target, inputs.len());
        total = total + l;
        net.backward(&trace, &g, &mut grads);
    }
    Ok((total, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_specs() -> Vec<LayerSpec> {
        vec![
            LayerSpec::Conv { name: "c1".into(), in_channels: 3, out_channels: 4 },
            LayerSpec::MaxPool,
            LayerSpec::AdaptiveAvgPool { side: 2 },
            LayerSpec::Dense { name: "fc".into(), inputs: 16, outputs: 5, relu: true },
            LayerSpec::Dense { name: "head".into(), inputs: 5, outputs: 2, relu: false },
        ]
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = Network::init(Shape::new(3, 8, 8), &small_specs(), 7).unwrap();
        let b = Network::init(Shape::new(3, 8, 8), &small_specs(), 7).unwrap();
        let c = Network::init(Shape::new(3, 8, 8), &small_specs(), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.param_count(), 3 * 4 * 9 + 4 + 16 * 5 + 5 + 5 * 2 + 2);
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let specs = vec![LayerSpec::Dense { name: "fc".into(), inputs: 10, outputs: 2, relu: false }];
        assert!(Network::<f32>::zeros(Shape::new(3, 2, 2), &specs).is_err());
        let pools = vec![LayerSpec::MaxPool, LayerSpec::MaxPool];
        assert!(Network::<f32>::zeros(Shape::new(1, 2, 2), &pools).is_err());
        let net = Network::init(Shape::new(3, 8, 8), &small_specs(), 1).unwrap();
        assert_eq!(net.forward(&[0.0; 10]), Err(NetworkError::InputSize { expected: 192, actual: 10 }));
    }

    #[test]
    fn frozen_layers_get_no_gradient() {
        let mut net = Network::init(Shape::new(3, 8, 8), &small_specs(), 3).unwrap();
        net.layers_mut()[0].frozen = true;
        let grads = net.zero_gradients();
        assert!(grads.layers[0].is_none());
        assert!(grads.layers[3].is_some());
    }

    #[test]
    fn named_params_round_trip() {
        let src = Network::init(Shape::new(3, 8, 8), &small_specs(), 3).unwrap();
        let mut dst = Network::<f32>::zeros(Shape::new(3, 8, 8), &small_specs()).unwrap();
        for (name, values) in src.named_params() {
            dst.set_param(&name, values).unwrap();
        }
        assert_eq!(src, dst);
        assert!(dst.set_param("nope.weight", &[]).is_err());
    }
    #[test]
    fn gradients_match_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let net = Network::init(Shape::new(3, 8, 8), &small_specs(), 5).unwrap().cast::<f64>();
        let inputs: Vec<Vec<f64>> = (0..3).map(|_| (0..192).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        for (kind, targets) in [
            (loss::LossKind::MeanAbsoluteError, (0..3).map(|i| loss::Target::Values(vec![0.3 * i as f64, -0.2])).collect::<Vec<_>>()),
            (loss::LossKind::CategoricalCrossEntropy, (0..3).map(|i| loss::Target::Class(i % 2)).collect()),
        ] {
            let (_, grads) = batch_gradients(&net, &inputs, &targets, kind).unwrap();
            let loss_with = |name: &str, k: usize, delta: f64| {
                let mut n = net.clone();
                let mut values = n.named_params().into_iter().find(|(p, _)| p == name).unwrap().1.to_vec();
                values[k] += delta;
                n.set_param(name, &values).unwrap();
                batch_gradients(&n, &inputs, &targets, kind).unwrap().0
            };
            for (li, layer) in net.layers().iter().enumerate() {
                let Some((gw, gb)) = &grads.layers[li] else { continue };
                for (suffix, g) in [("weight", gw), ("bias", gb)] {
                    let name = format!("{}.{suffix}", layer.name);
                    for k in 0..g.len() {
                        let numeric = (loss_with(&name, k, 1e-6) - loss_with(&name, k, -1e-6)) / 2e-6;
                        let err = (numeric - g[k]).abs() / numeric.abs().max(g[k].abs()).max(1e-6);
                        assert!(err < 1e-4, "{kind:?} {name}[{k}]: analytic {} numeric {numeric}", g[k]);
                    }
                }
            }
        }
    }
}
