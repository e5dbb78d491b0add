//! Network definitions, parameter storage and inference.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::layers::{self, conv_out_extent, pool_out_extent, LayerGradients};
use crate::rng::Rng;
use crate::stats::{describe, DescriptiveStats};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d {
        filters: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        /// Declared input channels; checked against the incoming shape when present.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        in_channels: Option<usize>,
    },
    Relu,
    Maxpool {
        window: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        units: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        in_features: Option<usize>,
    },
    Dropout {
        rate: f32,
    },
    Softmax,
}

fn one() -> usize {
    1
}

impl LayerKind {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerKind::Conv2d { .. } | LayerKind::Dense { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::Relu => "relu",
            LayerKind::Maxpool { .. } => "maxpool",
            LayerKind::Flatten => "flatten",
            LayerKind::Dense { .. } => "dense",
            LayerKind::Dropout { .. } => "dropout",
            LayerKind::Softmax => "softmax",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn new(name: &str, kind: LayerKind) -> Self {
        Self { name: name.to_string(), kind }
    }
}

/// Input shape `[channels, height, width]` plus the ordered layer list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    /// Per-sample output shape of every layer, validating composition.
    pub fn output_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let comp = |msg: String| Error::Composition(msg);
        if self.input.contains(&0) {
            return Err(comp(format!("input extents must be positive, got {:?}", self.input)));
        }
        if self.layers.is_empty() {
            return Err(comp("network has no layers".into()));
        }
        let mut names = BTreeSet::new();
        let mut shape: Vec<usize> = self.input.to_vec();
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.name.is_empty() {
                return Err(comp(format!("layer {} has an empty name", i)));
            }
            if !names.insert(layer.name.as_str()) {
                return Err(comp(format!("duplicate layer name `{}`", layer.name)));
            }
            let at = |msg: String| comp(format!("layer `{}`: {}", layer.name, msg));
            shape = match &layer.kind {
                LayerKind::Conv2d { filters, kernel, stride, padding, in_channels } => {
                    let [c, h, w] = spatial(&shape).ok_or_else(|| at(format!("conv2d needs [C,H,W] input, got {:?}", shape)))?;
                    if *filters == 0 || *kernel == 0 || *stride == 0 {
                        return Err(at("filters, kernel and stride must be positive".into()));
                    }
                    if let Some(declared) = in_channels {
                        if *declared != c {
                            return Err(at(format!("declares {} input channels but receives {}", declared, c)));
                        }
                    }
                    let oh = conv_out_extent(h, *kernel, *stride, *padding);
                    let ow = conv_out_extent(w, *kernel, *stride, *padding);
                    match (oh, ow) {
                        (Some(oh), Some(ow)) => vec![*filters, oh, ow],
                        _ => return Err(at(format!("output extent for {}x{} input is not a positive integer", h, w))),
                    }
                }
                LayerKind::Maxpool { window, stride } => {
                    let [c, h, w] = spatial(&shape).ok_or_else(|| at(format!("maxpool needs [C,H,W] input, got {:?}", shape)))?;
                    match (pool_out_extent(h, *window, *stride), pool_out_extent(w, *window, *stride)) {
                        (Some(oh), Some(ow)) => vec![c, oh, ow],
                        _ => return Err(at(format!("window {} does not fit {}x{} input", window, h, w))),
                    }
                }
                LayerKind::Flatten => vec![shape.iter().product()],
                LayerKind::Dense { units, in_features } => {
                    if shape.len() != 1 {
                        return Err(at(format!("dense needs flat input, got {:?}", shape)));
                    }
                    if *units == 0 {
                        return Err(at("units must be positive".into()));
                    }
                    if let Some(declared) = in_features {
                        if *declared != shape[0] {
                            return Err(at(format!("declares {} inputs but receives {}", declared, shape[0])));
                        }
                    }
                    vec![*units]
                }
                LayerKind::Relu => shape,
                LayerKind::Dropout { rate } => {
                    if !(0.0..1.0).contains(rate) {
                        return Err(at(format!("dropout rate {} outside [0, 1)", rate)));
                    }
                    shape
                }
                LayerKind::Softmax => {
                    if shape.len() != 1 || i + 1 != self.layers.len() {
                        return Err(at("softmax must be the last layer and follow a flat layer".into()));
                    }
                    shape
                }
            };
            shapes.push(shape.clone());
        }
        if shape.len() != 1 {
            return Err(comp(format!("network output must be flat, got {:?}", shape)));
        }
        Ok(shapes)
    }

    /// Weight and bias shapes for every parameterized layer, in layer order.
    pub fn param_shapes(&self) -> Result<Vec<(usize, Vec<usize>, Vec<usize>)>> {
        let shapes = self.output_shapes()?;
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let input: &[usize] = if i == 0 { &self.input } else { &shapes[i - 1] };
            match layer.kind {
                LayerKind::Conv2d { filters, kernel, .. } => {
                    out.push((i, vec![filters, input[0], kernel, kernel], vec![filters]))
                }
                LayerKind::Dense { units, .. } => out.push((i, vec![units, input[0]], vec![units])),
                _ => {}
            }
        }
        Ok(out)
    }

    pub fn parameter_count(&self) -> Result<usize> {
        Ok(self
            .param_shapes()?
            .iter()
            .map(|(_, w, b)| w.iter().product::<usize>() + b.iter().product::<usize>())
            .sum())
    }

    pub fn class_count(&self) -> Result<usize> {
        Ok(self.output_shapes()?.last().map(|s| s[0]).unwrap_or(0))
    }
}

fn spatial(shape: &[usize]) -> Option<[usize; 3]> {
    match shape {
        [c, h, w] => Some([*c, *h, *w]),
        _ => None,
    }
}

/// The reference desk-scale network for `size × size` single-channel images.
pub fn desk_architecture(size: usize, classes: usize) -> Architecture {
    use LayerKind::*;
    Architecture {
        input: [1, size, size],
        layers: vec![
            LayerSpec::new("conv_1", Conv2d { filters: 8, kernel: 3, stride: 1, padding: 1, in_channels: None }),
            LayerSpec::new("relu_1", Relu),
            LayerSpec::new("pool_1", Maxpool { window: 2, stride: 2 }),
            LayerSpec::new("conv_2", Conv2d { filters: 16, kernel: 3, stride: 1, padding: 1, in_channels: None }),
            LayerSpec::new("relu_2", Relu),
            LayerSpec::new("pool_2", Maxpool { window: 2, stride: 2 }),
            LayerSpec::new("flatten", Flatten),
            LayerSpec::new("dense_1", Dense { units: 64, in_features: None }),
            LayerSpec::new("relu_3", Relu),
            LayerSpec::new("dropout_1", Dropout { rate: 0.5 }),
            LayerSpec::new("dense_2", Dense { units: classes, in_features: None }),
            LayerSpec::new("softmax", Softmax),
        ],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Tensor,
    pub biases: Tensor,
}

/// Weight and bias statistics for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStats {
    pub weights: DescriptiveStats,
    pub biases: DescriptiveStats,
}

/// Forward state retained for the backward pass.
#[derive(Debug, Clone)]
pub enum LayerCache {
    Conv2d { input: Tensor },
    Dense { input: Tensor },
    Relu { input: Tensor },
    Maxpool { input_shape: Vec<usize>, argmax: Vec<usize> },
    Flatten { input_shape: Vec<usize> },
    Dropout { mask: Vec<f32> },
    Passthrough,
}

/// An architecture with one parameter slot per layer (`Some` exactly for
/// conv2d and dense layers).
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    arch: Architecture,
    shapes: Vec<Vec<usize>>,
    params: Vec<Option<LayerParams>>,
}

impl Network {
    /// He-uniform weights (bound `sqrt(6 / fan_in)`) drawn in layer order,
    /// row-major, from `seed`; zero biases.
    pub fn build(arch: Architecture, seed: u64) -> Result<Self> {
        let shapes = arch.output_shapes()?;
        let mut rng = Rng::from_seed(seed);
        let mut params: Vec<Option<LayerParams>> = vec![None; arch.layers.len()];
        for (i, wshape, bshape) in arch.param_shapes()? {
            let fan_in: usize = wshape[1..].iter().product();
            let bound = libm::sqrt(6.0 / fan_in as f64);
            let n: usize = wshape.iter().product();
            let w = (0..n).map(|_| rng.uniform(-bound, bound) as f32).collect();
            params[i] = Some(LayerParams {
                weights: Tensor::new(wshape, w)?,
                biases: Tensor::zeros(&bshape),
            });
        }
        Ok(Self { arch, shapes, params })
    }

    /// Assembles a network from explicit parameters, one entry per
    /// parameterized layer in layer order.
    pub fn from_parts(arch: Architecture, params: Vec<LayerParams>) -> Result<Self> {
        let shapes = arch.output_shapes()?;
        let expected = arch.param_shapes()?;
        if expected.len() != params.len() {
            return Err(shape_err!(
                "architecture has {} parameterized layers, got {} parameter sets",
                expected.len(),
                params.len()
            ));
        }
        let mut slots: Vec<Option<LayerParams>> = vec![None; arch.layers.len()];
        for ((i, wshape, bshape), p) in expected.into_iter().zip(params) {
            if p.weights.shape() != wshape.as_slice() || p.biases.shape() != bshape.as_slice() {
                return Err(shape_err!(
                    "layer `{}` expects weights {:?} and biases {:?}, got {:?} and {:?}",
                    arch.layers[i].name,
                    wshape,
                    bshape,
                    p.weights.shape(),
                    p.biases.shape()
                ));
            }
            slots[i] = Some(p);
        }
        Ok(Self { arch, shapes, params: slots })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.arch.layers
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.arch.input
    }

    pub fn class_count(&self) -> usize {
        self.shapes.last().map(|s| s[0]).unwrap_or(0)
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.arch.layers.iter().position(|l| l.name == name)
    }

    pub fn params(&self, name: &str) -> Result<&LayerParams> {
        let i = self.layer_index(name).ok_or_else(|| Error::UnknownLayer(name.into()))?;
        self.params[i].as_ref().ok_or_else(|| Error::NoParameters(name.into()))
    }

    pub fn params_mut(&mut self, name: &str) -> Result<&mut LayerParams> {
        let i = self.layer_index(name).ok_or_else(|| Error::UnknownLayer(name.into()))?;
        self.params[i].as_mut().ok_or_else(|| Error::NoParameters(name.into()))
    }

    /// Parameterized layers in order.
    pub fn param_layers(&self) -> impl Iterator<Item = (&LayerSpec, &LayerParams)> {
        self.arch.layers.iter().zip(&self.params).filter_map(|(l, p)| p.as_ref().map(|p| (l, p)))
    }

    pub(crate) fn param_slots_mut(&mut self) -> impl Iterator<Item = &mut LayerParams> {
        self.params.iter_mut().flatten()
    }

    pub fn parameter_count(&self) -> usize {
        self.param_layers().map(|(_, p)| p.weights.len() + p.biases.len()).sum()
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let [_, c, h, w] = batch.dims4()?;
        if [c, h, w] != self.arch.input {
            return Err(shape_err!("batch images are {:?}, network expects {:?}", [c, h, w], self.arch.input));
        }
        Ok(())
    }

    /// Evaluation-mode forward pass returning pre-softmax logits `[N, classes]`.
    /// Dropout is inactive and a trailing softmax layer is not applied.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_batch(batch)?;
        let mut x = batch.clone();
        for (layer, params) in self.arch.layers.iter().zip(&self.params) {
            x = match &layer.kind {
                LayerKind::Conv2d { stride, padding, .. } => {
                    let p = params.as_ref().expect("validated");
                    layers::conv2d_forward(&x, &p.weights, &p.biases, *stride, *padding)?
                }
                LayerKind::Dense { .. } => {
                    let p = params.as_ref().expect("validated");
                    layers::dense_forward(&x, &p.weights, &p.biases)?
                }
                LayerKind::Relu => layers::relu(&x),
                LayerKind::Maxpool { window, stride } => layers::maxpool_forward(&x, *window, *stride)?.0,
                LayerKind::Flatten => flatten(x)?,
                LayerKind::Dropout { .. } | LayerKind::Softmax => x,
            };
        }
        Ok(x)
    }

    /// Class probabilities (softmax of [`Network::predict`]).
    pub fn predict_proba(&self, batch: &Tensor) -> Result<Tensor> {
        layers::softmax(&self.predict(batch)?)
    }

    /// Training-mode forward pass: dropout draws from `rng`, and each layer's
    /// cache is kept for [`Network::backward`].
    pub fn forward_train(&self, batch: &Tensor, rng: &mut Rng) -> Result<(Tensor, Vec<LayerCache>)> {
        self.check_batch(batch)?;
        let mut caches = Vec::with_capacity(self.arch.layers.len());
        let mut x = batch.clone();
        for (layer, params) in self.arch.layers.iter().zip(&self.params) {
            let (y, cache) = match &layer.kind {
                LayerKind::Conv2d { stride, padding, .. } => {
                    let p = params.as_ref().expect("validated");
                    let y = layers::conv2d_forward(&x, &p.weights, &p.biases, *stride, *padding)?;
                    (y, LayerCache::Conv2d { input: x })
                }
                LayerKind::Dense { .. } => {
                    let p = params.as_ref().expect("validated");
                    let y = layers::dense_forward(&x, &p.weights, &p.biases)?;
                    (y, LayerCache::Dense { input: x })
                }
                LayerKind::Relu => (layers::relu(&x), LayerCache::Relu { input: x }),
                LayerKind::Maxpool { window, stride } => {
                    let (y, argmax) = layers::maxpool_forward(&x, *window, *stride)?;
                    (y, LayerCache::Maxpool { input_shape: x.shape().to_vec(), argmax })
                }
                LayerKind::Flatten => {
                    let input_shape = x.shape().to_vec();
                    (flatten(x)?, LayerCache::Flatten { input_shape })
                }
                LayerKind::Dropout { rate } => {
                    let (y, mask) = layers::dropout_train(&x, *rate, rng)?;
                    (y, LayerCache::Dropout { mask })
                }
                LayerKind::Softmax => (x, LayerCache::Passthrough),
            };
            caches.push(cache);
            x = y;
        }
        Ok((x, caches))
    }

    /// Backward pass of one layer given its forward cache.
    pub fn layer_backward(&self, index: usize, cache: &LayerCache, upstream: &Tensor) -> Result<LayerGradients> {
        let layer = self
            .arch
            .layers
            .get(index)
            .ok_or_else(|| invalid!("layer index {} out of range", index))?;
        let mismatch = || Error::CacheMismatch(layer.name.clone());
        let passthrough = |input: Tensor| LayerGradients { params: None, input };
        match (&layer.kind, cache) {
            (LayerKind::Conv2d { stride, padding, .. }, LayerCache::Conv2d { input }) => {
                let p = self.params[index].as_ref().expect("validated");
                layers::conv2d_backward(input, &p.weights, *stride, *padding, upstream)
            }
            (LayerKind::Dense { .. }, LayerCache::Dense { input }) => {
                let p = self.params[index].as_ref().expect("validated");
                layers::dense_backward(input, &p.weights, upstream)
            }
            (LayerKind::Relu, LayerCache::Relu { input }) => Ok(passthrough(layers::relu_backward(input, upstream)?)),
            (LayerKind::Maxpool { .. }, LayerCache::Maxpool { input_shape, argmax }) => {
                Ok(passthrough(layers::maxpool_backward(input_shape, argmax, upstream)?))
            }
            (LayerKind::Flatten, LayerCache::Flatten { input_shape }) => {
                Ok(passthrough(upstream.clone().reshape(input_shape)?))
            }
            (LayerKind::Dropout { .. }, LayerCache::Dropout { mask }) => {
                Ok(passthrough(layers::dropout_backward(mask, upstream)?))
            }
            (LayerKind::Softmax, LayerCache::Passthrough) => Ok(passthrough(upstream.clone())),
            _ => Err(mismatch()),
        }
    }

    /// Full backward pass from the gradient of the loss with respect to the
    /// logits. Returns `(weights, biases)` gradients for each parameterized
    /// layer, in layer order.
    pub fn backward(&self, caches: &[LayerCache], logit_grad: &Tensor) -> Result<Vec<(Tensor, Tensor)>> {
        if caches.len() != self.arch.layers.len() {
            return Err(invalid!("{} caches for {} layers", caches.len(), self.arch.layers.len()));
        }
        let mut grads = Vec::new();
        let mut upstream = logit_grad.clone();
        for i in (0..caches.len()).rev() {
            let g = self.layer_backward(i, &caches[i], &upstream)?;
            if let Some(p) = g.params {
                grads.push(p);
            }
            upstream = g.input;
        }
        grads.reverse();
        Ok(grads)
    }

    /// Descriptive statistics of one layer's weights and biases, computed
    /// separately.
    pub fn layer_param_stats(&self, name: &str) -> Result<LayerStats> {
        let p = self.params(name)?;
        Ok(LayerStats {
            weights: describe_f32(p.weights.data())?,
            biases: describe_f32(p.biases.data())?,
        })
    }
}

pub(crate) fn describe_f32(values: &[f32]) -> Result<DescriptiveStats> {
    let v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
    describe(&v)
}

fn flatten(x: Tensor) -> Result<Tensor> {
    let n = x.shape()[0];
    let d = x.len() / n;
    x.reshape(&[n, d])
}
