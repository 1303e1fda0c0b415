//! Convolutional classifier: layer specs, parameters, forward and backward
//! passes, and the softmax cross-entropy loss.

mod layers;

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;

use layers::{ConvGeom, ConvGrads};

/// Filter counts of the three convolution blocks in the reference network.
pub const DEFAULT_FILTERS: [usize; 3] = [32, 64, 128];
pub const DEFAULT_HIDDEN_WIDTH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    /// Stride-1 cross-correlation with zero padding.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
    },
    Relu,
    MaxPool2x2,
    Flatten,
    Dense { inputs: usize, outputs: usize },
}

impl LayerSpec {
    /// Shapes of this layer's parameter tensors (weight then bias).
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![vec![out_channels, in_channels, kernel, kernel], vec![out_channels]],
            LayerSpec::Dense { inputs, outputs } => vec![vec![outputs, inputs], vec![outputs]],
            _ => Vec::new(),
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                kernel,
                ..
            } => in_channels * kernel * kernel,
            LayerSpec::Dense { inputs, .. } => inputs,
            _ => 0,
        }
    }

    /// Output activation shape for the given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |why: &str| Error::Config(format!("{self:?} cannot take input {input:?}: {why}"));
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                padding,
            } => {
                if input.len() != 3 || input[0] != in_channels {
                    return Err(bad("channel mismatch"));
                }
                if kernel == 0 || out_channels == 0 {
                    return Err(bad("empty kernel"));
                }
                let h = (input[1] + 2 * padding).checked_sub(kernel - 1);
                let w = (input[2] + 2 * padding).checked_sub(kernel - 1);
                match (h, w) {
                    (Some(h), Some(w)) if h > 0 && w > 0 => Ok(vec![out_channels, h, w]),
                    _ => Err(bad("kernel larger than padded input")),
                }
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::MaxPool2x2 => {
                if input.len() != 3 || !input[1].is_multiple_of(2) || !input[2].is_multiple_of(2) || input[1] == 0 {
                    return Err(bad("needs even spatial dims"));
                }
                Ok(vec![input[0], input[1] / 2, input[2] / 2])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Dense { inputs, outputs } => {
                if input.len() != 1 || input[0] != inputs {
                    return Err(bad("width mismatch"));
                }
                if outputs == 0 {
                    return Err(bad("zero outputs"));
                }
                Ok(vec![outputs])
            }
        }
    }
}

/// Layer stack of the reference network for a square RGB input.
pub fn reference_layers(
    input_side: usize,
    num_classes: usize,
    filters: [usize; 3],
    hidden_width: usize,
) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    let mut channels = 3;
    for f in filters {
        layers.push(LayerSpec::Conv2d {
            in_channels: channels,
            out_channels: f,
            kernel: 3,
            padding: 1,
        });
        layers.push(LayerSpec::Relu);
        layers.push(LayerSpec::MaxPool2x2);
        channels = f;
    }
    let side = input_side / 8;
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::Dense {
        inputs: side * side * channels,
        outputs: hidden_width,
    });
    layers.push(LayerSpec::Relu);
    layers.push(LayerSpec::Dense {
        inputs: hidden_width,
        outputs: num_classes,
    });
    layers
}

/// A network: its layer stack plus one weight and one bias tensor per
/// parametric layer, stored flat in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layers: Vec<LayerSpec>,
    params: Vec<Tensor>,
    input_shape: [usize; 3],
    num_classes: usize,
}

/// Builds the reference classifier: three conv(3x3, same padding) + ReLU +
/// 2x2 max-pool blocks with 32, 64 and 128 filters, then a ReLU hidden dense
/// layer and a dense output layer.
///
/// Hidden weights are He-normal, biases and output-layer weights zero.
pub fn build_model(
    input_side: usize,
    num_classes: usize,
    hidden_width: usize,
    rng: &mut RngState,
) -> Result<ModelParams> {
    build_model_with_filters(input_side, num_classes, DEFAULT_FILTERS, hidden_width, rng)
}

/// [`build_model`] with custom filter counts, for small test networks.
pub fn build_model_with_filters(
    input_side: usize,
    num_classes: usize,
    filters: [usize; 3],
    hidden_width: usize,
    rng: &mut RngState,
) -> Result<ModelParams> {
    if input_side == 0 || !input_side.is_multiple_of(8) {
        return Err(Error::Config(format!(
            "input side {input_side} must be a positive multiple of 8"
        )));
    }
    if num_classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {num_classes}")));
    }
    if hidden_width == 0 || filters.contains(&0) {
        return Err(Error::Config("layer widths must be positive".into()));
    }
    let layers = reference_layers(input_side, num_classes, filters, hidden_width);
    let mut model = ModelParams::init(layers, [3, input_side, input_side], num_classes, rng)?;
    // Logit layer starts at zero so the first Adam steps cannot overshoot.
    let out_w = model.params.len() - 2;
    model.params[out_w] = Tensor::zeros(model.params[out_w].shape());
    Ok(model)
}

impl ModelParams {
    /// Random He-normal init: weights ~ N(0, 2 / fan_in), biases zero.
    pub fn init(
        layers: Vec<LayerSpec>,
        input_shape: [usize; 3],
        num_classes: usize,
        rng: &mut RngState,
    ) -> Result<Self> {
        validate_layers(&layers, input_shape, num_classes)?;
        let mut params = Vec::new();
        for layer in &layers {
            let shapes = layer.param_shapes();
            if shapes.is_empty() {
                continue;
            }
            let std_dev = (2.0 / layer.fan_in() as f64).sqrt();
            params.push(Tensor::normal(&shapes[0], 0.0, std_dev, rng));
            params.push(Tensor::zeros(&shapes[1]));
        }
        Ok(Self {
            layers,
            params,
            input_shape,
            num_classes,
        })
    }

    /// Assembles a model from explicit parameters, checking every shape.
    pub fn from_parts(
        layers: Vec<LayerSpec>,
        input_shape: [usize; 3],
        num_classes: usize,
        params: Vec<Tensor>,
    ) -> Result<Self> {
        validate_layers(&layers, input_shape, num_classes)?;
        let expected: Vec<Vec<usize>> = layers.iter().flat_map(|l| l.param_shapes()).collect();
        if expected.len() != params.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                params.len()
            )));
        }
        for (want, got) in expected.iter().zip(&params) {
            if want.as_slice() != got.shape() {
                return Err(Error::shape(want, got.shape()));
            }
        }
        Ok(Self {
            layers,
            params,
            input_shape,
            num_classes,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Replaces all parameters; shapes must match the current ones.
    pub fn with_params(&self, params: Vec<Tensor>) -> Result<Self> {
        Self::from_parts(self.layers.clone(), self.input_shape, self.num_classes, params)
    }

    /// Width of the flattened feature vector fed to the first dense layer.
    pub fn flatten_width(&self) -> Option<usize> {
        let mut shape = self.input_shape.to_vec();
        for layer in &self.layers {
            shape = layer.output_shape(&shape).ok()?;
            if *layer == LayerSpec::Flatten {
                return Some(shape[0]);
            }
        }
        None
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.input_shape {
            return Err(Error::shape(&self.input_shape, x.shape()));
        }
        Ok(())
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.num_classes {
            return Err(Error::Label {
                label,
                num_classes: self.num_classes,
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ForwardTrace)> {
        self.check_input(x)?;
        let mut shape = self.input_shape.to_vec();
        let mut act = x.data().to_vec();
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut p = 0;
        for layer in &self.layers {
            let out_shape = layer.output_shape(&shape)?;
            let (next, cache) = match *layer {
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    padding,
                } => {
                    let g = ConvGeom {
                        in_channels,
                        out_channels,
                        kernel,
                        padding,
                        in_h: shape[1],
                        in_w: shape[2],
                    };
                    let (out, col) =
                        layers::conv_forward(&g, &act, self.params[p].data(), self.params[p + 1].data());
                    p += 2;
                    (out, Cache::Conv { geom: g, col })
                }
                LayerSpec::Relu => {
                    let out = act.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
                    (out, Cache::Relu { pre: act })
                }
                LayerSpec::MaxPool2x2 => {
                    let (out, argmax) = layers::maxpool_forward(shape[0], shape[1], shape[2], &act);
                    let input_len = act.len();
                    (out, Cache::Pool { input_len, argmax })
                }
                LayerSpec::Flatten => (act, Cache::Flatten),
                LayerSpec::Dense { inputs, .. } => {
                    let out = layers::dense_forward(
                        inputs,
                        self.params[p].data(),
                        self.params[p + 1].data(),
                        &act,
                    );
                    p += 2;
                    (out, Cache::Dense { input: act })
                }
            };
            caches.push(cache);
            act = next;
            shape = out_shape;
        }
        let logits = Tensor::new(&shape, act)?;
        let trace = ForwardTrace {
            layers: self.layers.clone(),
            input_shape: self.input_shape,
            caches,
            logits: logits.clone(),
        };
        Ok((logits, trace))
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x).map(|(l, _)| l)
    }

    /// Smallest index of the maximal logit.
    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        Ok(argmax(self.logits(x)?.data()))
    }

    /// Gradients of the cross-entropy loss for `label` with respect to every
    /// parameter tensor (same order as [`ModelParams::params`]) and the input.
    pub fn backward(&self, trace: &ForwardTrace, label: usize) -> Result<(Vec<Tensor>, Tensor)> {
        let (params, input) = self.backward_impl(trace, label, true, true)?;
        Ok((params.expect("requested"), input.expect("requested")))
    }

    /// Loss and input gradient, skipping parameter gradients.
    pub fn loss_and_input_grad(&self, x: &Tensor, label: usize) -> Result<(f64, Tensor)> {
        self.check_label(label)?;
        let (logits, trace) = self.forward(x)?;
        let loss = cross_entropy(&logits, label)?;
        let (_, input) = self.backward_impl(&trace, label, false, true)?;
        Ok((loss, input.expect("requested")))
    }

    /// Loss, logits and parameter gradients, skipping the input gradient.
    pub fn loss_and_param_grads(&self, x: &Tensor, label: usize) -> Result<(f64, Tensor, Vec<Tensor>)> {
        self.check_label(label)?;
        let (logits, trace) = self.forward(x)?;
        let loss = cross_entropy(&logits, label)?;
        let (params, _) = self.backward_impl(&trace, label, true, false)?;
        Ok((loss, logits, params.expect("requested")))
    }

    fn backward_impl(
        &self,
        trace: &ForwardTrace,
        label: usize,
        want_params: bool,
        want_input: bool,
    ) -> Result<(Option<Vec<Tensor>>, Option<Tensor>)> {
        if trace.layers != self.layers || trace.input_shape != self.input_shape {
            return Err(Error::Trace("layer stack or input shape differs".into()));
        }
        if trace.caches.len() != self.layers.len() {
            return Err(Error::Trace(format!(
                "trace has {} layers, model has {}",
                trace.caches.len(),
                self.layers.len()
            )));
        }
        self.check_label(label)?;

        // softmax - onehot
        let mut grad = softmax(trace.logits.data());
        grad[label] -= 1.0;

        let mut param_grads: Vec<Option<Tensor>> = vec![None; self.params.len()];
        let mut p = self.params.len();
        for (i, (layer, cache)) in self.layers.iter().zip(&trace.caches).enumerate().rev() {
            // The first layer's input gradient is only needed when the caller asks for it.
            let need_input = i > 0 || want_input;
            grad = match (layer, cache) {
                (LayerSpec::Conv2d { .. }, Cache::Conv { geom, col }) => {
                    p -= 2;
                    let ConvGrads {
                        weight,
                        bias,
                        input,
                    } = layers::conv_backward(
                        geom,
                        col,
                        self.params[p].data(),
                        &grad,
                        want_params,
                        need_input,
                    );
                    if want_params {
                        param_grads[p] = Some(Tensor::new(self.params[p].shape(), weight.unwrap())?);
                        param_grads[p + 1] = Some(Tensor::new(self.params[p + 1].shape(), bias.unwrap())?);
                    }
                    input.unwrap_or_default()
                }
                (LayerSpec::Relu, Cache::Relu { pre }) => grad
                    .iter()
                    .zip(pre)
                    .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
                    .collect(),
                (LayerSpec::MaxPool2x2, Cache::Pool { input_len, argmax }) => {
                    layers::maxpool_backward(*input_len, argmax, &grad)
                }
                (LayerSpec::Flatten, Cache::Flatten) => grad,
                (LayerSpec::Dense { inputs, .. }, Cache::Dense { input }) => {
                    p -= 2;
                    let (dw, dx) = layers::dense_backward(
                        *inputs,
                        self.params[p].data(),
                        input,
                        &grad,
                        want_params,
                        need_input,
                    );
                    if want_params {
                        param_grads[p] = Some(Tensor::new(self.params[p].shape(), dw.unwrap())?);
                        param_grads[p + 1] = Some(Tensor::new(self.params[p + 1].shape(), grad.clone())?);
                    }
                    dx.unwrap_or_default()
                }
                _ => return Err(Error::Trace(format!("cache kind does not match layer {i}"))),
            };
        }
        let params = want_params.then(|| param_grads.into_iter().map(|g| g.expect("filled")).collect());
        let input = if want_input {
            Some(Tensor::new(&self.input_shape, grad)?)
        } else {
            None
        };
        Ok((params, input))
    }
}

fn validate_layers(layers: &[LayerSpec], input_shape: [usize; 3], num_classes: usize) -> Result<()> {
    if input_shape.contains(&0) {
        return Err(Error::Config(format!("bad input shape {input_shape:?}")));
    }
    let mut shape = input_shape.to_vec();
    for layer in layers {
        shape = layer.output_shape(&shape)?;
    }
    if shape != [num_classes] {
        return Err(Error::Config(format!(
            "network output shape {shape:?} does not match {num_classes} classes"
        )));
    }
    Ok(())
}

/// Cached activations from one forward pass, consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    layers: Vec<LayerSpec>,
    input_shape: [usize; 3],
    caches: Vec<Cache>,
    logits: Tensor,
}

impl ForwardTrace {
    pub fn layer_count(&self) -> usize {
        self.caches.len()
    }

    pub fn logits(&self) -> &Tensor {
        &self.logits
    }
}

#[derive(Debug, Clone)]
enum Cache {
    Conv { geom: ConvGeom, col: Vec<f64> },
    Relu { pre: Vec<f64> },
    Pool { input_len: usize, argmax: Vec<usize> },
    Flatten,
    Dense { input: Vec<f64> },
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `-log softmax(logits)[label]` in log-sum-exp form.
pub fn cross_entropy(logits: &Tensor, label: usize) -> Result<f64> {
    let z = logits.data();
    if label >= z.len() {
        return Err(Error::Label {
            label,
            num_classes: z.len(),
        });
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    Ok((lse - z[label]).max(0.0))
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
