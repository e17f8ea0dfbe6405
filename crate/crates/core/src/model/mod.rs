//! A small from-scratch CNN with exact backpropagation and Adam.
//!
//! The default architecture is `SmallCNN`:
//! Conv(16)-ReLU-Pool-Conv(32)-ReLU-Pool-Flatten-Dense(classes)-Softmax.
//! Images enter the model in raw [0, 255] intensities and are scaled by
//! 1/255 at the model boundary; everything else in the toolkit works in
//! raw intensity space.
//!
//! All arithmetic is 64-bit with frozen summation orders, so training is
//! bit-reproducible: identical config and data give identical parameters.

pub mod checkpoint;
pub mod layers;
pub mod train;

use rayon::prelude::*;

use crate::dataset::{Dataset, Label};
use crate::error::{Error, Result};
use crate::image::{Image, CHANNELS};
use crate::prng::{Purpose, SeedPath};

pub use train::{train, Augmentation, EpochRecord, TrainConfig, TrainingLog};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// One layer of the network. Convolutions are fixed at kernel 3, stride 1,
/// pad 1; pooling at 2x2 stride 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv2d { out_channels: usize },
    Relu,
    MaxPool2,
    Flatten,
    Dense { out_dim: usize },
    Softmax,
}

/// Activation shape between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Spatial { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Spatial { c, h, w } => c * h * w,
            Shape::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Network architecture: input image size plus the layer sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub input_height: usize,
    pub input_width: usize,
    pub layers: Vec<LayerKind>,
}

impl ModelSpec {
    /// The default desk-scale architecture.
    pub fn small_cnn(input_height: usize, input_width: usize, num_classes: usize) -> ModelSpec {
        ModelSpec {
            input_height,
            input_width,
            layers: vec![
                LayerKind::Conv2d { out_channels: 16 },
                LayerKind::Relu,
                LayerKind::MaxPool2,
                LayerKind::Conv2d { out_channels: 32 },
                LayerKind::Relu,
                LayerKind::MaxPool2,
                LayerKind::Flatten,
                LayerKind::Dense { out_dim: num_classes },
                LayerKind::Softmax,
            ],
        }
    }

    /// Type-check the layer sequence and compute the activation shape at
    /// every layer boundary (`result[0]` is the input shape).
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        if self.input_height == 0 || self.input_width == 0 {
            return Err(Error::ModelSpec("input dimensions must be positive".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::ModelSpec("empty layer list".into()));
        }
        let mut shapes = vec![Shape::Spatial {
            c: CHANNELS,
            h: self.input_height,
            w: self.input_width,
        }];
        for (idx, layer) in self.layers.iter().enumerate() {
            let prev = *shapes.last().unwrap();
            let terminal = idx == self.layers.len() - 1;
            if matches!(layer, LayerKind::Softmax) != terminal {
                return Err(Error::ModelSpec(
                    "softmax must be the terminal layer and nothing else may be".into(),
                ));
            }
            let next = match (*layer, prev) {
                (LayerKind::Conv2d { out_channels }, Shape::Spatial { h, w, .. }) => {
                    if out_channels == 0 {
                        return Err(Error::ModelSpec(format!("layer {idx}: zero conv channels")));
                    }
                    Shape::Spatial { c: out_channels, h, w }
                }
                (LayerKind::Relu, shape) => shape,
                (LayerKind::MaxPool2, Shape::Spatial { c, h, w }) => {
                    if h < 2 || w < 2 {
                        return Err(Error::ModelSpec(format!(
                            "layer {idx}: cannot pool {h}x{w}"
                        )));
                    }
                    Shape::Spatial { c, h: h / 2, w: w / 2 }
                }
                (LayerKind::Flatten, Shape::Spatial { c, h, w }) => Shape::Flat(c * h * w),
                (LayerKind::Dense { out_dim }, Shape::Flat(_)) => {
                    if out_dim == 0 {
                        return Err(Error::ModelSpec(format!("layer {idx}: zero dense width")));
                    }
                    Shape::Flat(out_dim)
                }
                (LayerKind::Softmax, Shape::Flat(n)) => Shape::Flat(n),
                (kind, shape) => {
                    return Err(Error::ModelSpec(format!(
                        "layer {idx}: {kind:?} cannot follow {shape:?}"
                    )));
                }
            };
            shapes.push(next);
        }
        Ok(shapes)
    }
}

/// Weight and bias tensors of one layer; empty for parameterless layers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerParams {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerParams {
    fn zeros_like(other: &LayerParams) -> LayerParams {
        LayerParams {
            weights: vec![0.0; other.weights.len()],
            bias: vec![0.0; other.bias.len()],
        }
    }
}

/// Per-layer parameter gradients, same layout as the parameters.
pub type Gradients = Vec<LayerParams>;

/// Adam first/second moment estimates plus the shared step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<LayerParams>,
    pub v: Vec<LayerParams>,
    pub t: u64,
}

/// Statistics of one forward/backward pass over a batch.
pub struct BatchStats {
    pub gradients: Gradients,
    pub mean_loss: f64,
    pub correct: usize,
}

/// Anything that can score an image into class probabilities. Attacks that
/// only need forward access (and test doubles) use this instead of the
/// full model.
pub trait Classifier: Sync {
    fn num_classes(&self) -> usize;
    fn predict_probs(&self, image: &Image) -> Vec<f64>;
}

/// The trainable network: spec, per-layer parameters, optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    shapes: Vec<Shape>,
    params: Vec<LayerParams>,
    adam: AdamState,
}

impl Model {
    /// He-uniform initialization (bound sqrt(6/fan_in)) for conv and dense
    /// weights, zero biases, deterministic from the seed. Each layer draws
    /// from its own derived stream.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Model> {
        let shapes = spec.shapes()?;
        let mut params = Vec::with_capacity(spec.layers.len());
        for (idx, layer) in spec.layers.iter().enumerate() {
            let mut rng = SeedPath::new(seed, 0, idx as u64, Purpose::ModelInit).derive();
            let p = match (*layer, shapes[idx]) {
                (LayerKind::Conv2d { out_channels }, Shape::Spatial { c, .. }) => {
                    let fan_in = c * layers::KERNEL * layers::KERNEL;
                    let bound = (6.0 / fan_in as f64).sqrt();
                    let weights = (0..out_channels * fan_in)
                        .map(|_| rng.uniform_in(-bound, bound))
                        .collect();
                    LayerParams {
                        weights,
                        bias: vec![0.0; out_channels],
                    }
                }
                (LayerKind::Dense { out_dim }, Shape::Flat(in_dim)) => {
                    let bound = (6.0 / in_dim as f64).sqrt();
                    let weights = (0..out_dim * in_dim)
                        .map(|_| rng.uniform_in(-bound, bound))
                        .collect();
                    LayerParams {
                        weights,
                        bias: vec![0.0; out_dim],
                    }
                }
                _ => LayerParams::default(),
            };
            params.push(p);
        }
        let adam = AdamState {
            m: params.iter().map(LayerParams::zeros_like).collect(),
            v: params.iter().map(LayerParams::zeros_like).collect(),
            t: 0,
        };
        Ok(Model {
            spec,
            shapes,
            params,
            adam,
        })
    }

    /// Rebuild from spec + parameters (checkpoint loading). Optimizer
    /// state starts fresh.
    pub(crate) fn from_parts(spec: ModelSpec, params: Vec<LayerParams>) -> Result<Model> {
        let shapes = spec.shapes()?;
        let adam = AdamState {
            m: params.iter().map(LayerParams::zeros_like).collect(),
            v: params.iter().map(LayerParams::zeros_like).collect(),
            t: 0,
        };
        Ok(Model {
            spec,
            shapes,
            params,
            adam,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn params(&self) -> &[LayerParams] {
        &self.params
    }

    /// Mutable parameter access (finite-difference tests poke values).
    pub fn params_mut(&mut self) -> &mut [LayerParams] {
        &mut self.params
    }

    pub fn adam_t(&self) -> u64 {
        self.adam.t
    }

    pub fn num_classes(&self) -> usize {
        self.shapes.last().unwrap().len()
    }

    fn check_input(&self, image: &Image) -> Result<()> {
        if image.height() != self.spec.input_height || image.width() != self.spec.input_width {
            return Err(Error::InvalidArgument(format!(
                "input {}x{} does not match model input {}x{}",
                image.height(),
                image.width(),
                self.spec.input_height,
                self.spec.input_width
            )));
        }
        Ok(())
    }

    /// Run the network on one image. Returns the activations at every
    /// layer boundary: `acts[0]` is the scaled input, `acts[i+1]` the
    /// output of layer `i`, so the last entry is the probability row and
    /// the one before it the logits.
    fn forward_sample(&self, image: &Image) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.spec.layers.len() + 1);
        acts.push(image.data().iter().map(|&v| v / 255.0).collect::<Vec<_>>());
        for (idx, layer) in self.spec.layers.iter().enumerate() {
            let input = acts.last().unwrap();
            let out = match (*layer, self.shapes[idx]) {
                (LayerKind::Conv2d { out_channels }, Shape::Spatial { c, h, w }) => {
                    layers::conv2d_forward(
                        input,
                        c,
                        h,
                        w,
                        &self.params[idx].weights,
                        &self.params[idx].bias,
                        out_channels,
                    )
                }
                (LayerKind::Relu, _) => layers::relu_forward(input),
                (LayerKind::MaxPool2, Shape::Spatial { c, h, w }) => {
                    layers::maxpool2_forward(input, c, h, w)
                }
                (LayerKind::Flatten, _) => input.clone(),
                (LayerKind::Dense { out_dim }, _) => layers::dense_forward(
                    input,
                    &self.params[idx].weights,
                    &self.params[idx].bias,
                    out_dim,
                ),
                (LayerKind::Softmax, _) => layers::softmax(input),
                _ => unreachable!("spec validated at construction"),
            };
            acts.push(out);
        }
        acts
    }

    /// Class probabilities for a batch; each row sums to 1.
    pub fn forward_batch(&self, images: &[Image]) -> Result<Vec<Vec<f64>>> {
        for image in images {
            self.check_input(image)?;
        }
        Ok(images
            .par_iter()
            .map(|image| self.forward_sample(image).pop().unwrap())
            .collect())
    }

    /// Cross-entropy of one already-run sample.
    fn sample_loss(acts: &[Vec<f64>], label: Label) -> f64 {
        let logits = &acts[acts.len() - 2];
        layers::log_sum_exp(logits) - logits[label.0]
    }

    /// Backpropagate one sample. Returns per-layer gradients, the gradient
    /// with respect to the scaled input, and the sample loss.
    fn backward_sample(&self, acts: &[Vec<f64>], label: Label) -> (Gradients, Vec<f64>, f64) {
        let n_layers = self.spec.layers.len();
        let mut grads: Gradients = self.params.iter().map(LayerParams::zeros_like).collect();
        let loss = Self::sample_loss(acts, label);

        // Gradient of the loss with respect to the logits: p - onehot.
        let probs = &acts[n_layers];
        let mut delta: Vec<f64> = probs.clone();
        delta[label.0] -= 1.0;

        // Walk back over everything below the softmax.
        for idx in (0..n_layers - 1).rev() {
            let input = &acts[idx];
            delta = match (self.spec.layers[idx], self.shapes[idx]) {
                (LayerKind::Conv2d { out_channels }, Shape::Spatial { c, h, w }) => {
                    let (dw, db, din) = layers::conv2d_backward(
                        input,
                        c,
                        h,
                        w,
                        &self.params[idx].weights,
                        out_channels,
                        &delta,
                    );
                    grads[idx] = LayerParams {
                        weights: dw,
                        bias: db,
                    };
                    din
                }
                (LayerKind::Relu, _) => layers::relu_backward(input, &delta),
                (LayerKind::MaxPool2, Shape::Spatial { c, h, w }) => {
                    layers::maxpool2_backward(input, c, h, w, &delta)
                }
                (LayerKind::Flatten, _) => delta,
                (LayerKind::Dense { out_dim }, _) => {
                    let (dw, db, din) =
                        layers::dense_backward(input, &self.params[idx].weights, out_dim, &delta);
                    grads[idx] = LayerParams {
                        weights: dw,
                        bias: db,
                    };
                    din
                }
                _ => unreachable!("spec validated at construction"),
            };
        }
        (grads, delta, loss)
    }

    /// Forward + backward over a batch. Gradients and loss are means over
    /// the batch; per-sample work fans out across the rayon pool and is
    /// reduced in sample order, so results are worker-count independent.
    pub fn backward_batch(&self, images: &[Image], labels: &[Label]) -> Result<BatchStats> {
        if images.is_empty() || images.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "batch of {} images vs {} labels",
                images.len(),
                labels.len()
            )));
        }
        for label in labels {
            if label.0 >= self.num_classes() {
                return Err(Error::InvalidArgument(format!(
                    "label {} out of range for {} classes",
                    label.0,
                    self.num_classes()
                )));
            }
        }
        for image in images {
            self.check_input(image)?;
        }
        let per_sample: Vec<(Gradients, f64, bool)> = images
            .par_iter()
            .zip(labels.par_iter())
            .map(|(image, &label)| {
                let acts = self.forward_sample(image);
                let correct = argmax_lowest(acts.last().unwrap()) == label.0;
                let (grads, _, loss) = self.backward_sample(&acts, label);
                (grads, loss, correct)
            })
            .collect();

        let scale = 1.0 / images.len() as f64;
        let mut total: Gradients = self.params.iter().map(LayerParams::zeros_like).collect();
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (grads, loss, ok) in &per_sample {
            for (acc, g) in total.iter_mut().zip(grads) {
                for (a, b) in acc.weights.iter_mut().zip(&g.weights) {
                    *a += b;
                }
                for (a, b) in acc.bias.iter_mut().zip(&g.bias) {
                    *a += b;
                }
            }
            loss_sum += loss;
            correct += *ok as usize;
        }
        for layer in total.iter_mut() {
            for v in layer.weights.iter_mut() {
                *v *= scale;
            }
            for v in layer.bias.iter_mut() {
                *v *= scale;
            }
        }
        Ok(BatchStats {
            gradients: total,
            mean_loss: loss_sum * scale,
            correct,
        })
    }

    /// Mean loss of a batch without computing gradients (finite-difference
    /// oracles drive this).
    pub fn batch_loss(&self, images: &[Image], labels: &[Label]) -> Result<f64> {
        for image in images {
            self.check_input(image)?;
        }
        let total: f64 = images
            .iter()
            .zip(labels)
            .map(|(image, &label)| Self::sample_loss(&self.forward_sample(image), label))
            .sum();
        Ok(total / images.len() as f64)
    }

    /// Gradient of the single-sample loss with respect to the raw [0, 255]
    /// input intensities (the 1/255 boundary scaling is accounted for).
    pub fn input_gradient(&self, image: &Image, label: Label) -> Result<Vec<f64>> {
        self.check_input(image)?;
        if label.0 >= self.num_classes() {
            return Err(Error::InvalidArgument(format!(
                "label {} out of range for {} classes",
                label.0,
                self.num_classes()
            )));
        }
        let acts = self.forward_sample(image);
        let (_, scaled_grad, _) = self.backward_sample(&acts, label);
        Ok(scaled_grad.iter().map(|&g| g / 255.0).collect())
    }

    /// Textbook Adam update with bias correction; the step counter
    /// advances by one.
    pub fn adam_step(&mut self, gradients: &Gradients, learning_rate: f64) {
        self.adam.t += 1;
        let t = self.adam.t as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        for (idx, grad) in gradients.iter().enumerate() {
            adam_update_slice(
                &mut self.params[idx].weights,
                &grad.weights,
                &mut self.adam.m[idx].weights,
                &mut self.adam.v[idx].weights,
                learning_rate,
                bc1,
                bc2,
            );
            adam_update_slice(
                &mut self.params[idx].bias,
                &grad.bias,
                &mut self.adam.m[idx].bias,
                &mut self.adam.v[idx].bias,
                learning_rate,
                bc1,
                bc2,
            );
        }
    }
}

fn adam_update_slice(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..params.len() {
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * grads[i];
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * grads[i] * grads[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

impl Classifier for Model {
    fn num_classes(&self) -> usize {
        Model::num_classes(self)
    }

    fn predict_probs(&self, image: &Image) -> Vec<f64> {
        self.forward_sample(image).pop().unwrap()
    }
}

/// Index of the largest value; ties break toward the lowest index.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Fraction of images whose argmax prediction matches the label.
pub fn evaluate<C: Classifier + ?Sized>(model: &C, ds: &Dataset) -> f64 {
    if ds.is_empty() {
        return 0.0;
    }
    let correct: usize = ds
        .images()
        .par_iter()
        .zip(ds.labels().par_iter())
        .map(|(image, label)| (argmax_lowest(&model.predict_probs(image)) == label.0) as usize)
        .sum();
    correct as f64 / ds.len() as f64
}
