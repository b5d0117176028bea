//! Siamese embedding network: a convolutional trunk shared by both branches
//! of a pair, followed by either a contrastive head (default) or a softmax
//! classifier head.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{contrastive_slices, hinge_active, softmax_xent_slices};
use super::ops::{conv_backward, conv_forward, dense_backward, dense_forward, pool_backward, pool_forward};
use super::{NnError, ParamLayout, ParamVector, Tensor};
use crate::data::{LabeledImage, Pair};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2D {
        filters: usize,
        kernel: usize,
    },
    /// 2x2 window, stride 2.
    MaxPool2D,
    Dense {
        units: usize,
    },
    Dropout {
        p: f64,
    },
    ReLU,
    Flatten,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Head {
    Contrastive { margin: f64 },
    Classifier { num_classes: usize },
}

impl Default for Head {
    fn default() -> Self {
        Head::Contrastive { margin: 1.0 }
    }
}

/// Conv 32@3x3 → ReLU → pool → Conv 64@3x3 → ReLU → pool → Dense 128 → ReLU → Dropout 0.5.
pub fn reference_trunk() -> Vec<LayerSpec> {
    scaled_trunk(32, 64, 128, 0.5)
}

/// The same layer stack as [`reference_trunk`] with custom widths.
pub fn scaled_trunk(conv1: usize, conv2: usize, embedding: usize, dropout: f64) -> Vec<LayerSpec> {
    use LayerSpec::*;
    vec![
        Conv2D {
            filters: conv1,
            kernel: 3,
        },
        ReLU,
        MaxPool2D,
        Conv2D {
            filters: conv2,
            kernel: 3,
        },
        ReLU,
        MaxPool2D,
        Flatten,
        Dense { units: embedding },
        ReLU,
        Dropout { p: dropout },
    ]
}

/// Forward-pass mode. Training draws fresh dropout masks from the generator.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Conv {
        dims: (usize, usize, usize),
        filters: usize,
        kernel: usize,
        weight: usize,
        bias: usize,
    },
    Pool {
        dims: (usize, usize, usize),
    },
    Dense {
        inputs: usize,
        units: usize,
        weight: usize,
        bias: usize,
    },
    Relu,
    Dropout {
        p: f64,
    },
    Flatten,
}

#[derive(Debug, Clone, Copy)]
struct ClassifierHead {
    inputs: usize,
    classes: usize,
    weight: usize,
    bias: usize,
}

enum Aux<T> {
    None,
    Argmax(Vec<usize>),
    Mask(Vec<T>),
}

/// Activations of one forward pass; `acts[0]` is the input image.
struct Trace<T> {
    acts: Vec<Vec<T>>,
    aux: Vec<Aux<T>>,
}

impl<T: Scalar> Trace<T> {
    fn output(&self) -> &[T] {
        self.acts.last().expect("trace has the input at least")
    }

    /// Hashes every discrete routing decision (ReLU signs, pool winners).
    fn pattern_into(&self, ops: &[Op], hasher: &mut DefaultHasher) {
        for (i, op) in ops.iter().enumerate() {
            match (op, &self.aux[i]) {
                (Op::Relu, _) => {
                    for v in &self.acts[i] {
                        (*v > T::zero()).hash(hasher);
                    }
                }
                (Op::Pool { .. }, Aux::Argmax(idx)) => idx.hash(hasher),
                _ => {}
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SiameseModel {
    input: (usize, usize),
    trunk: Vec<LayerSpec>,
    head: Head,
    ops: Vec<Op>,
    classifier: Option<ClassifierHead>,
    layout: Arc<ParamLayout>,
    embedding_dim: usize,
}

impl SiameseModel {
    /// Reference trunk with the contrastive head at the given square input size.
    pub fn reference(input_size: usize) -> Result<Self, NnError> {
        Self::new((input_size, input_size), reference_trunk(), Head::default())
    }

    pub fn new(input: (usize, usize), trunk: Vec<LayerSpec>, head: Head) -> Result<Self, NnError> {
        let invalid = |msg: String| Err(NnError::InvalidModel(msg));
        let mut layout = ParamLayout::default();
        let mut ops = Vec::with_capacity(trunk.len());
        // Current activation: Some((c, h, w)) while spatial, None once flat.
        let mut spatial = Some((1usize, input.0, input.1));
        let mut flat_len = input.0 * input.1;
        if flat_len == 0 {
            return invalid("input size must be positive".into());
        }
        for (i, spec) in trunk.iter().enumerate() {
            let op = match *spec {
                LayerSpec::Conv2D { filters, kernel } => {
                    let Some((c, h, w)) = spatial else {
                        return invalid(format!("layer {i}: convolution after flatten"));
                    };
                    if filters == 0 || kernel == 0 || kernel > h || kernel > w {
                        return Err(NnError::KernelTooLarge {
                            kernel,
                            height: h,
                            width: w,
                        });
                    }
                    let weight = layout.push(i, format!("layer{i}.conv.weight"), vec![filters, c, kernel, kernel]);
                    let bias = layout.push(i, format!("layer{i}.conv.bias"), vec![filters]);
                    let (oh, ow) = (h - kernel + 1, w - kernel + 1);
                    spatial = Some((filters, oh, ow));
                    flat_len = filters * oh * ow;
                    Op::Conv {
                        dims: (c, h, w),
                        filters,
                        kernel,
                        weight,
                        bias,
                    }
                }
                LayerSpec::MaxPool2D => {
                    let Some((c, h, w)) = spatial else {
                        return invalid(format!("layer {i}: pooling after flatten"));
                    };
                    if h < 2 || w < 2 {
                        return Err(NnError::EmptyInput);
                    }
                    spatial = Some((c, h / 2, w / 2));
                    flat_len = c * (h / 2) * (w / 2);
                    Op::Pool { dims: (c, h, w) }
                }
                LayerSpec::Dense { units } => {
                    if spatial.is_some() {
                        return invalid(format!("layer {i}: dense layer needs a Flatten first"));
                    }
                    if units == 0 {
                        return invalid(format!("layer {i}: dense layer with zero units"));
                    }
                    let weight = layout.push(i, format!("layer{i}.dense.weight"), vec![units, flat_len]);
                    let bias = layout.push(i, format!("layer{i}.dense.bias"), vec![units]);
                    let op = Op::Dense {
                        inputs: flat_len,
                        units,
                        weight,
                        bias,
                    };
                    flat_len = units;
                    op
                }
                LayerSpec::Dropout { p } => {
                    if !(0.0..1.0).contains(&p) {
                        return invalid(format!("layer {i}: dropout p={p} outside [0, 1)"));
                    }
                    Op::Dropout { p }
                }
                LayerSpec::ReLU => Op::Relu,
                LayerSpec::Flatten => {
                    spatial = None;
                    Op::Flatten
                }
            };
            ops.push(op);
        }
        if spatial.is_some() {
            return invalid("trunk must end in a flat embedding".into());
        }
        let classifier = match head {
            Head::Contrastive { margin } => {
                if !(margin > 0.0) {
                    return invalid(format!("contrastive margin must be positive, got {margin}"));
                }
                None
            }
            Head::Classifier { num_classes } => {
                if num_classes < 2 {
                    return invalid("classifier head needs at least two classes".into());
                }
                let n = trunk.len();
                let weight = layout.push(n, "head.weight", vec![num_classes, flat_len]);
                let bias = layout.push(n, "head.bias", vec![num_classes]);
                Some(ClassifierHead {
                    inputs: flat_len,
                    classes: num_classes,
                    weight,
                    bias,
                })
            }
        };
        Ok(Self {
            input,
            trunk,
            head,
            ops,
            classifier,
            layout: Arc::new(layout),
            embedding_dim: flat_len,
        })
    }

    pub fn input_size(&self) -> (usize, usize) {
        self.input
    }

    pub fn trunk(&self) -> &[LayerSpec] {
        &self.trunk
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    /// He-uniform weights, zero biases.
    pub fn init_params<T: Scalar>(&self, seed: u64) -> ParamVector<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamVector::zeros(Arc::clone(&self.layout));
        for block in self.layout.blocks() {
            if block.name.ends_with(".bias") {
                continue;
            }
            let fan_in: usize = block.shape[1..].iter().product();
            let bound = (6.0 / fan_in as f64).sqrt();
            for v in &mut params.values_mut()[block.range()] {
                *v = T::of(rng.random_range(-bound..bound));
            }
        }
        params
    }

    /// Embedding of one image.
    pub fn forward<T: Scalar>(
        &self,
        params: &ParamVector<T>,
        image: &Tensor<T>,
        mode: Mode<'_>,
    ) -> Result<Tensor<T>, NnError> {
        self.check_params(params)?;
        self.check_image(image)?;
        let rng = match mode {
            Mode::Eval => None,
            Mode::Train(rng) => Some(rng),
        };
        let trace = self.trace(params.values(), image.data(), rng);
        let out = trace.acts.into_iter().last().unwrap_or_default();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite("forward"));
        }
        Ok(Tensor::from_parts_unchecked(vec![self.embedding_dim], out))
    }

    /// Class logits; only meaningful with the classifier head.
    pub fn logits<T: Scalar>(
        &self,
        params: &ParamVector<T>,
        image: &Tensor<T>,
        mode: Mode<'_>,
    ) -> Result<Tensor<T>, NnError> {
        let head = self
            .classifier
            .ok_or_else(|| NnError::InvalidModel("model has no classifier head".into()))?;
        let emb = self.forward(params, image, mode)?;
        let mut out = vec![T::zero(); head.classes];
        let p = params.values();
        dense_forward(
            emb.data(),
            &p[self.range(head.weight)],
            &p[self.range(head.bias)],
            &mut out,
        );
        Ok(Tensor::from_parts_unchecked(vec![head.classes], out))
    }

    /// Mean batch loss.
    pub fn loss<T: Scalar>(&self, params: &ParamVector<T>, batch: Batch<'_, T>, mode: Mode<'_>) -> Result<T, NnError> {
        self.check_params(params)?;
        let rng = match mode {
            Mode::Eval => None,
            Mode::Train(rng) => Some(rng),
        };
        self.run_batch(params.values(), batch, rng, None, None)
    }

    /// Mean batch loss and its exact gradient. Dropout masks drawn in the
    /// forward pass are reused for the backward pass. The two branches of a
    /// pair share parameters and dropout mask, so their gradients are summed.
    pub fn backward<T: Scalar>(
        &self,
        params: &ParamVector<T>,
        batch: Batch<'_, T>,
        mode: Mode<'_>,
    ) -> Result<(T, ParamVector<T>), NnError> {
        self.check_params(params)?;
        let rng = match mode {
            Mode::Eval => None,
            Mode::Train(rng) => Some(rng),
        };
        let mut grad = ParamVector::zeros(Arc::clone(&self.layout));
        let loss = self.run_batch(params.values(), batch, rng, Some(grad.values_mut()), None)?;
        if !grad.is_finite() {
            return Err(NnError::NonFinite("backward"));
        }
        Ok((loss, grad))
    }

    /// Loss plus a hash of every discrete branch taken (ReLU signs, pool
    /// winners, active hinges). Dropout masks come from `mask_seed`.
    pub(crate) fn loss_with_pattern<T: Scalar>(
        &self,
        params: &[T],
        batch: Batch<'_, T>,
        mask_seed: Option<u64>,
    ) -> Result<(T, u64), NnError> {
        let mut hasher = DefaultHasher::new();
        let mut rng = mask_seed.map(ChaCha8Rng::seed_from_u64);
        let loss = self.run_batch(
            params,
            batch,
            rng.as_mut().map(|r| r as &mut dyn RngCore),
            None,
            Some(&mut hasher),
        )?;
        Ok((loss, hasher.finish()))
    }

    fn run_batch<T: Scalar>(
        &self,
        params: &[T],
        batch: Batch<'_, T>,
        mut rng: Option<&mut dyn RngCore>,
        mut grad: Option<&mut [T]>,
        mut pattern: Option<&mut DefaultHasher>,
    ) -> Result<T, NnError> {
        if batch.is_empty() {
            return Err(NnError::EmptyInput);
        }
        let mut total = T::zero();
        match (batch, self.head) {
            (Batch::Pairs(pairs), Head::Contrastive { margin }) => {
                let margin = T::of(margin);
                let mut grad_emb = vec![T::zero(); self.embedding_dim];
                for pair in pairs {
                    self.check_image(&pair.a)?;
                    self.check_image(&pair.b)?;
                    // Both branches of a pair see the same dropout mask.
                    let mask = rng.as_deref_mut().map(|r| r.next_u64());
                    let mut ra = mask.map(ChaCha8Rng::seed_from_u64);
                    let mut rb = mask.map(ChaCha8Rng::seed_from_u64);
                    let ta = self.trace(params, pair.a.data(), ra.as_mut());
                    let tb = self.trace(params, pair.b.data(), rb.as_mut());
                    let loss = contrastive_slices(ta.output(), tb.output(), pair.matched, margin, &mut grad_emb);
                    total += loss;
                    if let Some(h) = pattern.as_deref_mut() {
                        ta.pattern_into(&self.ops, h);
                        tb.pattern_into(&self.ops, h);
                        if !pair.matched {
                            hinge_active(ta.output(), tb.output(), margin).hash(h);
                        }
                    }
                    if let Some(g) = grad.as_deref_mut() {
                        self.backprop(params, &ta, grad_emb.clone(), g);
                        let neg: Vec<T> = grad_emb.iter().map(|&v| -v).collect();
                        self.backprop(params, &tb, neg, g);
                    }
                }
            }
            (Batch::Labeled(items), Head::Classifier { num_classes }) => {
                let head = self.classifier.expect("classifier head is planned");
                let mut logits = vec![T::zero(); num_classes];
                let mut grad_logits = vec![T::zero(); num_classes];
                for item in items {
                    self.check_image(&item.image)?;
                    if item.label >= num_classes {
                        return Err(NnError::LabelOutOfRange {
                            label: item.label,
                            classes: num_classes,
                        });
                    }
                    let trace = self.trace(params, item.image.data(), rng.as_deref_mut());
                    let w = &params[self.range(head.weight)];
                    dense_forward(trace.output(), w, &params[self.range(head.bias)], &mut logits);
                    total += softmax_xent_slices(&logits, item.label, &mut grad_logits);
                    if let Some(h) = pattern.as_deref_mut() {
                        trace.pattern_into(&self.ops, h);
                    }
                    if let Some(g) = grad.as_deref_mut() {
                        let mut grad_emb = vec![T::zero(); head.inputs];
                        let (gw, gb) = split_blocks(g, self.range(head.weight), self.range(head.bias));
                        dense_backward(trace.output(), w, &grad_logits, gw, gb, Some(&mut grad_emb));
                        self.backprop(params, &trace, grad_emb, g);
                    }
                }
            }
            (Batch::Pairs(_), _) => {
                return Err(NnError::InvalidModel("pair batch needs the contrastive head".into()));
            }
            (Batch::Labeled(_), _) => {
                return Err(NnError::InvalidModel("labeled batch needs the classifier head".into()));
            }
        }
        let inv = T::one() / T::of(batch.len() as f64);
        if let Some(g) = grad {
            for v in g.iter_mut() {
                *v *= inv;
            }
        }
        let loss = total * inv;
        if !loss.is_finite() {
            return Err(NnError::NonFinite("loss"));
        }
        Ok(loss)
    }

    fn trace<T: Scalar, R: RngCore + ?Sized>(&self, params: &[T], image: &[T], mut rng: Option<&mut R>) -> Trace<T> {
        let mut acts = Vec::with_capacity(self.ops.len() + 1);
        let mut aux = Vec::with_capacity(self.ops.len());
        acts.push(image.to_vec());
        for op in &self.ops {
            let x = acts.last().expect("input pushed");
            let (y, a) = match *op {
                Op::Conv {
                    dims,
                    filters,
                    kernel,
                    weight,
                    bias,
                } => {
                    let (_, h, w) = dims;
                    let mut out = vec![T::zero(); filters * (h - kernel + 1) * (w - kernel + 1)];
                    conv_forward(
                        x,
                        dims,
                        &params[self.range(weight)],
                        &params[self.range(bias)],
                        filters,
                        kernel,
                        &mut out,
                    );
                    (out, Aux::None)
                }
                Op::Pool { dims } => {
                    let (c, h, w) = dims;
                    let n = c * (h / 2) * (w / 2);
                    let mut out = vec![T::zero(); n];
                    let mut idx = vec![0; n];
                    pool_forward(x, dims, &mut out, &mut idx);
                    (out, Aux::Argmax(idx))
                }
                Op::Dense {
                    units, weight, bias, ..
                } => {
                    let mut out = vec![T::zero(); units];
                    dense_forward(x, &params[self.range(weight)], &params[self.range(bias)], &mut out);
                    (out, Aux::None)
                }
                Op::Relu => (x.iter().map(|&v| v.max(T::zero())).collect(), Aux::None),
                Op::Dropout { p } => match rng.as_deref_mut() {
                    Some(r) if p > 0.0 => {
                        let keep = T::of(1.0 / (1.0 - p));
                        let mask: Vec<T> = (0..x.len())
                            .map(|_| if r.random::<f64>() < p { T::zero() } else { keep })
                            .collect();
                        (x.iter().zip(&mask).map(|(&v, &m)| v * m).collect(), Aux::Mask(mask))
                    }
                    _ => (x.clone(), Aux::None),
                },
                Op::Flatten => (x.clone(), Aux::None),
            };
            acts.push(y);
            aux.push(a);
        }
        Trace { acts, aux }
    }

    fn backprop<T: Scalar>(&self, params: &[T], trace: &Trace<T>, mut g: Vec<T>, grad: &mut [T]) {
        for (i, op) in self.ops.iter().enumerate().rev() {
            let input = &trace.acts[i];
            let need_input_grad = i > 0;
            match *op {
                Op::Conv {
                    dims,
                    filters,
                    kernel,
                    weight,
                    bias,
                } => {
                    let mut gi = if need_input_grad {
                        vec![T::zero(); input.len()]
                    } else {
                        Vec::new()
                    };
                    let (gw, gb) = split_blocks(grad, self.range(weight), self.range(bias));
                    conv_backward(
                        input,
                        dims,
                        &params[self.range(weight)],
                        filters,
                        kernel,
                        &g,
                        gw,
                        gb,
                        need_input_grad.then_some(gi.as_mut_slice()),
                    );
                    g = gi;
                }
                Op::Pool { .. } => {
                    let Aux::Argmax(idx) = &trace.aux[i] else {
                        unreachable!("pool layers record argmax")
                    };
                    let mut gi = vec![T::zero(); input.len()];
                    pool_backward(&g, idx, &mut gi);
                    g = gi;
                }
                Op::Dense {
                    inputs, weight, bias, ..
                } => {
                    let mut gi = if need_input_grad {
                        vec![T::zero(); inputs]
                    } else {
                        Vec::new()
                    };
                    let (gw, gb) = split_blocks(grad, self.range(weight), self.range(bias));
                    dense_backward(
                        input,
                        &params[self.range(weight)],
                        &g,
                        gw,
                        gb,
                        need_input_grad.then_some(gi.as_mut_slice()),
                    );
                    g = gi;
                }
                Op::Relu => {
                    for (gv, &x) in g.iter_mut().zip(input) {
                        if x <= T::zero() {
                            *gv = T::zero();
                        }
                    }
                }
                Op::Dropout { .. } => {
                    if let Aux::Mask(mask) = &trace.aux[i] {
                        for (gv, &m) in g.iter_mut().zip(mask) {
                            *gv *= m;
                        }
                    }
                }
                Op::Flatten => {}
            }
            if !need_input_grad {
                break;
            }
        }
    }

    fn range(&self, block: usize) -> std::ops::Range<usize> {
        self.layout.blocks()[block].range()
    }

    fn check_params<T: Scalar>(&self, params: &ParamVector<T>) -> Result<(), NnError> {
        if Arc::ptr_eq(params.layout(), &self.layout) || **params.layout() == *self.layout {
            Ok(())
        } else {
            Err(NnError::LayoutMismatch)
        }
    }

    fn check_image<T: Scalar>(&self, image: &Tensor<T>) -> Result<(), NnError> {
        let (h, w) = self.input;
        match *image.shape() {
            [ih, iw] | [1, ih, iw] if (ih, iw) == (h, w) => Ok(()),
            _ => Err(NnError::Shape {
                expected: vec![h, w],
                actual: image.shape().to_vec(),
            }),
        }
    }
}

/// Splits a weight block and the bias block that follows it out of `grad`.
fn split_blocks<T>(
    grad: &mut [T],
    weight: std::ops::Range<usize>,
    bias: std::ops::Range<usize>,
) -> (&mut [T], &mut [T]) {
    debug_assert!(weight.end <= bias.start);
    let (head, tail) = grad.split_at_mut(bias.start);
    (&mut head[weight], &mut tail[..bias.len()])
}

/// A minibatch: image pairs for the contrastive head or labeled images for
/// the classifier head.
#[derive(Debug, Clone, Copy)]
pub enum Batch<'a, T> {
    Pairs(&'a [Pair<T>]),
    Labeled(&'a [LabeledImage<T>]),
}

impl<T> Batch<'_, T> {
    pub fn len(&self) -> usize {
        match self {
            Batch::Pairs(p) => p.len(),
            Batch::Labeled(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
