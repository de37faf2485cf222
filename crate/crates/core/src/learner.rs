//! Hand-rolled MLP learner: dense layers, softmax cross-entropy (single-label
//! and per-cell variants), exact backprop, and plain SGD.
//!
//! The backward pass exposes two hooks the adversarial training loop needs:
//! an extra gradient injected at the penultimate ("feature") activation, and
//! the gradient with respect to the network input. Together they let a frozen
//! auxiliary classifier steer the learner through its feature layer without
//! any special-case autodiff.
//!
//! All reductions are serial and in index order, so a training run is a pure
//! function of (initial weights, data order, hyperparameters).

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::scalar::{real, real_of_usize, Real};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    fn from_name(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Parse(format!("unknown activation `{other}`"))),
        }
    }
}

/// One dense layer; weights are row-major `[output x input]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<S> {
    pub input: usize,
    pub output: usize,
    pub weights: Vec<S>,
    pub bias: Vec<S>,
    pub activation: Activation,
}

impl<S: Real> DenseLayer<S> {
    fn apply(&self, x: &[S], out: &mut Vec<S>) {
        out.clear();
        for o in 0..self.output {
            let row = &self.weights[o * self.input..(o + 1) * self.input];
            let mut acc = self.bias[o];
            for (w, xi) in row.iter().zip(x.iter()) {
                acc += *w * *xi;
            }
            out.push(match self.activation {
                Activation::Relu => acc.max(S::zero()),
                Activation::Identity => acc,
            });
        }
    }
}

/// A feed-forward stack of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState<S> {
    layers: Vec<DenseLayer<S>>,
}

/// Per-layer gradients with the same shapes as the learner's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<S> {
    pub layers: Vec<LayerGrad<S>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad<S> {
    pub weights: Vec<S>,
    pub bias: Vec<S>,
}

impl<S: Real> Gradients<S> {
    pub fn zeros_like(state: &LearnerState<S>) -> Self {
        Gradients {
            layers: state
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![S::zero(); l.weights.len()],
                    bias: vec![S::zero(); l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients<S>, factor: S) {
        for (a, b) in self.layers.iter_mut().zip(other.layers.iter()) {
            for (x, y) in a.weights.iter_mut().zip(b.weights.iter()) {
                *x += *y * factor;
            }
            for (x, y) in a.bias.iter_mut().zip(b.bias.iter()) {
                *x += *y * factor;
            }
        }
    }

    pub fn scale(&mut self, factor: S) {
        for l in self.layers.iter_mut() {
            for v in l.weights.iter_mut() {
                *v *= factor;
            }
            for v in l.bias.iter_mut() {
                *v *= factor;
            }
        }
    }

    pub fn max_abs(&self) -> S {
        let mut m = S::zero();
        for l in &self.layers {
            for v in l.weights.iter().chain(l.bias.iter()) {
                m = m.max(v.abs());
            }
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

/// Loss selector: image-level softmax cross-entropy, or independent softmax
/// cross-entropy per grid cell over `cells` blocks of `classes` logits each.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    PerCellCrossEntropy { cells: usize, classes: usize },
}

impl LossKind {
    pub fn output_dim(&self, classes: usize) -> usize {
        match self {
            LossKind::CrossEntropy => classes,
            LossKind::PerCellCrossEntropy { cells, classes } => cells * classes,
        }
    }
}

/// Supervision target matching a `LossKind`: one class index, or one class
/// index per grid cell (index 0 = empty).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SampleLabel {
    Class(usize),
    Cells(Vec<usize>),
}

impl SampleLabel {
    pub fn from_render(label: &crate::render::Label) -> Self {
        use crate::render::{CellState, Label};
        match label {
            Label::Class(c) => SampleLabel::Class(*c),
            Label::Grid { cells, .. } => SampleLabel::Cells(
                cells
                    .iter()
                    .map(|c| match c {
                        CellState::Empty => 0,
                        CellState::Class(k) => k + 1,
                    })
                    .collect(),
            ),
        }
    }
}

/// Forward activations, kept for the backward pass. `values[0]` is the input
/// and `values[i + 1]` the post-activation output of layer `i`.
pub struct ForwardCache<S> {
    values: Vec<Vec<S>>,
}

impl<S: Real> ForwardCache<S> {
    pub fn logits(&self) -> &[S] {
        self.values.last().expect("cache has at least the input")
    }

    /// Input to the final layer: the learner's feature representation.
    pub fn features(&self) -> &[S] {
        &self.values[self.values.len() - 2]
    }
}

/// Aggregate quality numbers from `evaluate`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport<S> {
    pub mean_loss: S,
    /// Fraction of correct argmax decisions (per image, or per cell for
    /// grid labels).
    pub accuracy: S,
    /// Accuracy restricted to each true class; `None` where the class never
    /// occurs in the evaluation set.
    pub per_class: Vec<Option<S>>,
}

/// Argmax with ties broken toward the lowest index.
pub fn argmax<S: Real>(values: &[S]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

impl<S: Real> LearnerState<S> {
    pub fn new(layers: Vec<DenseLayer<S>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidParameter("learner needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.input == 0 || l.output == 0 {
                return Err(Error::InvalidParameter(format!("layer {i} has a zero dimension")));
            }
            if l.weights.len() != l.input * l.output || l.bias.len() != l.output {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i} parameter buffers do not match {}x{}",
                    l.output, l.input
                )));
            }
            if i + 1 < layers.len() && l.output != layers[i + 1].input {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i} output {} does not feed layer {} input {}",
                    l.output,
                    i + 1,
                    layers[i + 1].input
                )));
            }
        }
        Ok(LearnerState { layers })
    }

    /// Fresh MLP with ReLU hidden layers and an identity output layer.
    /// Weights are uniform in ±sqrt(6 / (fan_in + fan_out)), biases zero;
    /// the draw order (layer by layer, weight rows in order) is fixed so a
    /// given seed always produces the same network.
    pub fn mlp(input_dim: usize, hidden: &[usize], output_dim: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidParameter("zero layer width".into()));
        }
        let mut rng = rng_from(seed);
        let mut layers = Vec::new();
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        for i in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[i], dims[i + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = (0..fan_in * fan_out)
                .map(|_| real::<S>((2.0 * rng.gen::<f64>() - 1.0) * bound))
                .collect();
            layers.push(DenseLayer {
                input: fan_in,
                output: fan_out,
                weights,
                bias: vec![S::zero(); fan_out],
                activation: if i + 2 == dims.len() {
                    Activation::Identity
                } else {
                    Activation::Relu
                },
            });
        }
        LearnerState::new(layers)
    }

    /// Zero the final layer. A zero output layer makes the initial logits
    /// exactly uniform and the early training trajectory symmetric under
    /// output-unit relabeling — used by the two-way domain classifier.
    pub fn zero_final_layer(&mut self) {
        let last = self.layers.last_mut().expect("validated non-empty");
        for v in last.weights.iter_mut() {
            *v = S::zero();
        }
        for v in last.bias.iter_mut() {
            *v = S::zero();
        }
    }

    pub fn layers(&self) -> &[DenseLayer<S>] {
        &self.layers
    }

    /// Direct weight access, for probes and perturbation-based checks.
    /// Shape changes are the caller's responsibility to avoid.
    pub fn layers_mut(&mut self) -> &mut [DenseLayer<S>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").output
    }

    /// Width of the penultimate activation (the input itself for a
    /// single-layer network).
    pub fn feature_dim(&self) -> usize {
        self.layers.last().expect("non-empty").input
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    fn check_input(&self, x: &Tensor<S>) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input has {} values, learner expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward_cached(&self, x: &Tensor<S>) -> Result<ForwardCache<S>> {
        self.check_input(x)?;
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(x.data().to_vec());
        for layer in &self.layers {
            let mut out = Vec::new();
            layer.apply(values.last().expect("non-empty"), &mut out);
            values.push(out);
        }
        Ok(ForwardCache { values })
    }

    /// Logits and features for one input.
    pub fn forward(&self, x: &Tensor<S>) -> Result<(Vec<S>, Vec<S>)> {
        let cache = self.forward_cached(x)?;
        Ok((cache.logits().to_vec(), cache.features().to_vec()))
    }

    /// Backprop from a logit gradient. `feature_extra` is added to the
    /// gradient at the penultimate activation before it flows further down;
    /// the returned vector is the gradient with respect to the input.
    pub fn backward_from_logit_grad(
        &self,
        cache: &ForwardCache<S>,
        logit_grad: &[S],
        feature_extra: Option<&[S]>,
        grads: &mut Gradients<S>,
    ) -> Result<Vec<S>> {
        if logit_grad.len() != self.output_dim() {
            return Err(Error::ShapeMismatch(format!(
                "logit gradient has {} values, learner outputs {}",
                logit_grad.len(),
                self.output_dim()
            )));
        }
        if let Some(extra) = feature_extra {
            if extra.len() != self.feature_dim() {
                return Err(Error::ShapeMismatch(format!(
                    "feature gradient has {} values, feature width is {}",
                    extra.len(),
                    self.feature_dim()
                )));
            }
        }
        let mut upstream = logit_grad.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.values[i];
            let output = &cache.values[i + 1];
            // d/d(pre-activation); ReLU uses the cached post-activation sign.
            let mut delta = upstream;
            if layer.activation == Activation::Relu {
                for (d, o) in delta.iter_mut().zip(output.iter()) {
                    if *o <= S::zero() {
                        *d = S::zero();
                    }
                }
            }
            let g = &mut grads.layers[i];
            for o in 0..layer.output {
                let d = delta[o];
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.input..(o + 1) * layer.input];
                for (w, xi) in row.iter_mut().zip(input.iter()) {
                    *w += d * *xi;
                }
            }
            let mut down = vec![S::zero(); layer.input];
            for o in 0..layer.output {
                let d = delta[o];
                let row = &layer.weights[o * layer.input..(o + 1) * layer.input];
                for (dn, w) in down.iter_mut().zip(row.iter()) {
                    *dn += d * *w;
                }
            }
            // The feature hook sits between the last layer and the rest.
            if i + 1 == self.layers.len() {
                if let Some(extra) = feature_extra {
                    for (dn, e) in down.iter_mut().zip(extra.iter()) {
                        *dn += *e;
                    }
                }
            }
            upstream = down;
        }
        Ok(upstream)
    }

    /// Loss gradient for one sample, accumulated into `grads`; returns the
    /// sample loss.
    pub fn backward(
        &self,
        x: &Tensor<S>,
        label: &SampleLabel,
        kind: LossKind,
        grads: &mut Gradients<S>,
    ) -> Result<S> {
        let cache = self.forward_cached(x)?;
        let (value, logit_grad) = loss_and_grad(kind, cache.logits(), label)?;
        self.backward_from_logit_grad(&cache, &logit_grad, None, grads)?;
        Ok(value)
    }

    /// Mean gradient and mean loss over a batch, accumulated serially in
    /// sample order.
    pub fn backward_batch(
        &self,
        batch: &[(&Tensor<S>, &SampleLabel)],
        kind: LossKind,
    ) -> Result<(Gradients<S>, S)> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty training batch".into()));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut total = S::zero();
        for (x, label) in batch {
            total += self.backward(x, label, kind, &mut grads)?;
        }
        let inv: S = S::one() / real_of_usize(batch.len());
        grads.scale(inv);
        Ok((grads, total * inv))
    }

    /// One SGD step: `w <- w - lr * g`. Rejects non-positive learning rates
    /// and non-finite gradients rather than silently corrupting the model.
    pub fn sgd_step(&mut self, grads: &Gradients<S>, lr: S) -> Result<()> {
        if !(lr > S::zero()) || !lr.is_finite() {
            return Err(Error::InvalidParameter(format!("learning rate {lr} must be positive")));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::ShapeMismatch("gradient/layer count mismatch".into()));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient contains a non-finite value".into()));
        }
        for (layer, g) in self.layers.iter_mut().zip(grads.layers.iter()) {
            if g.weights.len() != layer.weights.len() || g.bias.len() != layer.bias.len() {
                return Err(Error::ShapeMismatch("gradient shape mismatch".into()));
            }
            for (w, gw) in layer.weights.iter_mut().zip(g.weights.iter()) {
                *w -= lr * *gw;
            }
            for (b, gb) in layer.bias.iter_mut().zip(g.bias.iter()) {
                *b -= lr * *gb;
            }
        }
        Ok(())
    }

    /// Mean loss, accuracy, and per-class accuracy over a labeled set.
    pub fn evaluate(
        &self,
        data: &[(Tensor<S>, SampleLabel)],
        kind: LossKind,
    ) -> Result<EvalReport<S>> {
        if data.is_empty() {
            return Err(Error::InvalidInput("empty evaluation set".into()));
        }
        let class_count = match kind {
            LossKind::CrossEntropy => self.output_dim(),
            LossKind::PerCellCrossEntropy { classes, .. } => classes,
        };
        let mut total_loss = S::zero();
        let mut correct = 0usize;
        let mut decisions = 0usize;
        let mut class_hits = vec![0usize; class_count];
        let mut class_totals = vec![0usize; class_count];
        for (x, label) in data {
            let cache = self.forward_cached(x)?;
            total_loss += loss_value(kind, cache.logits(), label)?;
            match (kind, label) {
                (LossKind::CrossEntropy, SampleLabel::Class(c)) => {
                    let pred = argmax(cache.logits());
                    decisions += 1;
                    class_totals[*c] += 1;
                    if pred == *c {
                        correct += 1;
                        class_hits[*c] += 1;
                    }
                }
                (LossKind::PerCellCrossEntropy { cells, classes }, SampleLabel::Cells(truth)) => {
                    for cell in 0..cells {
                        let block = &cache.logits()[cell * classes..(cell + 1) * classes];
                        let pred = argmax(block);
                        let t = truth[cell];
                        decisions += 1;
                        class_totals[t] += 1;
                        if pred == t {
                            correct += 1;
                            class_hits[t] += 1;
                        }
                    }
                }
                _ => {
                    return Err(Error::InvalidLabel(
                        "label kind does not match loss kind".into(),
                    ))
                }
            }
        }
        let per_class = class_hits
            .iter()
            .zip(class_totals.iter())
            .map(|(&h, &t)| {
                if t == 0 {
                    None
                } else {
                    Some(real_of_usize::<S>(h) / real_of_usize(t))
                }
            })
            .collect();
        Ok(EvalReport {
            mean_loss: total_loss / real_of_usize(data.len()),
            accuracy: real_of_usize::<S>(correct) / real_of_usize(decisions),
            per_class,
        })
    }

    /// Write weights as a versioned plain-text checkpoint. Values use the
    /// shortest round-trip decimal form, so save -> load reproduces the
    /// parameters bit for bit.
    pub fn save_weights<W: Write>(&self, mut w: W) -> Result<()> {
        let mut text = String::new();
        writeln!(text, "advrand-weights v1").expect("string write");
        writeln!(text, "layers {}", self.layers.len()).expect("string write");
        for layer in &self.layers {
            writeln!(
                text,
                "layer {} {} {}",
                layer.input,
                layer.output,
                layer.activation.name()
            )
            .expect("string write");
            for o in 0..layer.output {
                let row = &layer.weights[o * layer.input..(o + 1) * layer.input];
                let joined: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
                writeln!(text, "w {}", joined.join(" ")).expect("string write");
            }
            let joined: Vec<String> = layer.bias.iter().map(|v| format!("{v}")).collect();
            writeln!(text, "b {}", joined.join(" ")).expect("string write");
        }
        w.write_all(text.as_bytes())?;
        Ok(())
    }

    pub fn save_weights_to(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.save_weights(std::io::BufWriter::new(file))
    }

    pub fn load_weights<R: std::io::Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .transpose()?
                .ok_or_else(|| Error::Parse("truncated checkpoint".into()))
        };
        let header = next()?;
        if header.trim() != "advrand-weights v1" {
            return Err(Error::Parse(format!("unsupported checkpoint header `{header}`")));
        }
        let count_line = next()?;
        let count: usize = count_line
            .strip_prefix("layers ")
            .ok_or_else(|| Error::Parse("missing layer count".into()))?
            .trim()
            .parse()
            .map_err(|_| Error::Parse("bad layer count".into()))?;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let head = next()?;
            let parts: Vec<&str> = head.split_whitespace().collect();
            if parts.len() != 4 || parts[0] != "layer" {
                return Err(Error::Parse(format!("bad layer header `{head}`")));
            }
            let input: usize = parts[1]
                .parse()
                .map_err(|_| Error::Parse("bad layer input width".into()))?;
            let output: usize = parts[2]
                .parse()
                .map_err(|_| Error::Parse("bad layer output width".into()))?;
            let activation = Activation::from_name(parts[3])?;
            let mut weights = Vec::with_capacity(input * output);
            for _ in 0..output {
                let row = next()?;
                let body = row
                    .strip_prefix("w ")
                    .ok_or_else(|| Error::Parse("missing weight row".into()))?;
                parse_values(body, input, &mut weights)?;
            }
            let brow = next()?;
            let body = brow
                .strip_prefix("b ")
                .ok_or_else(|| Error::Parse("missing bias row".into()))?;
            let mut bias = Vec::with_capacity(output);
            parse_values(body, output, &mut bias)?;
            layers.push(DenseLayer {
                input,
                output,
                weights,
                bias,
                activation,
            });
        }
        LearnerState::new(layers)
    }

    pub fn load_weights_from(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::load_weights(file)
    }
}

pub(crate) fn parse_values<S: Real>(body: &str, expect: usize, out: &mut Vec<S>) -> Result<()> {
    let start = out.len();
    for tok in body.split_whitespace() {
        let v: f64 = tok
            .parse()
            .map_err(|_| Error::Parse(format!("bad numeric value `{tok}`")))?;
        out.push(real(v));
    }
    if out.len() - start != expect {
        return Err(Error::Parse(format!(
            "expected {expect} values, found {}",
            out.len() - start
        )));
    }
    Ok(())
}

/// log-softmax with max-shift; numerically safe for any finite logits.
fn log_softmax<S: Real>(logits: &[S]) -> Vec<S> {
    let max = logits.iter().cloned().fold(logits[0], |a, b| a.max(b));
    let mut sum = S::zero();
    for &z in logits {
        sum += (z - max).exp();
    }
    let log_z = max + sum.ln();
    logits.iter().map(|&z| z - log_z).collect()
}

/// Softmax probabilities with max-shift.
pub fn softmax<S: Real>(logits: &[S]) -> Vec<S> {
    let max = logits.iter().cloned().fold(logits[0], |a, b| a.max(b));
    let mut exps: Vec<S> = logits.iter().map(|&z| (z - max).exp()).collect();
    let mut sum = S::zero();
    for &e in &exps {
        sum += e;
    }
    for e in exps.iter_mut() {
        *e /= sum;
    }
    exps
}

fn check_label<S: Real>(kind: LossKind, logits: &[S], label: &SampleLabel) -> Result<()> {
    match (kind, label) {
        (LossKind::CrossEntropy, SampleLabel::Class(c)) => {
            if logits.is_empty() {
                return Err(Error::InvalidInput("empty logits".into()));
            }
            if *c >= logits.len() {
                return Err(Error::InvalidLabel(format!(
                    "class {c} out of range [0, {})",
                    logits.len()
                )));
            }
        }
        (LossKind::PerCellCrossEntropy { cells, classes }, SampleLabel::Cells(truth)) => {
            if classes == 0 || cells == 0 {
                return Err(Error::InvalidParameter("empty cell layout".into()));
            }
            if logits.len() != cells * classes {
                return Err(Error::ShapeMismatch(format!(
                    "{} logits do not tile {} cells x {} classes",
                    logits.len(),
                    cells,
                    classes
                )));
            }
            if truth.len() != cells {
                return Err(Error::InvalidLabel(format!(
                    "{} cell labels for {} cells",
                    truth.len(),
                    cells
                )));
            }
            if let Some(bad) = truth.iter().find(|&&t| t >= classes) {
                return Err(Error::InvalidLabel(format!(
                    "cell class {bad} out of range [0, {classes})"
                )));
            }
        }
        _ => {
            return Err(Error::InvalidLabel(
                "label kind does not match loss kind".into(),
            ))
        }
    }
    Ok(())
}

/// Loss value for one sample.
pub fn loss_value<S: Real>(kind: LossKind, logits: &[S], label: &SampleLabel) -> Result<S> {
    check_label(kind, logits, label)?;
    Ok(match (kind, label) {
        (LossKind::CrossEntropy, SampleLabel::Class(c)) => -log_softmax(logits)[*c],
        (LossKind::PerCellCrossEntropy { cells, classes }, SampleLabel::Cells(truth)) => {
            let mut total = S::zero();
            for cell in 0..cells {
                let block = &logits[cell * classes..(cell + 1) * classes];
                total += -log_softmax(block)[truth[cell]];
            }
            total / real_of_usize(cells)
        }
        _ => unreachable!("checked above"),
    })
}

/// Loss value and gradient with respect to the logits.
pub fn loss_and_grad<S: Real>(
    kind: LossKind,
    logits: &[S],
    label: &SampleLabel,
) -> Result<(S, Vec<S>)> {
    check_label(kind, logits, label)?;
    match (kind, label) {
        (LossKind::CrossEntropy, SampleLabel::Class(c)) => {
            let log_p = log_softmax(logits);
            let mut grad: Vec<S> = log_p.iter().map(|lp| lp.exp()).collect();
            grad[*c] -= S::one();
            Ok((-log_p[*c], grad))
        }
        (LossKind::PerCellCrossEntropy { cells, classes }, SampleLabel::Cells(truth)) => {
            let inv: S = S::one() / real_of_usize(cells);
            let mut total = S::zero();
            let mut grad = vec![S::zero(); logits.len()];
            for cell in 0..cells {
                let block = &logits[cell * classes..(cell + 1) * classes];
                let log_p = log_softmax(block);
                total += -log_p[truth[cell]];
                for k in 0..classes {
                    let mut g = log_p[k].exp();
                    if k == truth[cell] {
                        g -= S::one();
                    }
                    grad[cell * classes + k] = g * inv;
                }
            }
            Ok((total * inv, grad))
        }
        _ => unreachable!("checked above"),
    }
}

/// Loss for each grid cell separately (used for per-cell policy rewards).
pub fn per_cell_losses<S: Real>(
    logits: &[S],
    truth: &[usize],
    classes: usize,
) -> Result<Vec<S>> {
    let kind = LossKind::PerCellCrossEntropy {
        cells: truth.len(),
        classes,
    };
    check_label(kind, logits, &SampleLabel::Cells(truth.to_vec()))?;
    Ok((0..truth.len())
        .map(|cell| {
            let block = &logits[cell * classes..(cell + 1) * classes];
            -log_softmax(block)[truth[cell]]
        })
        .collect())
}
