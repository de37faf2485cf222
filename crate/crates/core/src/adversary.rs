//! Training loops: the uniform-randomization baseline, the adversarial
//! policy loop, and the unlabeled-target extension with a domain
//! classifier.
//!
//! Three entry points share one iteration skeleton:
//!
//! * [`run_dr`] — per iteration, draw `m` parameter points uniformly,
//!   render, and train the learner on them.
//! * [`run_vadra`] — per iteration, draw `m1` points from the policy and
//!   train the learner; then draw `m2` more, score them by the learner's
//!   loss, and update the policy by REINFORCE. The policy climbs toward
//!   whatever the learner currently gets wrong.
//! * [`run_vadra_da`] — extends the policy loop with a domain classifier
//!   trained to tell learner features of policy-rendered images (label 0)
//!   from features of an unlabeled target pool (label 1). The classifier's
//!   target-probability enters both the policy reward (`+ w2 * log D`) and
//!   the learner loss (`+ w4 * log D`, classifier frozen during the
//!   learner's step).
//!
//! Budget fairness: `run_dr` is meant to be configured with
//! `m = m1 + m2` so both methods consume the same number of renders per
//! iteration; every loop counts its render calls so tests can assert
//! parity.
//!
//! Reproducibility: all randomness flows from the config seed through
//! fixed per-purpose streams (policy draws, uniform draws, render
//! nuisances, shuffling, domain-pool picks), so a `(config, seed)` pair
//! determines the entire trajectory bit for bit.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::learner::{
    loss_and_grad, loss_value, per_cell_losses, Gradients, LearnerState, LossKind, SampleLabel,
};
use crate::policy::{PolicyState, ThetaDraw};
use crate::render::{
    render_grid_scene, render_shape, GridSceneParams, LabeledSample, Placement, RenderSpace, Task,
    MAX_PLACEMENTS, MIN_PLACEMENTS,
};
use crate::rng::{derive_seed, rng_from, stream_seed, Stream};
use crate::scalar::{real, real_of_usize, Real};
use crate::tensor::Tensor;
use crate::theory::target_probability;

/// Orientation of the policy reward relative to the learner's loss.
///
/// `LossAsReward` (the default) gives the policy `r = +d`: it is paid for
/// finding parameters the learner handles badly, matching the min-max
/// reading of the objective. `NegatedLoss` gives `r = -d` for fidelity
/// experiments with the opposite orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RewardSign {
    #[default]
    LossAsReward,
    NegatedLoss,
}

impl RewardSign {
    pub fn apply<S: Real>(self, d: S) -> S {
        match self {
            RewardSign::LossAsReward => d,
            RewardSign::NegatedLoss => -d,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RewardSign::LossAsReward => "loss_as_reward",
            RewardSign::NegatedLoss => "negated_loss",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "loss_as_reward" => Ok(RewardSign::LossAsReward),
            "negated_loss" => Ok(RewardSign::NegatedLoss),
            other => Err(Error::Config(format!(
                "unknown reward_sign `{other}` (expected loss_as_reward or negated_loss)"
            ))),
        }
    }
}

/// Uniform-randomization baseline configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct DrConfig<S> {
    /// Renders per iteration; set to the adversary's `m1 + m2` when
    /// comparing methods.
    pub m: usize,
    pub iterations: usize,
    /// Learner step size; 0 freezes the learner.
    pub learner_lr: S,
    /// Linear learning-rate decay over the run: the final iteration uses
    /// `learner_lr * (1 - lr_decay)`. 0 keeps the rate constant.
    pub lr_decay: S,
    /// Passes over each iteration's fresh batch.
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl<S: Real> Default for DrConfig<S> {
    fn default() -> Self {
        DrConfig {
            m: 48,
            iterations: 40,
            learner_lr: real(0.05),
            lr_decay: S::zero(),
            epochs: 1,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl<S: Real> DrConfig<S> {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        validate_schedule(self.learner_lr, self.lr_decay, self.epochs, self.batch_size)
    }
}

/// Adversarial-policy loop configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct VadraConfig<S> {
    /// Learner-batch renders per iteration.
    pub m1: usize,
    /// Policy-batch renders per iteration.
    pub m2: usize,
    pub iterations: usize,
    pub learner_lr: S,
    pub lr_decay: S,
    pub epochs: usize,
    pub batch_size: usize,
    /// Policy ascent step size; 0 freezes the policy logits.
    pub policy_lr: S,
    /// Weight of the entropy-gradient bonus added to the policy update;
    /// 0 disables it.
    pub entropy_bonus: S,
    pub reward_sign: RewardSign,
    pub seed: u64,
}

impl<S: Real> Default for VadraConfig<S> {
    fn default() -> Self {
        VadraConfig {
            m1: 32,
            m2: 16,
            iterations: 40,
            learner_lr: real(0.05),
            lr_decay: S::zero(),
            epochs: 1,
            batch_size: 16,
            policy_lr: real(0.5),
            entropy_bonus: S::zero(),
            reward_sign: RewardSign::LossAsReward,
            seed: 0,
        }
    }
}

impl<S: Real> VadraConfig<S> {
    pub fn validate(&self) -> Result<()> {
        if self.m1 + self.m2 == 0 {
            return Err(Error::Config("m1 + m2 must be at least 1".into()));
        }
        if !(self.policy_lr >= S::zero()) || !self.policy_lr.is_finite() {
            return Err(Error::Config(format!(
                "policy_lr {} must be finite and non-negative",
                self.policy_lr
            )));
        }
        if !(self.entropy_bonus >= S::zero()) || !self.entropy_bonus.is_finite() {
            return Err(Error::Config(format!(
                "entropy_bonus {} must be finite and non-negative",
                self.entropy_bonus
            )));
        }
        validate_schedule(self.learner_lr, self.lr_decay, self.epochs, self.batch_size)
    }

    /// Renders per iteration, the quantity that must match `DrConfig::m`
    /// for a fair comparison.
    pub fn budget(&self) -> usize {
        self.m1 + self.m2
    }
}

/// Domain-adaptation extension: the base policy loop plus classifier
/// weights. `w1`/`w2` weight loss and domain terms in the policy reward;
/// `w3`/`w4` weight them in the learner loss.
#[derive(Debug, Clone, PartialEq)]
pub struct DaConfig<S> {
    pub base: VadraConfig<S>,
    pub w1: S,
    pub w2: S,
    pub w3: S,
    pub w4: S,
    /// Domain-classifier step size.
    pub d_lr: S,
    /// Domain-classifier hidden width.
    pub d_hidden: usize,
}

impl<S: Real> Default for DaConfig<S> {
    fn default() -> Self {
        DaConfig {
            base: VadraConfig::default(),
            w1: S::one(),
            w2: real(0.1),
            w3: S::one(),
            w4: real(0.1),
            d_lr: real(0.1),
            d_hidden: 64,
        }
    }
}

impl<S: Real> DaConfig<S> {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        for (name, w) in [("w1", self.w1), ("w2", self.w2), ("w3", self.w3), ("w4", self.w4)] {
            if !w.is_finite() || w < S::zero() {
                return Err(Error::Config(format!(
                    "{name} = {w} must be finite and non-negative"
                )));
            }
        }
        if !(self.d_lr > S::zero()) || !self.d_lr.is_finite() {
            return Err(Error::Config(format!("d_lr {} must be positive", self.d_lr)));
        }
        if self.d_hidden == 0 {
            return Err(Error::Config("d_hidden must be at least 1".into()));
        }
        Ok(())
    }
}

fn validate_schedule<S: Real>(lr: S, decay: S, epochs: usize, batch_size: usize) -> Result<()> {
    if !(lr >= S::zero()) || !lr.is_finite() {
        return Err(Error::Config(format!(
            "learner_lr {lr} must be finite and non-negative"
        )));
    }
    if !(decay >= S::zero() && decay <= S::one()) {
        return Err(Error::Config(format!("lr_decay {decay} outside [0, 1]")));
    }
    if epochs == 0 {
        return Err(Error::Config("epochs must be at least 1".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    Ok(())
}

/// One metrics row, recorded after each iteration's work.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord<S> {
    pub iter: usize,
    pub target_acc: S,
    pub target_loss: S,
    /// Mean supervised loss over this iteration's training batch (the
    /// plain distance term, even in the domain-adaptation variant).
    pub source_loss: S,
    /// Mean policy reward over the scoring batch; NaN when no scoring
    /// batch ran.
    pub mean_reward: S,
    pub entropy: S,
}

/// Full run record: per-iteration rows plus the run's seed and the render
/// counter used for budget-parity assertions. Wall-clock time is reported
/// for logging but deliberately excluded from the CSV so output files stay
/// deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics<S> {
    pub records: Vec<IterationRecord<S>>,
    pub seed: u64,
    pub total_renders: u64,
    pub elapsed_secs: f64,
    /// Per-iteration grid-cell policy marginals, recorded after each
    /// policy update on grid tasks (empty otherwise).
    pub heatmaps: Vec<Vec<S>>,
}

pub const METRICS_CSV_HEADER: &str =
    "iter,target_acc,target_loss,source_loss,mean_reward,entropy,seed";

impl<S: Real> RunMetrics<S> {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.iter, r.target_acc, r.target_loss, r.source_loss, r.mean_reward, r.entropy,
                self.seed
            ));
        }
        out
    }
}

/// Labeled data as the loops consume it.
pub type Dataset<S> = Vec<(Tensor<S>, SampleLabel)>;

/// The loss matching a task: plain cross-entropy for single-object color
/// labels, per-cell cross-entropy over (empty + class) states for grids.
pub fn loss_kind_for<S: Real>(space: &RenderSpace<S>) -> LossKind {
    match space.task {
        Task::ShapeColor => LossKind::CrossEntropy,
        Task::GridSpawn => LossKind::PerCellCrossEntropy {
            cells: space.grid_rows * space.grid_cols,
            classes: space.classes + 1,
        },
    }
}

/// Learner input width for a rendering space.
pub fn input_dim_for<S: Real>(space: &RenderSpace<S>) -> usize {
    space.height * space.width * 3
}

/// Learner output width for a rendering space.
pub fn output_dim_for<S: Real>(space: &RenderSpace<S>) -> usize {
    match space.task {
        Task::ShapeColor => space.palette.len(),
        Task::GridSpawn => space.grid_rows * space.grid_cols * (space.classes + 1),
    }
}

/// Fresh two-way domain classifier over learner features, with a zeroed
/// output layer (uniform initial estimate, label-symmetric early training).
pub fn domain_classifier<S: Real>(
    feature_dim: usize,
    hidden: usize,
    seed: u64,
) -> Result<LearnerState<S>> {
    let mut d = LearnerState::mlp(feature_dim, &[hidden], 2, seed)?;
    d.zero_final_layer();
    Ok(d)
}

/// Reward for one rendered sample: the learner's loss under the configured
/// sign. Zero loss gives zero reward under either sign.
pub fn compute_reward<S: Real>(
    h: &LearnerState<S>,
    sample: &LabeledSample<S>,
    kind: LossKind,
    sign: RewardSign,
) -> Result<S> {
    let (logits, _) = h.forward(&sample.image)?;
    let label = SampleLabel::from_render(&sample.label);
    Ok(sign.apply(loss_value(kind, &logits, &label)?))
}

/// Per-cell rewards for a grid scene: for every occupied cell, the pair of
/// its flat policy-cell index and the signed cross-entropy of that cell's
/// prediction.
pub fn compute_cell_rewards<S: Real>(
    h: &LearnerState<S>,
    sample: &LabeledSample<S>,
    space: &RenderSpace<S>,
    sign: RewardSign,
) -> Result<Vec<(usize, S)>> {
    let (logits, _) = h.forward(&sample.image)?;
    let label = SampleLabel::from_render(&sample.label);
    let SampleLabel::Cells(truth) = &label else {
        return Err(Error::InvalidLabel("cell rewards need a grid label".into()));
    };
    let losses = per_cell_losses(&logits, truth, space.classes + 1)?;
    let mut out = Vec::new();
    for (grid_cell, (&t, &ce)) in truth.iter().zip(losses.iter()).enumerate() {
        if t > 0 {
            let class = t - 1;
            out.push((grid_cell * space.classes + class, sign.apply(ce)));
        }
    }
    Ok(out)
}

/// One epoch of balanced two-way training for the domain classifier:
/// source features labeled 0, target features labeled 1, paired per step.
/// Returns the held-in accuracy over all provided features.
pub fn train_domain_classifier<S: Real>(
    d: &mut LearnerState<S>,
    source_feats: &[Vec<S>],
    target_feats: &[Vec<S>],
    lr: S,
) -> Result<S> {
    if source_feats.is_empty() || target_feats.is_empty() {
        return Err(Error::InvalidInput(
            "domain classifier needs features on both sides".into(),
        ));
    }
    let dim = d.input_dim();
    for f in source_feats.iter().chain(target_feats.iter()) {
        if f.len() != dim {
            return Err(Error::ShapeMismatch(format!(
                "feature width {} does not match classifier input {dim}",
                f.len()
            )));
        }
    }
    let steps = source_feats.len().max(target_feats.len());
    for i in 0..steps {
        let s = Tensor::from_vec(source_feats[i % source_feats.len()].clone());
        let t = Tensor::from_vec(target_feats[i % target_feats.len()].clone());
        let batch = [
            (&s, &SampleLabel::Class(0)),
            (&t, &SampleLabel::Class(1)),
        ];
        let (grads, _) = d.backward_batch(&batch, LossKind::CrossEntropy)?;
        d.sgd_step(&grads, lr)?;
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    for (feats, label) in [(source_feats, 0usize), (target_feats, 1usize)] {
        for f in feats {
            let (logits, _) = d.forward(&Tensor::from_vec(f.clone()))?;
            total += 1;
            if crate::learner::argmax(&logits) == label {
                correct += 1;
            }
        }
    }
    Ok(real_of_usize::<S>(correct) / real_of_usize(total))
}

/// Uniform draw of one flat parameter cell.
pub fn sample_uniform_cell<S: Real>(space: &RenderSpace<S>, rng: &mut impl Rng) -> usize {
    rng.gen_range(0..space.cardinality())
}

/// Uniform draw of a grid scene: object count uniform in the legal range,
/// then i.i.d. cell draws with occupied grid cells rejected.
pub fn sample_uniform_scene<S: Real>(
    space: &RenderSpace<S>,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    let grid = space.grid_rows * space.grid_cols;
    let n_max = MAX_PLACEMENTS.min(grid);
    if n_max < MIN_PLACEMENTS {
        return Err(Error::InvalidParameter(
            "grid too small for minimum placement count".into(),
        ));
    }
    let n = rng.gen_range(MIN_PLACEMENTS..=n_max);
    let mut occupied = vec![false; grid];
    let mut cells = Vec::with_capacity(n);
    while cells.len() < n {
        let cell = rng.gen_range(0..space.cardinality());
        let g = cell / space.classes;
        if !occupied[g] {
            occupied[g] = true;
            cells.push(cell);
        }
    }
    Ok(cells)
}

/// Render the sample described by a draw's cells: one flat parameter cell
/// for the single-shape task, a collision-free cell set for the grid task.
pub fn render_cells<S: Real>(
    space: &RenderSpace<S>,
    cells: &[usize],
    noise_seed: u64,
) -> Result<LabeledSample<S>> {
    match space.task {
        Task::ShapeColor => {
            let p = space.shape_params_from_cell(cells[0], noise_seed)?;
            render_shape(&p, space)
        }
        Task::GridSpawn => {
            let placements: Result<Vec<Placement>> = cells
                .iter()
                .map(|&c| space.placement_from_cell(c))
                .collect();
            render_grid_scene(
                &GridSceneParams {
                    placements: placements?,
                    noise_seed,
                },
                space,
            )
        }
    }
}

/// Frozen-classifier context threaded through the learner's training step
/// in the domain-adaptation variant.
struct DaTrainContext<'a, S> {
    probe: &'a LearnerState<S>,
    w3: S,
    w4: S,
}

/// Linear learning-rate schedule over the run.
fn scheduled_lr<S: Real>(lr0: S, decay: S, iter: usize, total: usize) -> S {
    if total <= 1 {
        return lr0;
    }
    let frac: S = real((iter - 1) as f64 / (total - 1) as f64);
    lr0 * (S::one() - decay * frac)
}

/// Train the learner for `epochs` passes over `data` in seeded-shuffled
/// minibatches; returns the mean supervised loss over all processed
/// samples. With a DA context, each sample's gradient is
/// `w3 * dL/d(logits)` plus `w4 * d(log D)/d(features)` injected at the
/// feature layer, with the classifier frozen; the returned loss still
/// reports the plain distance term so runs stay comparable.
fn train_learner<S: Real>(
    h: &mut LearnerState<S>,
    data: &Dataset<S>,
    kind: LossKind,
    lr: S,
    epochs: usize,
    batch_size: usize,
    shuffle_seed: u64,
    da: Option<&DaTrainContext<'_, S>>,
) -> Result<S> {
    let mut loss_sum = S::zero();
    let mut loss_count = 0usize;
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..epochs {
        let mut rng = rng_from(derive_seed(shuffle_seed, epoch as u64));
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            match da {
                Some(ctx) if ctx.w4 != S::zero() => {
                    let mut grads = Gradients::zeros_like(h);
                    let mut probe_scratch = Gradients::zeros_like(ctx.probe);
                    for &idx in chunk {
                        let (x, label) = &data[idx];
                        let cache = h.forward_cached(x)?;
                        let (d_val, mut logit_grad) = loss_and_grad(kind, cache.logits(), label)?;
                        loss_sum += d_val;
                        loss_count += 1;
                        for g in logit_grad.iter_mut() {
                            *g *= ctx.w3;
                        }
                        // d(log P_target)/d(probe logits) = onehot(1) - p.
                        let feat = Tensor::from_vec(cache.features().to_vec());
                        let pcache = ctx.probe.forward_cached(&feat)?;
                        let p = crate::learner::softmax(pcache.logits());
                        let plogit_grad = vec![ctx.w4 * -p[0], ctx.w4 * (S::one() - p[1])];
                        let extra = ctx.probe.backward_from_logit_grad(
                            &pcache,
                            &plogit_grad,
                            None,
                            &mut probe_scratch,
                        )?;
                        h.backward_from_logit_grad(&cache, &logit_grad, Some(&extra), &mut grads)?;
                    }
                    grads.scale(S::one() / real_of_usize(chunk.len()));
                    h.sgd_step(&grads, lr)?;
                }
                _ => {
                    let w3 = da.map(|ctx| ctx.w3).unwrap_or_else(S::one);
                    let batch: Vec<(&Tensor<S>, &SampleLabel)> =
                        chunk.iter().map(|&i| (&data[i].0, &data[i].1)).collect();
                    let (mut grads, mean) = h.backward_batch(&batch, kind)?;
                    loss_sum += mean * real_of_usize(chunk.len());
                    loss_count += chunk.len();
                    if w3 != S::one() {
                        grads.scale(w3);
                    }
                    h.sgd_step(&grads, lr)?;
                }
            }
        }
    }
    Ok(loss_sum / real_of_usize(loss_count.max(1)))
}

/// Mean supervised loss without any update (for frozen-learner metrics).
fn mean_loss_only<S: Real>(h: &LearnerState<S>, data: &Dataset<S>, kind: LossKind) -> Result<S> {
    let mut sum = S::zero();
    for (x, label) in data {
        let cache = h.forward_cached(x)?;
        sum += loss_value(kind, cache.logits(), label)?;
    }
    Ok(sum / real_of_usize(data.len().max(1)))
}

/// Uniform-randomization baseline (the comparison anchor).
pub fn run_dr<S: Real>(
    cfg: &DrConfig<S>,
    space: &RenderSpace<S>,
    h: &mut LearnerState<S>,
    target: &Dataset<S>,
) -> Result<RunMetrics<S>> {
    cfg.validate()?;
    space.validate()?;
    if target.is_empty() {
        return Err(Error::InvalidInput("empty target set".into()));
    }
    let started = Instant::now();
    let kind = loss_kind_for(space);
    let uniform_stream = stream_seed(cfg.seed, Stream::UniformSample);
    let render_stream = stream_seed(cfg.seed, Stream::Render);
    let shuffle_stream = stream_seed(cfg.seed, Stream::Shuffle);
    let mut metrics = RunMetrics {
        records: Vec::with_capacity(cfg.iterations),
        seed: cfg.seed,
        total_renders: 0,
        elapsed_secs: 0.0,
        heatmaps: Vec::new(),
    };
    // Uniform sampling entropy is constant: ln(cardinality).
    let entropy: S = real((space.cardinality() as f64).ln());
    for iter in 1..=cfg.iterations {
        let mut rng = rng_from(derive_seed(uniform_stream, iter as u64));
        let iter_render = derive_seed(render_stream, iter as u64);
        let mut data: Dataset<S> = Vec::with_capacity(cfg.m);
        for j in 0..cfg.m {
            let cells = match space.task {
                Task::ShapeColor => vec![sample_uniform_cell(space, &mut rng)],
                Task::GridSpawn => sample_uniform_scene(space, &mut rng)?,
            };
            let sample = render_cells(space, &cells, derive_seed(iter_render, j as u64))?;
            metrics.total_renders += 1;
            data.push((sample.image, SampleLabel::from_render(&sample.label)));
        }
        let lr = scheduled_lr(cfg.learner_lr, cfg.lr_decay, iter, cfg.iterations);
        let source_loss = if lr > S::zero() {
            train_learner(
                h,
                &data,
                kind,
                lr,
                cfg.epochs,
                cfg.batch_size,
                derive_seed(shuffle_stream, iter as u64),
                None,
            )?
        } else {
            mean_loss_only(h, &data, kind)?
        };
        let report = h.evaluate(target, kind)?;
        metrics.records.push(IterationRecord {
            iter,
            target_acc: report.accuracy,
            target_loss: report.mean_loss,
            source_loss,
            // The uniform sampler sees no rewards; report the loss it
            // would have been paid, keeping columns comparable.
            mean_reward: source_loss,
            entropy,
        });
    }
    metrics.elapsed_secs = started.elapsed().as_secs_f64();
    Ok(metrics)
}

/// Optional domain-adaptation attachments for the policy loop.
struct DaParts<'a, S> {
    probe: &'a mut LearnerState<S>,
    pool: &'a [Tensor<S>],
    w1: S,
    w2: S,
    w3: S,
    w4: S,
    d_lr: S,
}

/// Adversarial policy loop.
pub fn run_vadra<S: Real>(
    cfg: &VadraConfig<S>,
    space: &RenderSpace<S>,
    h: &mut LearnerState<S>,
    pi: &mut PolicyState<S>,
    target: &Dataset<S>,
) -> Result<RunMetrics<S>> {
    cfg.validate()?;
    run_policy_loop(cfg, None, space, h, pi, target)
}

/// Adversarial policy loop with unlabeled-target domain adaptation.
/// `pool` holds target images only — no labels of the target domain ever
/// reach the learner.
pub fn run_vadra_da<S: Real>(
    cfg: &DaConfig<S>,
    space: &RenderSpace<S>,
    h: &mut LearnerState<S>,
    pi: &mut PolicyState<S>,
    probe: &mut LearnerState<S>,
    pool: &[Tensor<S>],
    target: &Dataset<S>,
) -> Result<RunMetrics<S>> {
    cfg.validate()?;
    if pool.is_empty() {
        return Err(Error::InvalidInput("empty unlabeled target pool".into()));
    }
    if probe.input_dim() != h.feature_dim() {
        return Err(Error::ShapeMismatch(format!(
            "domain classifier reads {} features, learner produces {}",
            probe.input_dim(),
            h.feature_dim()
        )));
    }
    let parts = DaParts {
        probe,
        pool,
        w1: cfg.w1,
        w2: cfg.w2,
        w3: cfg.w3,
        w4: cfg.w4,
        d_lr: cfg.d_lr,
    };
    run_policy_loop(&cfg.base, Some(parts), space, h, pi, target)
}

fn run_policy_loop<S: Real>(
    cfg: &VadraConfig<S>,
    mut da: Option<DaParts<'_, S>>,
    space: &RenderSpace<S>,
    h: &mut LearnerState<S>,
    pi: &mut PolicyState<S>,
    target: &Dataset<S>,
) -> Result<RunMetrics<S>> {
    space.validate()?;
    if pi.cells() != space.cardinality() {
        return Err(Error::Config(format!(
            "policy has {} cells but the parameter space has {}",
            pi.cells(),
            space.cardinality()
        )));
    }
    if target.is_empty() {
        return Err(Error::InvalidInput("empty target set".into()));
    }
    let started = Instant::now();
    let kind = loss_kind_for(space);
    let policy_stream = stream_seed(cfg.seed, Stream::PolicySample);
    let render_stream = stream_seed(cfg.seed, Stream::Render);
    let shuffle_stream = stream_seed(cfg.seed, Stream::Shuffle);
    let domain_stream = stream_seed(cfg.seed, Stream::DomainClassifier);
    let grid = space.grid_rows * space.grid_cols;
    let n_max = MAX_PLACEMENTS.min(grid);
    let mut metrics = RunMetrics {
        records: Vec::with_capacity(cfg.iterations),
        seed: cfg.seed,
        total_renders: 0,
        elapsed_secs: 0.0,
        heatmaps: Vec::new(),
    };
    for iter in 1..=cfg.iterations {
        let mut rng = rng_from(derive_seed(policy_stream, iter as u64));
        let iter_render = derive_seed(render_stream, iter as u64);
        let draw_batch = |pi: &PolicyState<S>,
                              rng: &mut rand_chacha::ChaCha8Rng,
                              count: usize|
         -> Result<Vec<ThetaDraw<S>>> {
            match space.task {
                Task::ShapeColor => Ok(pi.sample(rng, count)),
                Task::GridSpawn => (0..count)
                    .map(|_| {
                        let n = rng.gen_range(MIN_PLACEMENTS..=n_max);
                        pi.sample_scene(rng, space.grid_rows, space.grid_cols, n)
                    })
                    .collect(),
            }
        };

        // Learner phase: m1 policy draws, rendered and trained on.
        let draws1 = draw_batch(pi, &mut rng, cfg.m1)?;
        let mut data1: Dataset<S> = Vec::with_capacity(cfg.m1);
        for (j, draw) in draws1.iter().enumerate() {
            let sample = render_cells(space, &draw.cells, derive_seed(iter_render, j as u64))?;
            metrics.total_renders += 1;
            data1.push((sample.image, SampleLabel::from_render(&sample.label)));
        }
        let lr = scheduled_lr(cfg.learner_lr, cfg.lr_decay, iter, cfg.iterations);
        let source_loss = if data1.is_empty() {
            S::nan()
        } else if lr > S::zero() {
            let ctx = da.as_ref().map(|p| DaTrainContext {
                probe: &*p.probe,
                w3: p.w3,
                w4: p.w4,
            });
            train_learner(
                h,
                &data1,
                kind,
                lr,
                cfg.epochs,
                cfg.batch_size,
                derive_seed(shuffle_stream, iter as u64),
                ctx.as_ref(),
            )?
        } else {
            mean_loss_only(h, &data1, kind)?
        };

        // Domain-classifier phase: balanced features from this iteration's
        // renders (label 0) and the unlabeled pool (label 1).
        if let Some(parts) = da.as_mut() {
            if !data1.is_empty() {
                let mut src_feats = Vec::with_capacity(data1.len());
                for (x, _) in &data1 {
                    let (_, f) = h.forward(x)?;
                    src_feats.push(f);
                }
                let mut pool_rng = rng_from(derive_seed(domain_stream, iter as u64));
                let mut tgt_feats = Vec::with_capacity(data1.len());
                for _ in 0..data1.len() {
                    let pick = pool_rng.gen_range(0..parts.pool.len());
                    let (_, f) = h.forward(&parts.pool[pick])?;
                    tgt_feats.push(f);
                }
                train_domain_classifier(parts.probe, &src_feats, &tgt_feats, parts.d_lr)?;
            }
        }

        // Policy phase: m2 scored draws.
        let mut mean_reward = S::nan();
        if cfg.m2 > 0 {
            let draws2 = draw_batch(pi, &mut rng, cfg.m2)?;
            let mut update_draws: Vec<ThetaDraw<S>> = Vec::new();
            let mut rewards: Vec<S> = Vec::new();
            for (j, draw) in draws2.iter().enumerate() {
                let sample =
                    render_cells(space, &draw.cells, derive_seed(iter_render, (cfg.m1 + j) as u64))?;
                metrics.total_renders += 1;
                let domain_term = match da.as_ref() {
                    Some(parts) if parts.w2 != S::zero() => {
                        let (_, feat) = h.forward(&sample.image)?;
                        Some(parts.w2 * target_probability(parts.probe, &feat)?.ln())
                    }
                    _ => None,
                };
                match space.task {
                    Task::ShapeColor => {
                        let base = match da.as_ref() {
                            Some(parts) => parts.w1
                                * compute_reward(h, &sample, kind, RewardSign::LossAsReward)?,
                            None => compute_reward(h, &sample, kind, RewardSign::LossAsReward)?,
                        };
                        let mut r = cfg.reward_sign.apply(base);
                        if let Some(dterm) = domain_term {
                            r += dterm;
                        }
                        update_draws.push(draw.clone());
                        rewards.push(r);
                    }
                    Task::GridSpawn => {
                        // Per-cell decomposition: each occupied cell becomes
                        // its own single-cell draw with its own reward.
                        let w1 = da.as_ref().map(|p| p.w1).unwrap_or_else(S::one);
                        for (cell, ce) in
                            compute_cell_rewards(h, &sample, space, RewardSign::LossAsReward)?
                        {
                            let mut r = cfg.reward_sign.apply(w1 * ce);
                            if let Some(dterm) = domain_term {
                                r += dterm;
                            }
                            update_draws.push(ThetaDraw {
                                cells: vec![cell],
                                log_prob: S::zero(),
                            });
                            rewards.push(r);
                        }
                    }
                }
            }
            if !rewards.is_empty() {
                let mut sum = S::zero();
                for &r in &rewards {
                    sum += r;
                }
                mean_reward = sum / real_of_usize(rewards.len());
                if cfg.policy_lr > S::zero() {
                    let mut grad = pi.reinforce_grad(&update_draws, &rewards)?;
                    if cfg.entropy_bonus > S::zero() {
                        for (g, e) in grad.iter_mut().zip(pi.entropy_grad().iter()) {
                            *g += cfg.entropy_bonus * *e;
                        }
                    }
                    pi.step(&grad, cfg.policy_lr)?;
                }
                pi.update_baseline(&rewards)?;
            }
        }

        let report = h.evaluate(target, kind)?;
        metrics.records.push(IterationRecord {
            iter,
            target_acc: report.accuracy,
            target_loss: report.mean_loss,
            source_loss,
            mean_reward,
            entropy: pi.entropy(),
        });
        if space.task == Task::GridSpawn {
            metrics
                .heatmaps
                .push(pi.to_heatmap(space.grid_rows, space.grid_cols)?);
        }
    }
    metrics.elapsed_secs = started.elapsed().as_secs_f64();
    Ok(metrics)
}
