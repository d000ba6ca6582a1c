//! Optimization loop: Adam with bias correction, a staircase learning-rate
//! schedule, elementwise gradient clipping, and batched training over scene
//! windows with per-window gradients evaluated in parallel.
//!
//! Determinism contract: given the same seed, dataset, and configuration,
//! training produces bitwise-identical parameters and loss curves at any
//! worker count. Per-batch gradients are collected in window order and
//! reduced sequentially, so no floating-point sum depends on scheduling.

use crate::autodiff::{Tape, Tensor};
use crate::config::{sub_seed, RunConfig};
use crate::data::SceneWindow;
use crate::graph::FrameObservation;
use crate::model::{
    ed_rollout, rollout, EncoderDecoderModel, InteractionModel, ModelDims, ModelMode, Phase,
    RolloutConfig, StepPrediction,
};
use crate::nn::{save_checkpoint, Checkpoint, ParamBinding, ParamRegistry};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::path::Path;

/// Which trainable model a run optimizes. The three interaction variants
/// share one parameter layout; ablations differ only in the forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Interaction(ModelMode),
    EncoderDecoder,
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ed_baseline" => Ok(ModelKind::EncoderDecoder),
            other => ModelMode::parse(other).map(ModelKind::Interaction).map_err(|_| {
                Error::Config(format!(
                    "unknown trainable method {other:?} (expected full, no_category_layer, \
                     no_self_attention, or ed_baseline)"
                ))
            }),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Interaction(mode) => mode.name(),
            ModelKind::EncoderDecoder => "ed_baseline",
        }
    }
}

/// Hyperparameters of one optimization run.
#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Aggregated gradients are clamped to `[-clip, clip]` elementwise.
    pub clip: f64,
    pub seed: u64,
    pub t_obs: usize,
    pub t_pred: usize,
    pub radius: f64,
    pub decay_factor: f64,
    /// Epochs between staircase learning-rate drops.
    pub decay_every: usize,
    /// Threads for window gradient evaluation; 0 uses the process default.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 8,
            clip: 10.0,
            seed: 1,
            t_obs: 5,
            t_pred: 13,
            radius: f64::INFINITY,
            decay_factor: 0.95,
            decay_every: 5,
            workers: 0,
        }
    }
}

impl TrainConfig {
    pub fn from_run(cfg: &RunConfig) -> Self {
        TrainConfig {
            learning_rate: cfg.learning_rate,
            batch_size: cfg.batch_size,
            clip: cfg.clip,
            seed: cfg.seed,
            t_obs: cfg.t_obs,
            t_pred: cfg.t_pred,
            radius: cfg.radius,
            decay_factor: cfg.decay_factor,
            decay_every: cfg.decay_every,
            workers: cfg.workers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !self.clip.is_finite() || self.clip <= 0.0 {
            return Err(Error::Config(format!("clip bound must be positive, got {}", self.clip)));
        }
        if self.t_obs < 1 || self.t_obs >= self.t_pred {
            return Err(Error::Config(format!(
                "need 1 <= t_obs < t_pred, got t_obs {} and t_pred {}",
                self.t_obs, self.t_pred
            )));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config(format!(
                "decay factor must be in (0, 1], got {}",
                self.decay_factor
            )));
        }
        if self.decay_every < 1 {
            return Err(Error::Config("decay interval must be at least 1 epoch".into()));
        }
        Ok(())
    }
}

/// Adam accumulators plus the learning-rate schedule they advance.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub base_lr: f64,
    pub decay_factor: f64,
    /// Optimizer steps between staircase drops.
    decay_interval: u64,
}

impl OptimizerState {
    pub fn new(
        registry: &ParamRegistry,
        base_lr: f64,
        decay_factor: f64,
        decay_interval: u64,
    ) -> Self {
        let m = registry.iter().map(|p| Tensor::zeros(p.value.shape())).collect::<Vec<_>>();
        let v = m.clone();
        OptimizerState {
            m,
            v,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            base_lr,
            decay_factor,
            decay_interval: decay_interval.max(1),
        }
    }

    pub fn with_step(mut self, step: u64) -> Self {
        self.step = step;
        self
    }

    /// Completed optimizer steps.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_decay_interval(&mut self, steps: u64) {
        self.decay_interval = steps.max(1);
    }

    /// Rate the next step will use: base shrunk once per completed interval.
    pub fn learning_rate(&self) -> f64 {
        let drops = (self.step / self.decay_interval).min(i32::MAX as u64) as i32;
        self.base_lr * self.decay_factor.powi(drops)
    }
}

/// Clamps every gradient element to `[lo, hi]` in place.
pub fn clip_gradients(grads: &mut [Tensor], lo: f64, hi: f64) {
    assert!(lo <= hi, "clip bounds out of order: [{lo}, {hi}]");
    for g in grads {
        for x in g.data_mut() {
            *x = x.clamp(lo, hi);
        }
    }
}

/// One Adam update with bias correction. Gradients must be aligned with the
/// registry, one tensor per parameter in registration order.
pub fn adam_step(
    registry: &mut ParamRegistry,
    grads: &[Tensor],
    opt: &mut OptimizerState,
) -> Result<()> {
    if grads.len() != registry.tensor_count() {
        return Err(Error::Internal(format!(
            "gradient count {} does not match parameter count {}",
            grads.len(),
            registry.tensor_count()
        )));
    }
    let lr = opt.learning_rate();
    let t = opt.step.saturating_add(1).min(i32::MAX as u64) as i32;
    let bias1 = 1.0 - opt.beta1.powi(t);
    let bias2 = 1.0 - opt.beta2.powi(t);

    for i in 0..grads.len() {
        let param = registry.param_mut(i);
        if grads[i].shape() != param.value.shape() {
            return Err(Error::Internal(format!(
                "gradient shape {:?} does not match parameter {} shape {:?}",
                grads[i].shape(),
                param.name,
                param.value.shape()
            )));
        }
        let g = grads[i].data();
        let m = opt.m[i].data_mut();
        let v = opt.v[i].data_mut();
        let theta = param.value.data_mut();
        for j in 0..g.len() {
            m[j] = opt.beta1 * m[j] + (1.0 - opt.beta1) * g[j];
            v[j] = opt.beta2 * v[j] + (1.0 - opt.beta2) * g[j] * g[j];
            let m_hat = m[j] / bias1;
            let v_hat = v[j] / bias2;
            theta[j] -= lr * m_hat / (v_hat.sqrt() + opt.epsilon);
        }
        if !param.value.all_finite() {
            return Err(Error::NonFinite(format!(
                "parameter {} became non-finite during the optimizer step",
                param.name
            )));
        }
    }
    opt.step += 1;
    Ok(())
}

/// Parameters, optimizer, and progress counters of a training run.
pub struct TrainState {
    pub kind: ModelKind,
    pub dims: ModelDims,
    pub shared_summary: bool,
    pub registry: ParamRegistry,
    pub optimizer: OptimizerState,
    /// Completed epochs.
    pub epoch: usize,
}

impl TrainState {
    /// Fresh parameters drawn from the run's init sub-seed.
    pub fn new(
        kind: ModelKind,
        dims: ModelDims,
        shared_summary: bool,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, "init"));
        let mut registry = ParamRegistry::new();
        match kind {
            ModelKind::Interaction(_) => {
                InteractionModel::init(&mut registry, dims, shared_summary, &mut rng)?;
            }
            ModelKind::EncoderDecoder => {
                EncoderDecoderModel::init(&mut registry, dims.embed, dims.node_hidden, &mut rng)?;
            }
        }
        let optimizer = OptimizerState::new(&registry, cfg.learning_rate, cfg.decay_factor, 1);
        Ok(TrainState { kind, dims, shared_summary, registry, optimizer, epoch: 0 })
    }

    /// Restores parameters and progress counters from a checkpoint. Adam
    /// moment accumulators are not persisted; they restart at zero.
    pub fn from_checkpoint(ck: Checkpoint, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let kind = ModelKind::parse(ck.require("kind")?)?;
        let dims = ModelDims {
            embed: parse_meta(&ck, "embed")?,
            edge_hidden: parse_meta(&ck, "edge_hidden")?,
            node_hidden: parse_meta(&ck, "node_hidden")?,
            attention: parse_meta(&ck, "attention")?,
        };
        let shared_summary = ck.require("shared_summary")? == "true";
        let step: u64 = parse_meta(&ck, "step")?;
        let epoch: usize = parse_meta(&ck, "epoch")?;
        match kind {
            ModelKind::Interaction(_) => {
                InteractionModel::resolve(&ck.registry)?;
            }
            ModelKind::EncoderDecoder => {
                EncoderDecoderModel::resolve(&ck.registry)?;
            }
        }
        let optimizer =
            OptimizerState::new(&ck.registry, cfg.learning_rate, cfg.decay_factor, 1)
                .with_step(step);
        Ok(TrainState { kind, dims, shared_summary, registry: ck.registry, optimizer, epoch })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut meta = BTreeMap::new();
        meta.insert("kind".to_string(), self.kind.name().to_string());
        meta.insert("embed".to_string(), self.dims.embed.to_string());
        meta.insert("edge_hidden".to_string(), self.dims.edge_hidden.to_string());
        meta.insert("node_hidden".to_string(), self.dims.node_hidden.to_string());
        meta.insert("attention".to_string(), self.dims.attention.to_string());
        meta.insert("shared_summary".to_string(), self.shared_summary.to_string());
        meta.insert("step".to_string(), self.optimizer.step_count().to_string());
        meta.insert("epoch".to_string(), self.epoch.to_string());
        save_checkpoint(path, &meta, &self.registry)
    }
}

fn parse_meta<T: std::str::FromStr>(ck: &Checkpoint, key: &str) -> Result<T> {
    ck.require(key)?
        .parse()
        .map_err(|_| Error::Validation(format!("checkpoint metadata {key:?} is not a number")))
}

/// One row of the training curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_nll: f64,
    pub lr: f64,
}

pub fn write_loss_csv(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut out = String::from("epoch,mean_nll,lr\n");
    for r in records {
        out.push_str(&format!("{},{},{}\n", r.epoch, r.mean_nll, r.lr));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Forward pass of a trained model on one window; no tape kept.
pub fn predict_window(
    kind: ModelKind,
    registry: &ParamRegistry,
    frames: &[FrameObservation],
    rcfg: &RolloutConfig,
) -> Result<BTreeMap<u64, Vec<StepPrediction>>> {
    let mut tape = Tape::new();
    let binding = ParamBinding::bind(&mut tape, registry);
    let result = match kind {
        ModelKind::Interaction(_) => {
            let model = InteractionModel::resolve(registry)?;
            rollout(&mut tape, &binding, &model, frames, rcfg)?
        }
        ModelKind::EncoderDecoder => {
            let model = EncoderDecoderModel::resolve(registry)?;
            ed_rollout(&mut tape, &binding, &model, frames, rcfg)?
        }
    };
    Ok(result.predictions)
}

/// Loss and parameter gradients for one window, or `None` when no agent in
/// the window qualifies for the loss.
fn window_gradients(
    kind: ModelKind,
    registry: &ParamRegistry,
    window: &SceneWindow,
    cfg: &TrainConfig,
) -> Result<Option<(Vec<Tensor>, f64)>> {
    let rcfg = RolloutConfig {
        t_obs: cfg.t_obs,
        t_pred: cfg.t_pred,
        mode: match kind {
            ModelKind::Interaction(mode) => mode,
            ModelKind::EncoderDecoder => ModelMode::Full,
        },
        phase: Phase::Train,
        radius: cfg.radius,
        sample_seed: None,
    };
    let mut tape = Tape::new();
    let binding = ParamBinding::bind(&mut tape, registry);
    let result = match kind {
        ModelKind::Interaction(_) => {
            let model = InteractionModel::resolve(registry)?;
            rollout(&mut tape, &binding, &model, &window.frames, &rcfg)?
        }
        ModelKind::EncoderDecoder => {
            let model = EncoderDecoderModel::resolve(registry)?;
            ed_rollout(&mut tape, &binding, &model, &window.frames, &rcfg)?
        }
    };
    let Some(loss) = result.loss else {
        return Ok(None);
    };
    let value = tape.value(loss).at(0);
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("training loss is {value}")));
    }
    let grads = tape.backward(loss)?;
    Ok(Some((binding.parameter_gradients(registry, &grads), value)))
}

/// Adds context so a numeric failure names the window that caused it.
fn describe_window(e: Error, window: &SceneWindow) -> Error {
    match e {
        Error::NonFinite(msg) => Error::NonFinite(format!(
            "window starting at frame {} ({} frames, {} agents in frame 0): {msg}",
            window.start_frame,
            window.frames.len(),
            window.frames.first().map_or(0, |f| f.agents().len()),
        )),
        other => other,
    }
}

/// Runs `epochs` additional epochs over `windows`, mutating `state` in
/// place. Returns one record per epoch with the epoch's mean window NLL and
/// the learning rate in force.
pub fn train_epochs(
    state: &mut TrainState,
    windows: &[SceneWindow],
    cfg: &TrainConfig,
    epochs: usize,
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if windows.is_empty() {
        return Err(Error::Usage("training needs at least one window".into()));
    }
    for (i, w) in windows.iter().enumerate() {
        if w.frames.len() != cfg.t_pred {
            return Err(Error::Usage(format!(
                "window {i} has {} frames, expected t_pred = {}",
                w.frames.len(),
                cfg.t_pred
            )));
        }
    }
    let steps_per_epoch = windows.len().div_ceil(cfg.batch_size) as u64;
    state.optimizer.set_decay_interval(cfg.decay_every as u64 * steps_per_epoch);
    state.optimizer.base_lr = cfg.learning_rate;
    state.optimizer.decay_factor = cfg.decay_factor;

    if cfg.workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::Internal(format!("worker pool: {e}")))?;
        pool.install(|| run_epochs(state, windows, cfg, epochs))
    } else {
        run_epochs(state, windows, cfg, epochs)
    }
}

fn run_epochs(
    state: &mut TrainState,
    windows: &[SceneWindow],
    cfg: &TrainConfig,
    epochs: usize,
) -> Result<Vec<EpochRecord>> {
    let shuffle_seed = sub_seed(cfg.seed, "shuffle");
    let mut curve = Vec::with_capacity(epochs);

    for _ in 0..epochs {
        let lr = state.optimizer.learning_rate();
        let mut order: Vec<usize> = (0..windows.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(
            shuffle_seed.wrapping_add((state.epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)),
        );
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<Option<(Vec<Tensor>, f64)>> = batch
                .par_iter()
                .map(|&i| {
                    window_gradients(state.kind, &state.registry, &windows[i], cfg)
                        .map_err(|e| describe_window(e, &windows[i]))
                })
                .collect::<Result<_>>()?;

            let mut total: Option<Vec<Tensor>> = None;
            let mut contributed = 0usize;
            for item in results.into_iter().flatten() {
                let (grads, loss) = item;
                loss_sum += loss;
                loss_count += 1;
                contributed += 1;
                match &mut total {
                    None => total = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                                *x += y;
                            }
                        }
                    }
                }
            }
            let Some(mut grads) = total else { continue };
            let inv = 1.0 / contributed as f64;
            for g in &mut grads {
                for x in g.data_mut() {
                    *x *= inv;
                }
            }
            clip_gradients(&mut grads, -cfg.clip, cfg.clip);
            adam_step(&mut state.registry, &grads, &mut state.optimizer)?;
        }

        if loss_count == 0 {
            return Err(Error::Usage(
                "no window produced a loss; every agent is observed fewer than 2 frames".into(),
            ));
        }
        state.epoch += 1;
        curve.push(EpochRecord {
            epoch: state.epoch,
            mean_nll: loss_sum / loss_count as f64,
            lr,
        });
    }
    Ok(curve)
}
