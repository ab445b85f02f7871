//! Optimizers, learning-rate schedules, and the training loops for the
//! generator pair, the labeler, and the student under each regime (one-hot,
//! plain distillation, and the two exploration modes).

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::autodiff::Tape;
use crate::distill::{
    class_loss_node, distill_loss_node, empirical_distill_risk, empirical_risk,
    misclassification_rate,
};
use crate::error::{Error, Result};
use crate::explore::{generate_tilde_set, ExploreConfig, ExploreMode};
use crate::nets::{self, forward_on_tape, params_on_tape, MlpParams, MlpSpec, ParamMode};
use crate::seeding::{derive_seed, derive_seed2};
use crate::synth::{sample_labeled, ManifoldTask, SampleSet};
use crate::tensor::Tensor;

const STREAM_INIT: u64 = 0x10;
const STREAM_EVAL: u64 = 0x11;
const STREAM_SHUFFLE: u64 = 0x12;
const STREAM_TILDE: u64 = 0x13;
const STREAM_ENC: u64 = 0x14;
const STREAM_DEC: u64 = 0x15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    SgdMomentum,
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "sgd-momentum" => Ok(OptimizerKind::SgdMomentum),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Parse(format!("unknown optimizer `{other}`"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::SgdMomentum => "sgd-momentum",
            OptimizerKind::Adam => "adam",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    Constant,
    Cosine,
    LinearDecay,
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Schedule::Constant),
            "cosine" => Ok(Schedule::Cosine),
            "linear-decay" => Ok(Schedule::LinearDecay),
            other => Err(Error::Parse(format!("unknown schedule `{other}`"))),
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schedule::Constant => "constant",
            Schedule::Cosine => "cosine",
            Schedule::LinearDecay => "linear-decay",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Onehot,
    Distill,
    TgtRandom,
    TgtGradient,
}

impl Method {
    pub fn needs_teacher(&self) -> bool {
        !matches!(self, Method::Onehot)
    }

    pub fn needs_generator(&self) -> bool {
        matches!(self, Method::TgtRandom | Method::TgtGradient)
    }

    pub fn explore_mode(&self) -> Option<ExploreMode> {
        match self {
            Method::TgtRandom => Some(ExploreMode::Random),
            Method::TgtGradient => Some(ExploreMode::Gradient),
            _ => None,
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "onehot" => Ok(Method::Onehot),
            "distill" => Ok(Method::Distill),
            "tgt-random" => Ok(Method::TgtRandom),
            "tgt-gradient" => Ok(Method::TgtGradient),
            other => Err(Error::Parse(format!("unknown method `{other}`"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Onehot => "onehot",
            Method::Distill => "distill",
            Method::TgtRandom => "tgt-random",
            Method::TgtGradient => "tgt-gradient",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TildeRefresh {
    Epoch,
    Step,
}

impl FromStr for TildeRefresh {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epoch" => Ok(TildeRefresh::Epoch),
            "step" => Ok(TildeRefresh::Step),
            other => Err(Error::Parse(format!("unknown refresh cadence `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_steps: usize,
    pub schedule: Schedule,
    pub seed: u64,
    pub method: Method,
    pub explore: ExploreConfig,
    /// Weights on (supervised, labeled-distill, generated-distill) terms.
    pub term_weights: (f64, f64, f64),
    pub tilde_refresh: TildeRefresh,
    pub temperature: f64,
    /// Held-out evaluation set size (drawn from the task per seed).
    pub eval_n: usize,
}

impl TrainConfig {
    /// Desk-scale student defaults.
    pub fn student_default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::SgdMomentum,
            learning_rate: 0.05,
            momentum: 0.9,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 32,
            epochs: 200,
            warmup_steps: 0,
            schedule: Schedule::Cosine,
            seed: 0,
            method: Method::Distill,
            explore: ExploreConfig::default(),
            term_weights: (1.0, 1.0, 1.0),
            tilde_refresh: TildeRefresh::Epoch,
            temperature: 1.0,
            eval_n: 2000,
        }
    }

    /// Autoencoder training defaults.
    pub fn generator_default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            schedule: Schedule::Constant,
            batch_size: 64,
            epochs: 40,
            ..TrainConfig::student_default()
        }
    }

    /// Labeler training defaults.
    pub fn teacher_default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            schedule: Schedule::Constant,
            batch_size: 64,
            epochs: 15,
            method: Method::Onehot,
            ..TrainConfig::student_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || self.temperature <= 0.0 {
            return Err(Error::InvalidArgument(
                "learning rate and temperature must be positive".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        self.explore.validate()
    }
}

/// Optimizer scratch state sized to a flat parameter vector.
#[derive(Debug, Clone)]
pub struct OptState {
    velocity: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl OptState {
    pub fn new(n: usize) -> Self {
        OptState { velocity: vec![0.0; n], m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

/// One optimizer update in place at learning rate `lr`.
pub fn optimizer_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut OptState,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::SizeMismatch { left: params.len(), right: grads.len() });
    }
    match cfg.optimizer {
        OptimizerKind::Sgd => {
            for (p, g) in params.iter_mut().zip(grads) {
                *p -= lr * g;
            }
        }
        OptimizerKind::SgdMomentum => {
            for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
                *v = cfg.momentum * *v + g;
                *p -= lr * *v;
            }
        }
        OptimizerKind::Adam => {
            state.t += 1;
            let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
            let bc1 = 1.0 - b1.powi(state.t as i32);
            let bc2 = 1.0 - b2.powi(state.t as i32);
            for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
                state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
                let mh = state.m[i] / bc1;
                let vh = state.v[i] / bc2;
                *p -= lr * mh / (vh.sqrt() + cfg.adam_eps);
            }
        }
    }
    Ok(())
}

/// Learning rate at `step` out of `total_steps`: linear warmup into the
/// configured schedule.
pub fn scheduled_lr(cfg: &TrainConfig, step: usize, total_steps: usize) -> f64 {
    let base = cfg.learning_rate;
    if cfg.warmup_steps > 0 && step < cfg.warmup_steps {
        return base * (step + 1) as f64 / cfg.warmup_steps as f64;
    }
    let remaining = total_steps.saturating_sub(cfg.warmup_steps).max(1);
    let progress = step.saturating_sub(cfg.warmup_steps) as f64 / remaining as f64;
    match cfg.schedule {
        Schedule::Constant => base,
        Schedule::Cosine => base * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()),
        Schedule::LinearDecay => base * (1.0 - progress),
    }
}

fn check_finite(what: &str, value: f64) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::NumericFailure(format!("{what} became {value}")));
    }
    Ok(())
}

fn collect_grads(
    taped: &nets::TapedParams,
    grads: &crate::autodiff::Gradients,
    out: &mut Vec<f64>,
) {
    for (w, b) in &taped.param_nodes {
        let gw = grads.get(*w).expect("weight gradient");
        out.extend_from_slice(gw.data());
        let gb = grads.get(*b).expect("bias gradient");
        out.extend_from_slice(gb.data());
    }
}

/// Loss and flat gradient of the student objective on the given batches.
/// Teacher probabilities enter as constants; only student parameters are
/// differentiated.
#[allow(clippy::too_many_arguments)]
fn student_batch_gradient(
    f: &MlpParams,
    h: Option<&MlpParams>,
    s: &SampleSet,
    labeled_idx: &[usize],
    s_tilde: Option<&SampleSet>,
    tilde_idx: &[usize],
    cfg: &TrainConfig,
) -> Result<(f64, Vec<f64>)> {
    let labels = s.labels().ok_or(Error::MissingLabels)?;
    let (w_sup, w_kd, w_tgt) = cfg.term_weights;
    let tau = cfg.temperature;

    let mut tape = Tape::new();
    let f_taped = params_on_tape(f, &mut tape, ParamMode::Trainable);

    let mut labeled_total: Option<crate::autodiff::NodeId> = None;
    for &i in labeled_idx {
        let x = tape.constant(s.instances()[i].clone());
        let logits = forward_on_tape(&f_taped, x, &mut tape)?;
        let mut term = class_loss_node(&mut tape, logits, labels[i], tau)?;
        term = tape.scale(term, w_sup)?;
        if cfg.method.needs_teacher() {
            let h = h.ok_or_else(|| {
                Error::InvalidArgument(format!("method `{}` needs a labeler", cfg.method))
            })?;
            let probs = nets::softmax_probs(&nets::mlp_apply(h, &s.instances()[i])?, tau)?;
            let probs_node = tape.constant(Tensor::vector(probs.probs().to_vec()));
            let kd = distill_loss_node(&mut tape, logits, probs_node, tau)?;
            let kd = tape.scale(kd, w_kd)?;
            term = tape.add(term, kd)?;
        }
        labeled_total = Some(match labeled_total {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    let mut root = tape.scale(
        labeled_total.ok_or_else(|| Error::InvalidArgument("empty batch".into()))?,
        1.0 / labeled_idx.len() as f64,
    )?;

    if cfg.method.needs_generator() && !tilde_idx.is_empty() {
        let tilde = s_tilde.ok_or_else(|| {
            Error::InvalidArgument(format!("method `{}` needs generated samples", cfg.method))
        })?;
        let h = h.expect("generator methods also need the labeler");
        let mut tilde_total: Option<crate::autodiff::NodeId> = None;
        for &j in tilde_idx {
            let x = tape.constant(tilde.instances()[j].clone());
            let logits = forward_on_tape(&f_taped, x, &mut tape)?;
            let probs = nets::softmax_probs(&nets::mlp_apply(h, &tilde.instances()[j])?, tau)?;
            let probs_node = tape.constant(Tensor::vector(probs.probs().to_vec()));
            let kd = distill_loss_node(&mut tape, logits, probs_node, tau)?;
            tilde_total = Some(match tilde_total {
                Some(acc) => tape.add(acc, kd)?,
                None => kd,
            });
        }
        let tilde_mean = tape.scale(
            tilde_total.expect("nonempty tilde batch"),
            w_tgt / tilde_idx.len() as f64,
        )?;
        root = tape.add(root, tilde_mean)?;
    }

    let loss = tape.value(root).item()?;
    check_finite("training loss", loss)?;
    let grads = tape.backward(root)?;
    let mut flat = Vec::with_capacity(f.num_params());
    collect_grads(&f_taped, &grads, &mut flat);
    Ok((loss, flat))
}

/// Full-batch objective value for the configured method (no tape); the
/// plain counterpart of the taped batch gradient.
pub fn student_objective(
    f: &MlpParams,
    h: Option<&MlpParams>,
    s: &SampleSet,
    s_tilde: Option<&SampleSet>,
    cfg: &TrainConfig,
) -> Result<f64> {
    let tau = cfg.temperature;
    let (w_sup, w_kd, w_tgt) = cfg.term_weights;
    let mut total = w_sup * empirical_risk(f, s, tau)?.value;
    if cfg.method.needs_teacher() {
        let h = h.ok_or_else(|| {
            Error::InvalidArgument(format!("method `{}` needs a labeler", cfg.method))
        })?;
        total += w_kd * empirical_distill_risk(f, h, s, tau)?.value;
        if cfg.method.needs_generator() {
            let tilde = s_tilde.ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "method `{}` needs generated samples",
                    cfg.method
                ))
            })?;
            if !tilde.is_empty() {
                total += w_tgt * empirical_distill_risk(f, h, tilde, tau)?.value;
            }
        }
    }
    Ok(total)
}

/// Full-batch gradient of the student objective; exposed for the
/// finite-difference correctness checks.
pub fn student_full_gradient(
    f: &MlpParams,
    h: Option<&MlpParams>,
    s: &SampleSet,
    s_tilde: Option<&SampleSet>,
    cfg: &TrainConfig,
) -> Result<(f64, Vec<f64>)> {
    let all: Vec<usize> = (0..s.len()).collect();
    let tilde_all: Vec<usize> = s_tilde.map_or_else(Vec::new, |t| (0..t.len()).collect());
    student_batch_gradient(f, h, s, &all, s_tilde, &tilde_all, cfg)
}

/// Mean squared reconstruction loss and flat (enc, dec) gradients.
fn generator_batch_gradient(
    enc: &MlpParams,
    dec: &MlpParams,
    xs: &[&Tensor],
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let mut tape = Tape::new();
    let enc_taped = params_on_tape(enc, &mut tape, ParamMode::Trainable);
    let dec_taped = params_on_tape(dec, &mut tape, ParamMode::Trainable);
    let mut total: Option<crate::autodiff::NodeId> = None;
    for x in xs {
        let xn = tape.constant((*x).clone());
        let z = forward_on_tape(&enc_taped, xn, &mut tape)?;
        let recon = forward_on_tape(&dec_taped, z, &mut tape)?;
        let diff = tape.sub(recon, xn)?;
        let sq = tape.mul(diff, diff)?;
        let s = tape.sum(sq)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, s)?,
            None => s,
        });
    }
    let root = tape.scale(
        total.ok_or_else(|| Error::InvalidArgument("empty batch".into()))?,
        1.0 / xs.len() as f64,
    )?;
    let loss = tape.value(root).item()?;
    check_finite("reconstruction loss", loss)?;
    let grads = tape.backward(root)?;
    let mut enc_flat = Vec::with_capacity(enc.num_params());
    collect_grads(&enc_taped, &grads, &mut enc_flat);
    let mut dec_flat = Vec::with_capacity(dec.num_params());
    collect_grads(&dec_taped, &grads, &mut dec_flat);
    Ok((loss, enc_flat, dec_flat))
}

/// Mean reconstruction squared error without a tape.
pub fn reconstruction_loss(enc: &MlpParams, dec: &MlpParams, s: &SampleSet) -> Result<f64> {
    if s.is_empty() {
        return Err(Error::InvalidArgument("empty set".into()));
    }
    let mut total = 0.0;
    for x in s.instances() {
        let recon = nets::mlp_apply(dec, &nets::mlp_apply(enc, x)?)?;
        let diff = crate::tensor::sub(&recon, x)?;
        total += diff.data().iter().map(|v| v * v).sum::<f64>();
    }
    Ok(total / s.len() as f64)
}

fn epoch_batches(n: usize, batch: usize, rng: &mut StdRng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch.min(n).max(1)).map(|c| c.to_vec()).collect()
}

/// Train the autoencoder pair on unlabeled data by minimizing the mean
/// squared reconstruction error. Zero epochs returns the initialization.
pub fn train_generator(
    task: &ManifoldTask,
    s: &SampleSet,
    cfg: &TrainConfig,
) -> Result<(MlpParams, MlpParams)> {
    train_generator_tracked(task, s, cfg).map(|(enc, dec, _)| (enc, dec))
}

/// [`train_generator`] plus a per-epoch history: the risk columns hold the
/// mean squared reconstruction error on the training pool and on a fresh
/// held-out set; the error-rate columns are zero (no labels in play).
pub fn train_generator_tracked(
    task: &ManifoldTask,
    s: &SampleSet,
    cfg: &TrainConfig,
) -> Result<(MlpParams, MlpParams, Vec<EpochStats>)> {
    cfg.validate()?;
    let mut enc = nets::init_params(
        &MlpSpec::encoder(task.ambient_dim, task.latent_dim),
        derive_seed(cfg.seed, STREAM_ENC),
    )?;
    let mut dec = nets::init_params(
        &MlpSpec::decoder(task.latent_dim, task.ambient_dim),
        derive_seed(cfg.seed, STREAM_DEC),
    )?;
    let eval = crate::synth::sample_unlabeled(
        task,
        cfg.eval_n.max(1),
        derive_seed(cfg.seed, STREAM_EVAL),
    )?;
    let mut enc_state = OptState::new(enc.num_params());
    let mut dec_state = OptState::new(dec.num_params());
    let steps_per_epoch = s.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut rng =
            StdRng::seed_from_u64(derive_seed2(cfg.seed, STREAM_SHUFFLE, epoch as u64));
        for batch in epoch_batches(s.len(), cfg.batch_size, &mut rng) {
            let xs: Vec<&Tensor> = batch.iter().map(|&i| &s.instances()[i]).collect();
            let (_, enc_grad, dec_grad) = generator_batch_gradient(&enc, &dec, &xs)?;
            let lr = scheduled_lr(cfg, step, total_steps);
            let mut enc_flat = enc.flatten();
            optimizer_step(&mut enc_flat, &enc_grad, &mut enc_state, cfg, lr)?;
            enc = enc.unflatten(&enc_flat)?;
            let mut dec_flat = dec.flatten();
            optimizer_step(&mut dec_flat, &dec_grad, &mut dec_state, cfg, lr)?;
            dec = dec.unflatten(&dec_flat)?;
            step += 1;
        }
        let train_risk = reconstruction_loss(&enc, &dec, s)?;
        let test_risk = reconstruction_loss(&enc, &dec, &eval)?;
        check_finite("reconstruction risk", train_risk + test_risk)?;
        history.push(EpochStats {
            epoch,
            train_risk,
            test_risk,
            train_err: 0.0,
            test_err: 0.0,
            mean_ld_tilde: None,
        });
    }
    Ok((enc, dec, history))
}

/// Train the labeler by cross-entropy on a (large) labeled pool. Zero
/// epochs returns the initialization.
pub fn train_teacher(task: &ManifoldTask, pool: &SampleSet, cfg: &TrainConfig) -> Result<MlpParams> {
    train_teacher_tracked(task, pool, cfg).map(|(h, _)| h)
}

/// [`train_teacher`] plus a per-epoch history of cross-entropy risks and
/// misclassification rates on the pool and a fresh held-out set.
pub fn train_teacher_tracked(
    task: &ManifoldTask,
    pool: &SampleSet,
    cfg: &TrainConfig,
) -> Result<(MlpParams, Vec<EpochStats>)> {
    cfg.validate()?;
    let labels = pool.labels().ok_or(Error::MissingLabels)?;
    let mut h = nets::init_params(
        &MlpSpec::labeler(task.ambient_dim, task.classes),
        derive_seed(cfg.seed, STREAM_INIT),
    )?;
    let eval = sample_labeled(task, cfg.eval_n.max(1), derive_seed(cfg.seed, STREAM_EVAL))?;
    let mut state = OptState::new(h.num_params());
    let steps_per_epoch = pool.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut rng =
            StdRng::seed_from_u64(derive_seed2(cfg.seed, STREAM_SHUFFLE, epoch as u64));
        for batch in epoch_batches(pool.len(), cfg.batch_size, &mut rng) {
            let mut tape = Tape::new();
            let taped = params_on_tape(&h, &mut tape, ParamMode::Trainable);
            let mut total: Option<crate::autodiff::NodeId> = None;
            for &i in &batch {
                let x = tape.constant(pool.instances()[i].clone());
                let logits = forward_on_tape(&taped, x, &mut tape)?;
                let loss = class_loss_node(&mut tape, logits, labels[i], cfg.temperature)?;
                total = Some(match total {
                    Some(acc) => tape.add(acc, loss)?,
                    None => loss,
                });
            }
            let root = tape.scale(total.expect("nonempty batch"), 1.0 / batch.len() as f64)?;
            check_finite("teacher loss", tape.value(root).item()?)?;
            let grads = tape.backward(root)?;
            let mut grad_flat = Vec::with_capacity(h.num_params());
            collect_grads(&taped, &grads, &mut grad_flat);
            let lr = scheduled_lr(cfg, step, total_steps);
            let mut flat = h.flatten();
            optimizer_step(&mut flat, &grad_flat, &mut state, cfg, lr)?;
            h = h.unflatten(&flat)?;
            step += 1;
        }
        let train_risk = empirical_risk(&h, pool, cfg.temperature)?.value;
        let test_risk = empirical_risk(&h, &eval, cfg.temperature)?.value;
        check_finite("teacher risk", train_risk + test_risk)?;
        history.push(EpochStats {
            epoch,
            train_risk,
            test_risk,
            train_err: misclassification_rate(&h, pool)?,
            test_err: misclassification_rate(&h, &eval)?,
            mean_ld_tilde: None,
        });
    }
    Ok((h, history))
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_risk: f64,
    pub test_risk: f64,
    pub train_err: f64,
    pub test_err: f64,
    /// Mean distillation loss on the freshly generated set; present only
    /// for the exploration methods.
    pub mean_ld_tilde: Option<f64>,
}

/// Train the student under `cfg.method`. Exploration methods regenerate the
/// tilde set from the current student every epoch (or every step when
/// configured); the per-epoch disagreement signal is recorded in the
/// history.
pub fn train_student(
    task: &ManifoldTask,
    s_labeled: &SampleSet,
    cfg: &TrainConfig,
    enc: Option<&MlpParams>,
    dec: Option<&MlpParams>,
    h: Option<&MlpParams>,
) -> Result<(MlpParams, Vec<EpochStats>)> {
    cfg.validate()?;
    if s_labeled.labels().is_none() {
        return Err(Error::MissingLabels);
    }
    if cfg.method.needs_teacher() && h.is_none() {
        return Err(Error::InvalidArgument(format!(
            "method `{}` needs a trained labeler",
            cfg.method
        )));
    }
    if cfg.method.needs_generator() && (enc.is_none() || dec.is_none()) {
        return Err(Error::InvalidArgument(format!(
            "method `{}` needs a trained generator pair",
            cfg.method
        )));
    }

    let eval = sample_labeled(task, cfg.eval_n, derive_seed(cfg.seed, STREAM_EVAL))?;
    let mut f = nets::init_params(
        &MlpSpec::student(task.ambient_dim, task.classes),
        derive_seed(cfg.seed, STREAM_INIT),
    )?;
    let mut state = OptState::new(f.num_params());
    let steps_per_epoch = s_labeled.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;

    let explore_cfg = |mode: ExploreMode| ExploreConfig { mode, ..cfg.explore.clone() };

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut tilde: Option<SampleSet> = None;
        let mut mean_ld_tilde = None;
        if let Some(mode) = cfg.method.explore_mode() {
            let gen_seed = derive_seed2(cfg.seed, STREAM_TILDE, epoch as u64);
            let set = generate_tilde_set(
                s_labeled,
                enc.unwrap(),
                dec.unwrap(),
                &f,
                h.unwrap(),
                &explore_cfg(mode),
                cfg.temperature,
                gen_seed,
            )?;
            mean_ld_tilde =
                Some(empirical_distill_risk(&f, h.unwrap(), &set, cfg.temperature)?.value);
            tilde = Some(set);
        }

        let mut rng =
            StdRng::seed_from_u64(derive_seed2(cfg.seed, STREAM_SHUFFLE, epoch as u64));
        let batches = epoch_batches(s_labeled.len(), cfg.batch_size, &mut rng);
        let mut tilde_order: Vec<usize> = tilde
            .as_ref()
            .map_or_else(Vec::new, |t| (0..t.len()).collect());
        tilde_order.shuffle(&mut rng);
        let mut tilde_cursor = 0;

        for batch in batches {
            if cfg.tilde_refresh == TildeRefresh::Step {
                if let Some(mode) = cfg.method.explore_mode() {
                    let gen_seed = derive_seed2(
                        derive_seed2(cfg.seed, STREAM_TILDE, epoch as u64),
                        0x5,
                        step as u64,
                    );
                    let set = generate_tilde_set(
                        s_labeled,
                        enc.unwrap(),
                        dec.unwrap(),
                        &f,
                        h.unwrap(),
                        &explore_cfg(mode),
                        cfg.temperature,
                        gen_seed,
                    )?;
                    tilde = Some(set);
                    tilde_order = (0..tilde.as_ref().unwrap().len()).collect();
                    tilde_order.shuffle(&mut rng);
                    tilde_cursor = 0;
                }
            }
            let tilde_batch: Vec<usize> = if let Some(t) = &tilde {
                let want = cfg.batch_size.min(t.len());
                (0..want)
                    .map(|k| tilde_order[(tilde_cursor + k) % tilde_order.len()])
                    .collect()
            } else {
                Vec::new()
            };
            tilde_cursor += tilde_batch.len();

            let (_, grad) = student_batch_gradient(
                &f,
                h,
                s_labeled,
                &batch,
                tilde.as_ref(),
                &tilde_batch,
                cfg,
            )?;
            let lr = scheduled_lr(cfg, step, total_steps);
            let mut flat = f.flatten();
            optimizer_step(&mut flat, &grad, &mut state, cfg, lr)?;
            f = f.unflatten(&flat)?;
            step += 1;
        }

        let train_risk = empirical_risk(&f, s_labeled, cfg.temperature)?.value;
        let test_risk = empirical_risk(&f, &eval, cfg.temperature)?.value;
        check_finite("epoch risk", train_risk + test_risk)?;
        history.push(EpochStats {
            epoch,
            train_risk,
            test_risk,
            train_err: misclassification_rate(&f, s_labeled)?,
            test_err: misclassification_rate(&f, &eval)?,
            mean_ld_tilde,
        });
    }
    Ok((f, history))
}

/// History CSV: `epoch,train_risk,test_risk,train_err,test_err,mean_ld_tilde`
/// with an empty last field when no generated set exists.
pub fn write_history<W: Write>(w: &mut W, history: &[EpochStats]) -> Result<()> {
    writeln!(w, "epoch,train_risk,test_risk,train_err,test_err,mean_ld_tilde")?;
    for e in history {
        let ld = e
            .mean_ld_tilde
            .map_or(String::new(), |v| format!("{v:.16e}"));
        writeln!(
            w,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            e.epoch, e.train_risk, e.test_risk, e.train_err, e.test_err, ld
        )?;
    }
    Ok(())
}

pub fn read_history<R: BufRead>(r: &mut R) -> Result<Vec<EpochStats>> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty history".into()))??;
    if header != "epoch,train_risk,test_risk,train_err,test_err,mean_ld_tilde" {
        return Err(Error::Parse(format!("bad history header `{header}`")));
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Parse(format!("bad history row `{line}`")));
        }
        let parse = |tok: &str| -> Result<f64> {
            tok.parse()
                .map_err(|_| Error::Parse(format!("bad float `{tok}`")))
        };
        out.push(EpochStats {
            epoch: fields[0]
                .parse()
                .map_err(|_| Error::Parse(format!("bad epoch `{}`", fields[0])))?,
            train_risk: parse(fields[1])?,
            test_risk: parse(fields[2])?,
            train_err: parse(fields[3])?,
            test_err: parse(fields[4])?,
            mean_ld_tilde: if fields[5].is_empty() {
                None
            } else {
                Some(parse(fields[5])?)
            },
        });
    }
    Ok(out)
}
