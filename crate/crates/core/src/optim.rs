//! Adam, the warm-up/decay schedule, a finite-difference gradient checker and
//! the pretraining and multi-task training loops.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    hard_context_indices, DisentangleWindow, SelectionInstance, StpLabel, StpPair, DEFAULT_MAX_KEPT,
};
use crate::encoder::{encoder_forward, mlm_loss, stp_logits, stp_loss};
use crate::eval::{recall_at_n, RankingResult};
use crate::graph::{Gradients, Graph, Var};
use crate::heads::{self, MultiTaskWeights};
use crate::model::{score_instance, selection_forward, window_forward, TopicModel};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{lit, Matrix, Real};
use crate::textenc::mask_for_mlm;
use crate::{seeded_rng, Error, Rng};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;
pub const DEFAULT_MASK_PROB: f64 = 0.15;
/// ChaCha stream reserved for MLM masking draws.
const MASK_STREAM: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    pub epochs: usize,
    /// Overrides `epochs` when set.
    pub total_steps: Option<usize>,
    pub batch_size: usize,
    pub seed: u64,
    pub weights: MultiTaskWeights,
    pub no_answer_threshold: f64,
    /// Replaces the encoder's dropout rate for this run when set.
    pub dropout: Option<f64>,
    pub grid_search: bool,
    pub grid_values: Vec<f64>,
    /// Train only the topic attention and task heads.
    pub freeze_encoder: bool,
    pub max_kept: usize,
    pub mask_prob: f64,
    /// Stop early once a step's logged loss falls below this value.
    pub target_loss: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            warmup_fraction: 0.1,
            epochs: 3,
            total_steps: None,
            batch_size: 32,
            seed: 0,
            weights: MultiTaskWeights::default(),
            no_answer_threshold: crate::eval::DEFAULT_NO_ANSWER_THRESHOLD,
            dropout: None,
            grid_search: false,
            grid_values: MultiTaskWeights::default_grid_values(),
            freeze_encoder: false,
            max_kept: DEFAULT_MAX_KEPT,
            mask_prob: DEFAULT_MASK_PROB,
            target_loss: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate", "must be positive and finite"));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::invalid("warmup_fraction", "must lie in [0, 1)"));
        }
        if self.total_steps == Some(0) {
            return Err(Error::invalid("total_steps", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if self.dropout.is_some_and(|p| !(0.0..1.0).contains(&p)) {
            return Err(Error::invalid("dropout", "must lie in [0, 1)"));
        }
        if self.max_kept == 0 {
            return Err(Error::invalid("max_kept", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return Err(Error::invalid("mask_prob", "must lie in [0, 1]"));
        }
        if self.grid_values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("grid_values", "weights must lie in [0, 1]"));
        }
        self.weights.validate()
    }

    fn steps_for(&self, examples: usize) -> usize {
        self.total_steps
            .unwrap_or_else(|| self.epochs * examples.div_ceil(self.batch_size))
    }
}

/// Linear ramp from 0 to `base_lr` over the first `warmup_fraction` of the
/// run, then linear decay to 0 at `total_steps`.
pub fn lr_schedule(step: usize, total_steps: usize, base_lr: f64, warmup_fraction: f64) -> f64 {
    if total_steps == 0 {
        return 0.0;
    }
    let step = step.min(total_steps) as f64;
    let total = total_steps as f64;
    let warmup = warmup_fraction * total;
    if step < warmup {
        base_lr * step / warmup
    } else {
        base_lr * (total - step) / (total - warmup)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub first_moment: Vec<Matrix<T>>,
    pub second_moment: Vec<Matrix<T>>,
    pub step: u64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        Self {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update with learning rate `lr`.
pub fn adam_step<T: Real>(
    params: &mut ParamStore<T>,
    grads: &Gradients<T>,
    state: &mut OptimizerState<T>,
    lr: f64,
) -> Result<(), Error> {
    if grads.tensors.len() != params.len() || state.first_moment.len() != params.len() {
        return Err(Error::Shape("optimizer state does not match parameters"));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (lit::<T>(ADAM_BETA1), lit::<T>(ADAM_BETA2));
    let (one, eps) = (T::one(), lit::<T>(ADAM_EPSILON));
    let c1 = lit::<T>(1.0 - libm::pow(ADAM_BETA1, f64::from(t)));
    let c2 = lit::<T>(1.0 - libm::pow(ADAM_BETA2, f64::from(t)));
    let lr = lit::<T>(lr);
    for id in params.ids().collect::<Vec<_>>() {
        let g = grads.get(id);
        if g.shape() != params.get(id).shape() {
            return Err(Error::Shape("gradient shape does not match parameter"));
        }
        let m = state.first_moment[id.0].data_mut();
        let v = state.second_moment[id.0].data_mut();
        let p = params.get_mut(id).data_mut();
        for (((p, m), v), &g) in p.iter_mut().zip(m).zip(v).zip(g.data()) {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Relative error below which an analytic gradient entry is accepted.
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;
/// Denominator floor so entries with both gradients near zero compare by
/// absolute difference.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    /// Parameters whose analytic gradient had a non-zero entry.
    pub touched: Vec<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_relative_error <= GRAD_CHECK_TOLERANCE
    }
}

/// Compares reverse-mode gradients with central differences
/// `(f(θ+h) − f(θ−h)) / 2h`, `h = 1e-5·(1+|θ|)`. At most `per_param` evenly
/// spaced entries of each parameter are probed.
pub fn check_gradients<F>(params: &ParamStore<f64>, per_param: usize, loss: F) -> Result<GradCheckReport, Error>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var, Error>,
{
    let eval = |store: &ParamStore<f64>| -> Result<f64, Error> {
        let mut g = Graph::new(store);
        let out = loss(&mut g)?;
        Ok(g.value(out).item())
    };
    let analytic = {
        let mut g = Graph::new(params);
        let out = loss(&mut g)?;
        g.backward(out)?
    };
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_relative_error: 0.0,
        worst: None,
        touched: Vec::new(),
    };
    for (id, name, tensor) in params.iter() {
        let grad = analytic.get(id);
        if grad.data().iter().any(|&x| x != 0.0) {
            report.touched.push(String::from(name));
        }
        let n = tensor.len();
        let stride = n.div_ceil(per_param.max(1)).max(1);
        for k in (0..n).step_by(stride) {
            let theta = tensor.data()[k];
            let h = 1e-5 * (1.0 + theta.abs());
            probe.get_mut(id).data_mut()[k] = theta + h;
            let plus = eval(&probe)?;
            probe.get_mut(id).data_mut()[k] = theta - h;
            let minus = eval(&probe)?;
            probe.get_mut(id).data_mut()[k] = theta;
            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.data()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            report.checked += 1;
            if rel > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = report.max_relative_error.max(rel);
                report.worst = Some((String::from(name), k));
            }
        }
    }
    Ok(report)
}

/// Losses of one pretraining pair: STP cross-entropy, plus MLM for positive
/// pairs. Both segments of every pair are masked so the presence of `[MASK]`
/// carries no label information. `mask_rng` drives masking and `dropout_rng`
/// (when given) enables dropout.
pub fn pretrain_pair_losses<T: Real>(
    g: &mut Graph<'_, T>,
    model: &TopicModel<T>,
    pair: &StpPair,
    mask_prob: f64,
    mask_rng: &mut Rng,
    dropout_rng: Option<&mut Rng>,
) -> Result<(Var, Option<Var>), Error> {
    let encoded = model.encode(&pair.first, &pair.second);
    let masked = mask_for_mlm(&encoded, model.config.vocab_size, mask_rng, mask_prob);
    let out = encoder_forward(g, &model.ids.encoder, &model.config, &masked.inputs, dropout_rng)?;
    let positive = pair.label == StpLabel::Positive;
    let logits = stp_logits(g, out.hidden, &model.ids.pretrain);
    let stp = stp_loss(g, logits, positive);
    let mlm = positive.then(|| mlm_loss(g, out.hidden, &masked, &model.ids.pretrain));
    Ok((stp, mlm))
}

/// Response-selection loss (mean over candidates) and topic-prediction loss
/// (mean over every filtered `(context, candidate)` pair with known topics).
/// A task whose weight is zero is not built.
pub fn selection_losses<T: Real>(
    g: &mut Graph<'_, T>,
    model: &TopicModel<T>,
    instance: &SelectionInstance,
    weights: &MultiTaskWeights,
    max_kept: usize,
    rng: Option<&mut Rng>,
) -> Result<(Option<Var>, Option<Var>), Error> {
    let want_topic = weights.beta > 0.0 && has_topic_labels(instance);
    if weights.alpha == 0.0 && !want_topic {
        return Ok((None, None));
    }
    let outs = selection_forward(g, model, instance, max_kept, rng)?;
    let rs = (weights.alpha > 0.0).then(|| {
        let terms: Vec<Var> = outs
            .iter()
            .enumerate()
            .map(|(j, o)| heads::response_loss(g, o.response_logits, instance.gold() == Some(j)))
            .collect();
        mean_of(g, &terms)
    });
    let topic = if want_topic {
        let mut logits = Vec::with_capacity(outs.len());
        let mut labels = Vec::new();
        for (j, (cand, out)) in instance.candidates.iter().zip(&outs).enumerate() {
            let all = instance.topic_labels(j).ok_or(Error::Empty("topic labels"))?;
            labels.extend(hard_context_indices(&instance.context, cand, max_kept).iter().map(|&k| all[k]));
            logits.push(out.topic_logits);
        }
        let stacked = if logits.len() == 1 {
            logits[0]
        } else {
            g.concat_rows(&logits)
        };
        Some(heads::topic_loss(g, stacked, &labels))
    } else {
        None
    };
    Ok((rs, topic))
}

pub fn has_topic_labels(instance: &SelectionInstance) -> bool {
    instance.context.topic_ids.is_some() && instance.candidate_topic_ids.is_some()
}

/// Reply-to cross-entropy of one window.
pub fn window_loss<T: Real>(
    g: &mut Graph<'_, T>,
    model: &TopicModel<T>,
    window: &DisentangleWindow,
    rng: Option<&mut Rng>,
) -> Result<Var, Error> {
    let logits = window_forward(g, model, window, rng)?;
    Ok(heads::reply_loss(g, logits, window.gold_parent))
}

fn mean_of<T: Real>(g: &mut Graph<'_, T>, terms: &[Var]) -> Var {
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g.add(total, t);
    }
    if terms.len() == 1 {
        total
    } else {
        g.scale(total, lit(1.0 / terms.len() as f64))
    }
}

/// One line of the training log.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_stp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_mlm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_rs: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_tp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_dis: Option<f64>,
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub warnings: Vec<String>,
}

/// Cycles through a dataset in seeded shuffled order, reshuffling each pass.
struct BatchCursor {
    order: Vec<usize>,
    pos: usize,
}

impl BatchCursor {
    fn new(len: usize) -> Self {
        Self {
            order: (0..len).collect(),
            pos: len,
        }
    }

    fn next_batch(&mut self, size: usize, rng: &mut Rng) -> Vec<usize> {
        let mut batch = Vec::with_capacity(size);
        while batch.len() < size.min(self.order.len()) {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            let take = (size - batch.len()).min(self.order.len() - self.pos);
            batch.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
            if self.pos < self.order.len() || batch.len() == size {
                break;
            }
        }
        batch
    }
}

/// Ids updated by training: everything, or everything but the encoder body
/// and pretraining heads when `freeze_encoder` is set.
fn frozen_mask<T: Real>(model: &TopicModel<T>, freeze_encoder: bool) -> Vec<bool> {
    let mut frozen = vec![false; model.params.len()];
    if freeze_encoder {
        for id in model.ids.encoder_params() {
            frozen[id.0] = true;
        }
        for (w, b) in [model.ids.pretrain.mlm, model.ids.pretrain.stp] {
            frozen[w.0] = true;
            frozen[b.0] = true;
        }
    }
    frozen
}

fn apply_update(
    model: &mut TopicModel<f32>,
    grads: &mut Gradients<f32>,
    frozen: &[bool],
    state: &mut OptimizerState<f32>,
    lr: f64,
) -> Result<(), Error> {
    for (g, &f) in grads.tensors.iter_mut().zip(frozen) {
        if f {
            g.data_mut().fill(0.0);
        }
    }
    if !grads.is_finite() {
        return Err(Error::NonFiniteLoss(f64::NAN));
    }
    adam_step(&mut model.params, grads, state, lr)
}

fn with_dropout(model: &mut TopicModel<f32>, cfg: &TrainConfig) {
    if let Some(p) = cfg.dropout {
        model.config.dropout = p;
    }
}

/// Runs `f` on a fresh graph, backpropagates `scale · loss` into `acc` and
/// returns the unscaled loss value.
fn accumulate<F>(model: &TopicModel<f32>, acc: &mut Gradients<f32>, scale: f64, f: F) -> Result<Option<f64>, Error>
where
    F: FnOnce(&mut Graph<'_, f32>) -> Result<Option<Var>, Error>,
{
    let mut g = Graph::new(&model.params);
    let Some(loss) = f(&mut g)? else { return Ok(None) };
    let value = g.value(loss).item().to_f64();
    let scaled = g.scale(loss, scale as f32);
    let grads = g.backward(scaled)?;
    acc.accumulate(&grads);
    Ok(Some(value))
}

/// Masked-LM plus same-topic pretraining. The per-step loss is the batch mean
/// of STP cross-entropy plus the mean MLM loss over the batch's positive pairs.
pub fn pretrain(model: &mut TopicModel<f32>, pairs: &[StpPair], cfg: &TrainConfig) -> Result<TrainLog, Error> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Empty("pretraining pairs"));
    }
    with_dropout(model, cfg);
    let mut log = TrainLog::default();
    if pairs.iter().all(|p| p.label != StpLabel::Positive) {
        log.warnings
            .push(String::from("no positive pairs: MLM is skipped and only STP is trained"));
    }
    let total = cfg.steps_for(pairs.len());
    let mut rng = seeded_rng(cfg.seed);
    let mut mask_rng = seeded_rng(cfg.seed);
    mask_rng.set_stream(MASK_STREAM);
    let mut cursor = BatchCursor::new(pairs.len());
    let mut state = OptimizerState::new(&model.params);
    let frozen = vec![false; model.params.len()];

    for step in 0..total {
        let lr = lr_schedule(step + 1, total, cfg.learning_rate, cfg.warmup_fraction);
        let batch = cursor.next_batch(cfg.batch_size, &mut rng);
        let positives = batch
            .iter()
            .filter(|&&i| pairs[i].label == StpLabel::Positive)
            .count();
        let mut grads = Gradients::zeros_like(&model.params);
        let (mut stp_sum, mut mlm_sum) = (0.0, 0.0);
        for &i in &batch {
            let mut g = Graph::new(&model.params);
            let (stp, mlm) =
                pretrain_pair_losses(&mut g, model, &pairs[i], cfg.mask_prob, &mut mask_rng, Some(&mut rng))?;
            stp_sum += g.value(stp).item().to_f64();
            let mut loss = g.scale(stp, 1.0 / batch.len() as f32);
            if let Some(mlm) = mlm {
                mlm_sum += g.value(mlm).item().to_f64();
                let scaled = g.scale(mlm, 1.0 / positives as f32);
                loss = g.add(loss, scaled);
            }
            grads.accumulate(&g.backward(loss)?);
        }
        let loss_stp = stp_sum / batch.len() as f64;
        let loss_mlm = (positives > 0).then(|| mlm_sum / positives as f64);
        let loss = loss_stp + loss_mlm.unwrap_or(0.0);
        log.steps.push(StepRecord {
            step,
            lr,
            loss_stp: Some(loss_stp),
            loss_mlm,
            loss,
            ..StepRecord::default()
        });
        if cfg.target_loss.is_some_and(|t| loss < t) {
            break;
        }
        apply_update(model, &mut grads, &frozen, &mut state, lr)?;
    }
    Ok(log)
}

/// Which tasks contribute to a multi-task run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActiveTasks {
    pub response: bool,
    pub topic: bool,
    pub disentangle: bool,
}

impl ActiveTasks {
    pub fn resolve(
        weights: &MultiTaskWeights,
        selection: &[SelectionInstance],
        windows: &[DisentangleWindow],
    ) -> Self {
        Self {
            response: weights.alpha > 0.0 && !selection.is_empty(),
            topic: weights.beta > 0.0 && selection.iter().any(has_topic_labels),
            disentangle: weights.gamma > 0.0 && !windows.is_empty(),
        }
    }

    pub fn any(&self) -> bool {
        self.response || self.topic || self.disentangle
    }
}

/// Joint multi-task fine-tuning. Every step draws one selection mini-batch
/// (shared by response selection and topic prediction) and one window
/// mini-batch, and minimizes `α·L_rs + β·L_topic + γ·L_dis` over them. Tasks
/// with zero weight or no data are never built and consume no randomness.
pub fn train_multitask(
    model: &mut TopicModel<f32>,
    selection: &[SelectionInstance],
    windows: &[DisentangleWindow],
    cfg: &TrainConfig,
) -> Result<TrainLog, Error> {
    cfg.validate()?;
    for s in selection {
        s.validate()?;
    }
    let active = ActiveTasks::resolve(&cfg.weights, selection, windows);
    if !active.any() {
        return Err(Error::Empty("no task has both data and a positive weight"));
    }
    with_dropout(model, cfg);
    let use_selection = active.response || active.topic;
    let examples = if use_selection { selection.len() } else { 0 }
        .max(if active.disentangle { windows.len() } else { 0 });
    let total = cfg.steps_for(examples);
    let mut rng = seeded_rng(cfg.seed);
    let mut sel_cursor = BatchCursor::new(selection.len());
    let mut win_cursor = BatchCursor::new(windows.len());
    let mut state = OptimizerState::new(&model.params);
    let frozen = frozen_mask(model, cfg.freeze_encoder);
    let w = cfg.weights;
    let task_weights = MultiTaskWeights {
        alpha: if active.response { w.alpha } else { 0.0 },
        beta: if active.topic { w.beta } else { 0.0 },
        gamma: w.gamma,
    };
    let mut log = TrainLog::default();

    for step in 0..total {
        let lr = lr_schedule(step + 1, total, cfg.learning_rate, cfg.warmup_fraction);
        let mut grads = Gradients::zeros_like(&model.params);
        let mut record = StepRecord {
            step,
            lr,
            ..StepRecord::default()
        };

        if use_selection {
            let batch = sel_cursor.next_batch(cfg.batch_size, &mut rng);
            let labeled = batch.iter().filter(|&&i| has_topic_labels(&selection[i])).count();
            let (mut rs_sum, mut tp_sum) = (0.0, 0.0);
            for &i in &batch {
                let mut g = Graph::new(&model.params);
                let (rs, tp) = selection_losses(
                    &mut g,
                    model,
                    &selection[i],
                    &task_weights,
                    cfg.max_kept,
                    Some(&mut rng),
                )?;
                let mut terms = Vec::new();
                if let Some(rs) = rs {
                    rs_sum += g.value(rs).item().to_f64();
                    terms.push(g.scale(rs, (task_weights.alpha / batch.len() as f64) as f32));
                }
                if let Some(tp) = tp {
                    tp_sum += g.value(tp).item().to_f64();
                    terms.push(g.scale(tp, (task_weights.beta / labeled as f64) as f32));
                }
                if terms.is_empty() {
                    continue;
                }
                let mut loss = terms[0];
                for &t in &terms[1..] {
                    loss = g.add(loss, t);
                }
                grads.accumulate(&g.backward(loss)?);
            }
            if active.response {
                record.loss_rs = Some(rs_sum / batch.len() as f64);
            }
            if active.topic && labeled > 0 {
                record.loss_tp = Some(tp_sum / labeled as f64);
            }
        }

        if active.disentangle {
            let batch = win_cursor.next_batch(cfg.batch_size, &mut rng);
            let scale = task_weights.gamma / batch.len() as f64;
            let mut dis_sum = 0.0;
            for &i in &batch {
                let value = accumulate(model, &mut grads, scale, |g| {
                    window_loss(g, model, &windows[i], Some(&mut rng)).map(Some)
                })?;
                dis_sum += value.unwrap_or(0.0);
            }
            record.loss_dis = Some(dis_sum / batch.len() as f64);
        }

        record.loss = task_weights.alpha * record.loss_rs.unwrap_or(0.0)
            + task_weights.beta * record.loss_tp.unwrap_or(0.0)
            + task_weights.gamma * record.loss_dis.unwrap_or(0.0);
        if !record.loss.is_finite() {
            return Err(Error::NonFiniteLoss(record.loss));
        }
        let reached = cfg.target_loss.is_some_and(|t| record.loss < t);
        log.steps.push(record);
        if reached {
            break;
        }
        apply_update(model, &mut grads, &frozen, &mut state, lr)?;
    }
    Ok(log)
}

/// Combined multi-task loss of `model` on fixed data, without dropout.
pub fn evaluate_multitask_loss<T: Real>(
    model: &TopicModel<T>,
    selection: &[SelectionInstance],
    windows: &[DisentangleWindow],
    weights: &MultiTaskWeights,
    max_kept: usize,
) -> Result<f64, Error> {
    let active = ActiveTasks::resolve(weights, selection, windows);
    let (mut rs, mut tp, mut labeled, mut dis) = (0.0, 0.0, 0usize, 0.0);
    if active.response || active.topic {
        for s in selection {
            let mut g = Graph::new(&model.params);
            let (r, t) = selection_losses(&mut g, model, s, weights, max_kept, None)?;
            rs += r.map_or(0.0, |v| g.value(v).item().to_f64());
            if let Some(t) = t {
                tp += g.value(t).item().to_f64();
                labeled += 1;
            }
        }
    }
    if active.disentangle {
        for w in windows {
            let mut g = Graph::new(&model.params);
            let l = window_loss(&mut g, model, w, None)?;
            dis += g.value(l).item().to_f64();
        }
    }
    let mean = |sum: f64, n: usize| if n == 0 { 0.0 } else { sum / n as f64 };
    Ok(weights.alpha * mean(rs, selection.len())
        + weights.beta * mean(tp, labeled)
        + weights.gamma * mean(dis, windows.len()))
}

/// Dev Recall@1 of `model`, applying the no-answer threshold.
pub fn dev_recall_at_1<T: Real>(
    model: &TopicModel<T>,
    dev: &[SelectionInstance],
    threshold: f64,
    max_kept: usize,
) -> Result<f64, Error> {
    let results = dev
        .iter()
        .map(|s| {
            let scores = score_instance(model, s, max_kept)?;
            Ok(RankingResult::new(scores.scores, s.label, Some(threshold)))
        })
        .collect::<Result<Vec<_>, Error>>()?;
    Ok(recall_at_n(&results, 1))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub recall_at_1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridResult {
    pub rows: Vec<GridRow>,
    /// First row with the highest dev Recall@1.
    pub best: usize,
    pub best_model: TopicModel<f32>,
}

/// Trains one model per weight triple of `cfg.grid_values³` (all-zero
/// excluded), each from `init` with the same seed, and ranks them by dev
/// Recall@1.
pub fn grid_search(
    init: &TopicModel<f32>,
    selection: &[SelectionInstance],
    windows: &[DisentangleWindow],
    dev: &[SelectionInstance],
    cfg: &TrainConfig,
) -> Result<GridResult, Error> {
    if dev.is_empty() {
        return Err(Error::Empty("grid search needs dev selection instances"));
    }
    let mut rows = Vec::new();
    let mut best: Option<(usize, TopicModel<f32>)> = None;
    for weights in MultiTaskWeights::grid(&cfg.grid_values) {
        let run_cfg = TrainConfig {
            weights,
            ..cfg.clone()
        };
        let mut model = init.clone();
        if ActiveTasks::resolve(&weights, selection, windows).any() {
            train_multitask(&mut model, selection, windows, &run_cfg)?;
        }
        let r1 = dev_recall_at_1(&model, dev, cfg.no_answer_threshold, cfg.max_kept)?;
        rows.push(GridRow {
            alpha: weights.alpha,
            beta: weights.beta,
            gamma: weights.gamma,
            recall_at_1: r1,
        });
        let improves = best.as_ref().is_none_or(|(b, _)| r1 > rows[*b].recall_at_1);
        if improves {
            best = Some((rows.len() - 1, model));
        }
    }
    let (best, best_model) = best.ok_or(Error::Empty("grid values"))?;
    Ok(GridResult {
        rows,
        best,
        best_model,
    })
}

/// Parameters of a model receiving a non-zero gradient from `loss`.
pub fn touched_params<T: Real>(params: &ParamStore<T>, grads: &Gradients<T>) -> Vec<ParamId> {
    params
        .ids()
        .filter(|&id| grads.get(id).data().iter().any(|&x| x != T::zero()))
        .collect()
}
