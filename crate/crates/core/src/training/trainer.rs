use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::augment::{apply_specaugment, SpecAugmentPolicy};
use crate::data::Utterance;
use crate::model::{
    backward_into, decode_hard, forward_train, forward_train_unchecked, log_softmax, ModelConfig, ModelParams, EOS,
};
use crate::multihead::NoiseTape;
use crate::numeric::{stream_id, Parameters, Real, RngStream, Tensor};

use super::beam::{beam_search, greedy_decode};
use super::losses::{cross_entropy_label_smoothed, edit_distance};
use super::mwer::{mwer_loss, MwerConfig};
use super::optim::{AdamConfig, AdamState};
use super::TrainingError;

const SHUFFLE_STREAM: u64 = 0x5f1e;
const NOISE_STREAM: u64 = 0x7015e;
const AUGMENT_STREAM: u64 = 0xa06;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Cross-entropy epochs.
    pub epochs: usize,
    /// MWER fine-tuning epochs run after the cross-entropy ones.
    pub mwer_epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Learning-rate multiplier applied after every epoch.
    pub lr_decay: f64,
    pub mwer_learning_rate: f64,
    pub label_smoothing: f64,
    /// Add unit Gaussian noise to monotonic energies during training.
    pub energy_noise: bool,
    pub augment: bool,
    pub spec_augment: SpecAugmentPolicy,
    pub mwer: MwerConfig,
    /// Evaluate on at most this many held-out utterances per epoch (0 = all).
    pub eval_limit: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            mwer_epochs: 0,
            batch_size: 8,
            optimizer: AdamConfig { learning_rate: 3e-3, ..AdamConfig::default() },
            lr_decay: 0.95,
            mwer_learning_rate: 1e-4,
            label_smoothing: 0.1,
            energy_noise: true,
            augment: false,
            spec_augment: SpecAugmentPolicy::default(),
            mwer: MwerConfig::default(),
            eval_limit: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        if self.batch_size == 0 {
            return Err(TrainingError::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(TrainingError::Config("label_smoothing must lie in [0, 1)".into()));
        }
        if !(self.lr_decay > 0.0) || !(self.mwer_learning_rate >= 0.0) {
            return Err(TrainingError::Config("learning-rate settings must be positive".into()));
        }
        self.optimizer.validate()?;
        self.mwer.validate()?;
        self.spec_augment.validate().map_err(|e| TrainingError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Ce,
    Mwer,
    Eval,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Ce => "ce",
            Phase::Mwer => "mwer",
            Phase::Eval => "eval",
        })
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub step: u64,
    pub phase: Phase,
    pub loss: f64,
    pub cer: Option<f64>,
    pub grad_norm: Option<f64>,
}

pub const METRICS_HEADER: &str = "step,phase,loss,cer,grad_norm";

impl MetricsRecord {
    pub fn csv_line(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_default();
        format!("{},{},{:.6},{},{}", self.step, self.phase, self.loss, opt(self.cer), opt(self.grad_norm))
    }
}

/// Writes records as CSV with the standard header.
pub struct MetricsWriter<W: Write> {
    out: W,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(mut out: W) -> std::io::Result<Self> {
        writeln!(out, "{METRICS_HEADER}")?;
        Ok(Self { out })
    }

    /// Continues an existing log without repeating the header.
    pub fn append(out: W) -> Self {
        Self { out }
    }

    pub fn write(&mut self, r: &MetricsRecord) -> std::io::Result<()> {
        writeln!(self.out, "{}", r.csv_line())?;
        self.out.flush()
    }
}

/// Parameters, optimizer moments and progress; everything a resumed run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    pub params: ModelParams<T>,
    pub opt: AdamState<T>,
    /// Completed epochs.
    pub epoch: usize,
    pub step: u64,
}

impl<T: Real> TrainState<T> {
    pub fn new(params: ModelParams<T>) -> Self {
        let opt = AdamState::new(&params);
        Self { params, opt, epoch: 0, step: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub loss: f64,
    pub grad_norm: f64,
}

/// Targets for the decoder: the labels followed by the end token.
pub fn targets_of(labels: &[usize]) -> Vec<usize> {
    let mut t = labels.to_vec();
    t.push(EOS);
    t
}

/// One optimizer update on `batch`, given as `(dataset index, utterance)`.
/// Randomness (noise, masks) is keyed by `seed`, `epoch` and the dataset index.
#[allow(clippy::too_many_arguments)]
pub fn train_step<T: Real>(
    cfg: &ModelConfig,
    tc: &TrainConfig,
    state: &mut TrainState<T>,
    batch: &[(usize, &Utterance<T>)],
    phase: Phase,
    lr: f64,
    seed: u64,
    epoch: usize,
) -> Result<StepMetrics, TrainingError> {
    if batch.is_empty() {
        return Err(TrainingError::Config("empty batch".into()));
    }
    let params = &state.params;
    let mut grads = params.clone();
    grads.zero();
    let inv_b = T::one() / T::from_usize(batch.len());
    let mut total = 0.0;
    for &(idx, utt) in batch {
        let targets = targets_of(&utt.labels);
        match phase {
            Phase::Ce => {
                let feats = if tc.augment {
                    let mut rng = RngStream::new(seed, stream_id(&[AUGMENT_STREAM, epoch as u64, idx as u64]));
                    apply_specaugment(&utt.feats, &tc.spec_augment, &mut rng)
                        .map_err(|e| TrainingError::Config(e.to_string()))?
                        .0
                } else {
                    utt.feats.clone()
                };
                let noise = tc.energy_noise.then(|| {
                    NoiseTape::draw(
                        seed,
                        stream_id(&[NOISE_STREAM, epoch as u64, idx as u64]),
                        cfg.heads,
                        targets.len(),
                        cfg.encoded_len(feats.rows()),
                    )
                });
                let fwd = forward_train(cfg, params, &feats, &targets, noise.as_ref())?;
                let (loss, mut g) = cross_entropy_label_smoothed(&fwd.logits, &targets, tc.label_smoothing)?;
                g.data_mut().iter_mut().for_each(|x| *x *= inv_b);
                backward_into(cfg, params, &fwd, &g, &mut grads)?;
                total += loss.as_f64();
            }
            Phase::Mwer => {
                let fwd = forward_train(cfg, params, &utt.feats, &targets, None)?;
                let (ce, mut g) = cross_entropy_label_smoothed(&fwd.logits, &targets, tc.label_smoothing)?;
                let nbest = beam_search(cfg, params, &utt.feats, tc.mwer.beam, tc.mwer.nbest, None)?;
                let out = mwer_loss(&nbest, &utt.labels, tc.mwer.lambda, ce.as_f64())?;
                let lambda = T::from_f64(tc.mwer.lambda);
                g.data_mut().iter_mut().for_each(|x| *x *= lambda * inv_b);
                backward_into(cfg, params, &fwd, &g, &mut grads)?;
                for (hyp, &gs) in nbest.iter().zip(&out.score_grads) {
                    if gs == 0.0 {
                        continue;
                    }
                    let tokens = hyp.scored_tokens();
                    let hf = forward_train_unchecked(cfg, params, &utt.feats, &tokens)?;
                    let g_logits = score_logit_grad(&hf.logits, &tokens, T::from_f64(gs) * inv_b);
                    backward_into(cfg, params, &hf, &g_logits, &mut grads)?;
                }
                total += out.loss;
            }
            Phase::Eval => return Err(TrainingError::Config("cannot take a training step in eval phase".into())),
        }
    }
    let loss = total / batch.len() as f64;
    if !loss.is_finite() {
        return Err(TrainingError::NonFinite(format!("{phase} loss at step {}", state.step)));
    }
    let grad_norm = state.opt.update(&tc.optimizer, lr, &mut state.params, &grads)?;
    state.step += 1;
    Ok(StepMetrics { loss, grad_norm })
}

/// Gradient of `scale · Σ_i log softmax(logits_i)[tokens_i]` w.r.t. the logits.
pub fn score_logit_grad<T: Real>(logits: &Tensor<T>, tokens: &[usize], scale: T) -> Tensor<T> {
    let mut g = logits.zeros_like();
    for (i, &tok) in tokens.iter().enumerate() {
        let lp = log_softmax(logits.row(i));
        for (c, (gv, l)) in g.row_mut(i).iter_mut().zip(lp).enumerate() {
            let onehot = if c == tok { T::one() } else { T::zero() };
            *gv = scale * (onehot - l.exp());
        }
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    /// Thresholded attention, frames read left to right.
    Hard,
    /// Expected-mode attention, greedy.
    Greedy,
    /// Expected-mode attention, beam search.
    Beam,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalReport {
    pub errors: usize,
    pub reference_len: usize,
    pub utterances: usize,
}

impl EvalReport {
    pub fn cer(&self) -> f64 {
        if self.reference_len == 0 {
            0.0
        } else {
            self.errors as f64 / self.reference_len as f64
        }
    }
}

pub fn decode_tokens<T: Real>(
    cfg: &ModelConfig,
    params: &ModelParams<T>,
    feats: &Tensor<T>,
    mode: DecodeMode,
    beam: usize,
) -> Result<Vec<usize>, TrainingError> {
    Ok(match mode {
        DecodeMode::Hard => decode_hard(cfg, params, feats)?.tokens,
        DecodeMode::Greedy => greedy_decode(cfg, params, feats)?.tokens,
        DecodeMode::Beam => beam_search(cfg, params, feats, beam, 1, None)?.remove(0).tokens,
    })
}

/// Character error rate of decoded outputs.
pub fn evaluate<T: Real>(
    cfg: &ModelConfig,
    params: &ModelParams<T>,
    data: &[Utterance<T>],
    mode: DecodeMode,
    beam: usize,
) -> Result<EvalReport, TrainingError> {
    let mut r = EvalReport::default();
    for u in data {
        let hyp = decode_tokens(cfg, params, &u.feats, mode, beam)?;
        r.errors += edit_distance(&hyp, &u.labels);
        r.reference_len += u.labels.len();
        r.utterances += 1;
    }
    Ok(r)
}

/// Teacher-forced expected-mode token error rate (end token included) and
/// mean unsmoothed cross-entropy.
pub fn teacher_forced_error<T: Real>(
    cfg: &ModelConfig,
    params: &ModelParams<T>,
    data: &[Utterance<T>],
) -> Result<(f64, f64), TrainingError> {
    let (mut wrong, mut count, mut ce) = (0usize, 0usize, 0.0);
    for u in data {
        let targets = targets_of(&u.labels);
        let fwd = forward_train(cfg, params, &u.feats, &targets, None)?;
        for (i, &t) in targets.iter().enumerate() {
            let row = fwd.logits.row(i);
            let best = (0..row.len()).fold(0, |b, c| if row[c] > row[b] { c } else { b });
            wrong += usize::from(best != t);
            count += 1;
        }
        ce += cross_entropy_label_smoothed(&fwd.logits, &targets, 0.0)?.0.as_f64();
    }
    let n = data.len().max(1) as f64;
    Ok((wrong as f64 / count.max(1) as f64, ce / n))
}

pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    RngStream::new(seed, stream_id(&[SHUFFLE_STREAM, epoch as u64])).shuffle(&mut order);
    order
}

/// Runs the remaining epochs of the schedule. `on_record` sees every metrics
/// record; `on_epoch` runs after each completed epoch (e.g. to checkpoint).
#[allow(clippy::too_many_arguments)]
pub fn run_training<T: Real>(
    cfg: &ModelConfig,
    tc: &TrainConfig,
    seed: u64,
    state: &mut TrainState<T>,
    train: &[Utterance<T>],
    eval: &[Utterance<T>],
    on_record: &mut dyn FnMut(&MetricsRecord) -> Result<(), TrainingError>,
    on_epoch: &mut dyn FnMut(&TrainState<T>) -> Result<(), TrainingError>,
) -> Result<(), TrainingError> {
    cfg.validate()?;
    tc.validate()?;
    if train.is_empty() {
        return Err(TrainingError::Config("training set is empty".into()));
    }
    let eval = if tc.eval_limit > 0 && eval.len() > tc.eval_limit { &eval[..tc.eval_limit] } else { eval };
    let total = tc.epochs + tc.mwer_epochs;
    while state.epoch < total {
        let epoch = state.epoch;
        let (phase, lr) = if epoch < tc.epochs {
            (Phase::Ce, tc.optimizer.learning_rate * tc.lr_decay.powi(epoch as i32))
        } else {
            (Phase::Mwer, tc.mwer_learning_rate)
        };
        let order = epoch_order(seed, epoch, train.len());
        for chunk in order.chunks(tc.batch_size) {
            let batch: Vec<(usize, &Utterance<T>)> = chunk.iter().map(|&i| (i, &train[i])).collect();
            let m = train_step(cfg, tc, state, &batch, phase, lr, seed, epoch)?;
            on_record(&MetricsRecord {
                step: state.step,
                phase,
                loss: m.loss,
                cer: None,
                grad_norm: Some(m.grad_norm),
            })?;
        }
        state.epoch += 1;
        if !eval.is_empty() {
            let report = evaluate(cfg, &state.params, eval, DecodeMode::Hard, 1)?;
            let (_, ce) = teacher_forced_error(cfg, &state.params, eval)?;
            on_record(&MetricsRecord {
                step: state.step,
                phase: Phase::Eval,
                loss: ce,
                cer: Some(report.cer()),
                grad_norm: None,
            })?;
        }
        on_epoch(state)?;
    }
    Ok(())
}
