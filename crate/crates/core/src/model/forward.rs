//! Expected-mode (teacher-forced) forward and backward passes, and the
//! incremental expected-mode decoder used by beam search.

use crate::multihead::{AlignmentTensor, ExpectedAttention, NoiseTape, StepCache};
use crate::numeric::{Parameters, Real, Tensor};

use super::decoder::{decode_step, decode_step_backward, DecodeStepCache, DecoderState};
use super::encoder::{encode, encode_backward, EncoderCache};
use super::{ModelConfig, ModelError, ModelParams, EOS};

struct StepRecord<T> {
    alphas_in: Vec<Vec<T>>,
    query: Vec<T>,
    attention: StepCache<T>,
    decoder: DecodeStepCache<T>,
}

/// Everything the backward pass needs from a teacher-forced forward pass.
pub struct TrainForward<T> {
    /// `U × V` logits, one row per target token.
    pub logits: Tensor<T>,
    /// Per-head α/β diagnostics.
    pub alignments: Vec<AlignmentTensor<T>>,
    pub encoded: Tensor<T>,
    encoder: EncoderCache<T>,
    steps: Vec<StepRecord<T>>,
}

pub fn validate_targets(cfg: &ModelConfig, targets: &[usize]) -> Result<(), ModelError> {
    match targets.last() {
        None => return Err(ModelError::Targets("empty target sequence".into())),
        Some(&t) if t != EOS => return Err(ModelError::Targets("targets must end with the end token".into())),
        _ => {}
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= cfg.vocab_size) {
        return Err(ModelError::Token(bad));
    }
    Ok(())
}

/// Teacher-forced pass: step `i` attends with the decoder state after step
/// `i − 1` and consumes target `i − 1` (the end token at `i = 0`).
pub fn forward_train<T: Real>(
    cfg: &ModelConfig,
    params: &ModelParams<T>,
    feats: &Tensor<T>,
    targets: &[usize],
    noise: Option<&NoiseTape<T>>,
) -> Result<TrainForward<T>, ModelError> {
    validate_targets(cfg, targets)?;
    let (encoded, encoder) = encode(cfg, params, feats)?;
    let head_cfg = cfg.head_config();
    let engine = ExpectedAttention::new(&params.attention, &head_cfg, &encoded)?;
    let (u, t) = (targets.len(), encoded.rows());
    if let Some(n) = noise {
        if n.heads.len() != head_cfg.heads || n.heads.iter().any(|m| m.dims() != [u, t]) {
            return Err(ModelError::Config("noise tape does not match the utterance".into()));
        }
    }
    let mut logits = Tensor::zeros(&[u, cfg.vocab_size]);
    let mut alignments =
        vec![AlignmentTensor { alpha: Tensor::zeros(&[u, t]), beta: Tensor::zeros(&[u, t]) }; head_cfg.heads];
    let mut state = DecoderState::zeros(cfg);
    let mut alphas = engine.initial_alignment();
    let mut context = vec![T::zero(); head_cfg.head_dim_h()];
    let mut steps = Vec::with_capacity(u);
    for i in 0..u {
        let prev = if i == 0 { EOS } else { targets[i - 1] };
        let query = state.query().to_vec();
        let noise_rows: Option<Vec<&[T]>> = noise.map(|n| (0..head_cfg.heads).map(|k| n.row(k, i)).collect());
        let attention = engine.step(&query, &alphas, noise_rows.as_deref(), &mut context);
        let (row, next, decoder) = decode_step(cfg, params, prev, &state, &context)?;
        logits.row_mut(i).copy_from_slice(&row);
        for (k, hc) in attention.heads.iter().enumerate() {
            alignments[k].alpha.row_mut(i).copy_from_slice(&hc.alpha);
            alignments[k].beta.row_mut(i).copy_from_slice(&hc.beta);
        }
        let next_alphas = attention.heads.iter().map(|hc| hc.alpha.clone()).collect();
        steps.push(StepRecord { alphas_in: std::mem::replace(&mut alphas, next_alphas), query, attention, decoder });
        state = next;
    }
    Ok(TrainForward { logits, alignments, encoded, encoder, steps })
}

/// Parameter gradients of a loss whose gradient w.r.t. the logits is `g_logits`.
pub fn backward<T: Real>(
    cfg: &ModelConfig,
    params: &ModelParams<T>,
    fwd: &TrainForward<T>,
    g_logits: &Tensor<T>,
) -> Result<ModelParams<T>, ModelError> {
    let mut grads = params.clone();
    grads.zero();
    backward_into(cfg, params, fwd, g_logits, &mut grads)?;
    Ok(grads)
}

/// Like [`backward`] but accumulates into existing gradients.
pub fn backward_into<T: Real>(
    cfg: &ModelConfig,
    params: &ModelParams<T>,
    fwd: &TrainForward<T>,
    g_logits: &Tensor<T>,
    grads: &mut ModelParams<T>,
) -> Result<(), ModelError> {
    let head_cfg = cfg.head_config();
    let engine = ExpectedAttention::new(&params.attention, &head_cfg, &fwd.encoded)?;
    let mut attn_grads = engine.new_grads();
    let t = fwd.encoded.rows();
    let mut g_state = DecoderState::zeros(cfg);
    let mut g_alpha = vec![vec![T::zero(); t]; head_cfg.heads];
    for (i, rec) in fwd.steps.iter().enumerate().rev() {
        let g_context = decode_step_backward(cfg, params, &rec.decoder, g_logits.row(i), &mut g_state, grads);
        let mut g_query = vec![T::zero(); cfg.decoder_width];
        g_alpha = engine.step_backward(
            &rec.query,
            &rec.alphas_in,
            &rec.attention,
            &g_context,
            &g_alpha,
            &mut attn_grads,
            &mut g_query,
        );
        let top = g_state.layers.last_mut().expect("decoder layer");
        for (a, b) in top.h.iter_mut().zip(g_query) {
            *a += b;
        }
    }
    let mut g_encoded = fwd.encoded.zeros_like();
    engine.finish_backward(attn_grads, &mut grads.attention, &mut g_encoded)?;
    encode_backward(params, &fwd.encoder, &g_encoded, grads);
    Ok(())
}

/// `log softmax` of a logit row.
pub fn log_softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<T>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

/// Sum of log-probabilities the model assigns to `tokens` under teacher forcing.
pub fn sequence_log_prob<T: Real>(
    cfg: &ModelConfig,
    params: &ModelParams<T>,
    feats: &Tensor<T>,
    tokens: &[usize],
) -> Result<T, ModelError> {
    let fwd = forward_train_unchecked(cfg, params, feats, tokens)?;
    let mut total = T::zero();
    for (i, &tok) in tokens.iter().enumerate() {
        total += log_softmax(fwd.logits.row(i))[tok];
    }
    Ok(total)
}

/// Teacher-forced logits for any token prefix (no end-token requirement).
pub fn forward_train_unchecked<T: Real>(
    cfg: &ModelConfig,
    params: &ModelParams<T>,
    feats: &Tensor<T>,
    tokens: &[usize],
) -> Result<TrainForward<T>, ModelError> {
    if tokens.is_empty() {
        return Err(ModelError::Targets("empty token sequence".into()));
    }
    let mut padded = tokens.to_vec();
    if *padded.last().expect("non-empty") != EOS {
        // The final step's input is the second-to-last token, so appending the
        // end token only changes which row is last; drop it afterwards.
        padded.push(EOS);
        let mut fwd = forward_train(cfg, params, feats, &padded, None)?;
        fwd.steps.pop();
        let u = tokens.len();
        let v = cfg.vocab_size;
        fwd.logits = Tensor::new(vec![u, v], fwd.logits.data()[..u * v].to_vec())?;
        for a in fwd.alignments.iter_mut() {
            let t = a.alpha.cols();
            a.alpha = Tensor::new(vec![u, t], a.alpha.data()[..u * t].to_vec())?;
            a.beta = Tensor::new(vec![u, t], a.beta.data()[..u * t].to_vec())?;
        }
        return Ok(fwd);
    }
    forward_train(cfg, params, feats, &padded, None)
}

/// Incremental expected-mode decoding over one utterance, without noise.
pub struct ExpectedDecoder<'a, T> {
    cfg: &'a ModelConfig,
    params: &'a ModelParams<T>,
    engine: ExpectedAttention<'a, T>,
}

#[derive(Debug, Clone)]
pub struct ExpectedDecoderState<T> {
    pub alphas: Vec<Vec<T>>,
    pub decoder: DecoderState<T>,
    pub prev_token: usize,
}

impl<'a, T: Real> ExpectedDecoder<'a, T> {
    pub fn new(cfg: &'a ModelConfig, params: &'a ModelParams<T>, encoded: &'a Tensor<T>) -> Result<Self, ModelError> {
        let head_cfg = cfg.head_config();
        let engine = ExpectedAttention::new(&params.attention, &head_cfg, encoded)?;
        Ok(Self { cfg, params, engine })
    }

    pub fn frames(&self) -> usize {
        self.engine.frames()
    }

    pub fn start(&self) -> ExpectedDecoderState<T> {
        ExpectedDecoderState {
            alphas: self.engine.initial_alignment(),
            decoder: DecoderState::zeros(self.cfg),
            prev_token: EOS,
        }
    }

    /// Log-probabilities of the next token and the state after this step;
    /// set `prev_token` on the returned state before stepping again.
    pub fn step(&self, state: &ExpectedDecoderState<T>) -> Result<(Vec<T>, ExpectedDecoderState<T>), ModelError> {
        let mut context = vec![T::zero(); self.cfg.head_config().head_dim_h()];
        let attention = self.engine.step(state.decoder.query(), &state.alphas, None, &mut context);
        let (logits, decoder, _) = decode_step(self.cfg, self.params, state.prev_token, &state.decoder, &context)?;
        let alphas = attention.heads.into_iter().map(|h| h.alpha).collect();
        Ok((log_softmax(&logits), ExpectedDecoderState { alphas, decoder, prev_token: EOS }))
    }
}
