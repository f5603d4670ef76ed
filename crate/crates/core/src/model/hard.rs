//! Thresholded greedy decoding, offline or over a streaming encoder.

use crate::attention::{AttentionError, FrameSource, HardDecodeState, SourceError};
use crate::multihead::{accumulate_mean, hard_head_step};
use crate::numeric::{Real, Tensor};

use super::decoder::{decode_step, DecoderState};
use super::encoder::{encode, InputSource, StreamingEncoder};
use super::{ModelConfig, ModelError, ModelParams, EOS};

/// Output length cap for an utterance with `frames` encoder frames.
pub fn max_decode_len(frames: usize) -> usize {
    2 * frames + 10
}

#[derive(Debug, Clone, PartialEq)]
pub struct HardDecodeOutput {
    /// Emitted symbols, without the end token.
    pub tokens: Vec<usize>,
    /// `selections[i][k]`: encoder frame head `k` stopped at for step `i`.
    pub selections: Vec<Vec<Option<usize>>>,
    /// `horizons[i]`: input frames consumed by the time token `i` was emitted.
    pub horizons: Vec<usize>,
    /// Whether decoding ended by emitting the end token.
    pub ended_with_eos: bool,
}

/// Hard-mode decoding of a fully available utterance: the whole input is
/// encoded first, and horizons are derived from the encoder frames the
/// attention scans touched.
pub fn decode_hard<T: Real>(
    cfg: &ModelConfig,
    params: &ModelParams<T>,
    feats: &Tensor<T>,
) -> Result<HardDecodeOutput, ModelError> {
    let (encoded, _) = encode(cfg, params, feats)?;
    let mut frames = OfflineFrames { encoded, subsampling: cfg.subsampling(), input: feats.rows(), touched: None };
    decode_loop(cfg, params, &mut frames, None)
}

/// Hard-mode decoding that pulls input frames only as the attention scan
/// needs them. A head that has run off the end of the input contributes a
/// zero context from then on. Stops at the end token, at the length cap, or
/// after `max_tokens` emitted symbols.
pub fn decode_stream<T: Real, S: InputSource<T>>(
    cfg: &ModelConfig,
    params: &ModelParams<T>,
    source: S,
    max_tokens: Option<usize>,
) -> Result<HardDecodeOutput, ModelError> {
    cfg.validate()?;
    let mut encoder = StreamingEncoder::new(cfg, params, source);
    decode_loop(cfg, params, &mut encoder, max_tokens)
}

trait DecodeFrames<T>: FrameSource<T> {
    /// Input frames needed so far.
    fn input_read(&self) -> usize;
}

impl<T: Real, S: InputSource<T>> DecodeFrames<T> for StreamingEncoder<'_, T, S> {
    fn input_read(&self) -> usize {
        StreamingEncoder::input_read(self)
    }
}

struct OfflineFrames<T> {
    encoded: Tensor<T>,
    subsampling: usize,
    input: usize,
    touched: Option<usize>,
}

impl<T: Real> FrameSource<T> for OfflineFrames<T> {
    fn frame(&mut self, j: usize) -> Result<Option<&[T]>, SourceError> {
        self.touched = Some(self.touched.map_or(j, |t| t.max(j)));
        Ok((j < self.encoded.rows()).then(|| self.encoded.row(j)))
    }
}

impl<T: Real> DecodeFrames<T> for OfflineFrames<T> {
    /// Encoder frame `j` summarizes input frames `[0, (j + 1)·s)`; looking
    /// past the last frame means the whole input was needed.
    fn input_read(&self) -> usize {
        match self.touched {
            None => 0,
            Some(j) if j >= self.encoded.rows() => self.input,
            Some(j) => ((j + 1) * self.subsampling).min(self.input),
        }
    }
}

fn decode_loop<T: Real, F: DecodeFrames<T>>(
    cfg: &ModelConfig,
    params: &ModelParams<T>,
    frames: &mut F,
    max_tokens: Option<usize>,
) -> Result<HardDecodeOutput, ModelError> {
    let head_cfg = cfg.head_config();
    let mut heads = vec![HardDecodeState::default(); head_cfg.heads];
    let mut state = DecoderState::zeros(cfg);
    let mut prev = EOS;
    let mut out = HardDecodeOutput { tokens: Vec::new(), selections: Vec::new(), horizons: Vec::new(), ended_with_eos: false };
    let mut head_ctx = vec![T::zero(); head_cfg.head_dim_h()];
    let mut context = vec![T::zero(); head_cfg.head_dim_h()];
    loop {
        if max_tokens.is_some_and(|m| out.tokens.len() >= m) {
            break;
        }
        // Another symbol fits under the cap only if the encoder output is
        // long enough; pull just the frames needed to tell.
        let needed = (out.tokens.len() + 1).saturating_sub(max_decode_len(0)).div_ceil(2);
        if needed > 0 && frames.frame(needed - 1).map_err(ModelError::Source)?.is_none() {
            break;
        }
        context.iter_mut().for_each(|c| *c = T::zero());
        let mut picks = Vec::with_capacity(head_cfg.heads);
        for (k, hs) in heads.iter_mut().enumerate() {
            if hs.finished {
                picks.push(None);
                continue;
            }
            let pick = hard_head_step(&params.attention, &head_cfg, k, state.query(), hs, frames, &mut head_ctx)
                .map_err(|e| match e {
                    AttentionError::Source(s) => ModelError::Source(s),
                    e => e.into(),
                })?;
            accumulate_mean(&mut context, &head_ctx, head_cfg.heads);
            picks.push(pick);
        }
        let (logits, next, _) = decode_step(cfg, params, prev, &state, &context)?;
        let token = argmax(&logits);
        state = next;
        if token == EOS {
            out.ended_with_eos = true;
            break;
        }
        out.tokens.push(token);
        out.selections.push(picks);
        out.horizons.push(frames.input_read());
        prev = token;
    }
    Ok(out)
}

/// Index of the largest entry; the first one wins ties.
pub(crate) fn argmax<T: Real>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
