use crate::numeric::{matvec_acc, matvec_into, matvec_t_acc, outer_acc, Real};

use super::lstm::{lstm_step, lstm_step_backward, LstmCache, LstmState};
use super::{ModelConfig, ModelError, ModelParams};

/// Recurrent state of the decoder stack. The top layer's output is the
/// attention query for the next step.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState<T> {
    pub layers: Vec<LstmState<T>>,
}

impl<T: Real> DecoderState<T> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self { layers: (0..cfg.decoder_layers).map(|_| LstmState::zeros(cfg.decoder_width)).collect() }
    }

    pub fn query(&self) -> &[T] {
        &self.layers.last().expect("at least one decoder layer").h
    }
}

#[derive(Debug, Clone)]
pub struct DecodeStepCache<T> {
    prev_token: usize,
    context: Vec<T>,
    layers: Vec<LstmCache<T>>,
    top: Vec<T>,
}

/// One teacher-forced decoder step: embeds `prev_token`, concatenates the
/// projected attention context to the input of every layer, and maps the top
/// state to logits.
pub fn decode_step<T: Real>(
    cfg: &ModelConfig,
    params: &ModelParams<T>,
    prev_token: usize,
    state: &DecoderState<T>,
    context: &[T],
) -> Result<(Vec<T>, DecoderState<T>, DecodeStepCache<T>), ModelError> {
    if prev_token >= cfg.vocab_size {
        return Err(ModelError::Token(prev_token));
    }
    let c_dim = cfg.context_dim;
    let mut projected = vec![T::zero(); c_dim];
    matvec_into(params.context_proj.data(), context, &mut projected);

    let mut input: Vec<T> = params.embedding.row(prev_token).to_vec();
    input.extend_from_slice(&projected);
    let mut next = DecoderState { layers: Vec::with_capacity(cfg.decoder_layers) };
    let mut caches = Vec::with_capacity(cfg.decoder_layers);
    for (l, p) in params.decoder.iter().enumerate() {
        let (st, cache) = lstm_step(p, &input, &state.layers[l]);
        input.clear();
        input.extend_from_slice(&st.h);
        input.extend_from_slice(&projected);
        next.layers.push(st);
        caches.push(cache);
    }
    let top = next.query().to_vec();
    let mut logits = params.output_b.data().to_vec();
    matvec_acc(params.output_w.data(), &top, &mut logits);
    Ok((
        logits,
        next,
        DecodeStepCache { prev_token, context: context.to_vec(), layers: caches, top },
    ))
}

/// Backward through [`decode_step`]. `g_state` carries gradients w.r.t. the
/// step's output state (from the next step and from the next attention
/// query); it is replaced by gradients w.r.t. the input state. Returns the
/// gradient w.r.t. the raw (unprojected) context.
pub fn decode_step_backward<T: Real>(
    cfg: &ModelConfig,
    params: &ModelParams<T>,
    cache: &DecodeStepCache<T>,
    g_logits: &[T],
    g_state: &mut DecoderState<T>,
    grads: &mut ModelParams<T>,
) -> Vec<T> {
    let c_dim = cfg.context_dim;
    let top = cfg.decoder_layers - 1;
    for (gb, &g) in grads.output_b.data_mut().iter_mut().zip(g_logits) {
        *gb += g;
    }
    outer_acc(g_logits, &cache.top, grads.output_w.data_mut());
    matvec_t_acc(params.output_w.data(), g_logits, &mut g_state.layers[top].h);

    let mut g_projected = vec![T::zero(); c_dim];
    let mut g_from_above: Option<Vec<T>> = None;
    for l in (0..cfg.decoder_layers).rev() {
        let p = &params.decoder[l];
        let mut g_out = g_state.layers[l].clone();
        if let Some(g) = g_from_above.take() {
            for (a, b) in g_out.h.iter_mut().zip(g) {
                *a += b;
            }
        }
        let mut g_in = vec![T::zero(); p.input()];
        let g_prev = lstm_step_backward(p, &cache.layers[l], &g_out, &mut grads.decoder[l], &mut g_in);
        g_state.layers[l] = g_prev;
        let split = p.input() - c_dim;
        for (a, &b) in g_projected.iter_mut().zip(&g_in[split..]) {
            *a += b;
        }
        if l == 0 {
            let row = grads.embedding.row_mut(cache.prev_token);
            for (a, &b) in row.iter_mut().zip(&g_in[..split]) {
                *a += b;
            }
        } else {
            g_from_above = Some(g_in[..split].to_vec());
        }
    }
    outer_acc(&g_projected, &cache.context, grads.context_proj.data_mut());
    let mut g_context = vec![T::zero(); cache.context.len()];
    matvec_t_acc(params.context_proj.data(), &g_projected, &mut g_context);
    g_context
}
