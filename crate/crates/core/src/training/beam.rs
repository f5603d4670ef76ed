use serde::Serialize;

use crate::model::{
    encode, max_decode_len, ExpectedDecoder, ExpectedDecoderState, ModelConfig, ModelError, ModelParams, EOS,
};
use crate::numeric::{Real, Tensor};

/// A decoded token sequence and its log-probability under the model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hypothesis {
    /// Emitted symbols, end token excluded.
    pub tokens: Vec<usize>,
    pub score: f64,
    /// `false` when the length cap cut the sequence before an end token.
    pub ended: bool,
}

impl Hypothesis {
    /// The token sequence the score was computed over.
    pub fn scored_tokens(&self) -> Vec<usize> {
        let mut t = self.tokens.clone();
        if self.ended {
            t.push(EOS);
        }
        t
    }
}

/// Length-bounded beam search over the noise-free expected-mode decoder.
///
/// At every step the `beam` best one-token extensions of the live prefixes
/// survive; those ending in the end token move to the finished list. The
/// `n` best finished hypotheses are returned, best first. `max_len` defaults
/// to the decoding length cap for the utterance.
pub fn beam_search<T: Real>(
    cfg: &ModelConfig,
    params: &ModelParams<T>,
    feats: &Tensor<T>,
    beam: usize,
    n: usize,
    max_len: Option<usize>,
) -> Result<Vec<Hypothesis>, ModelError> {
    if n == 0 || beam < n {
        return Err(ModelError::Config(format!("beam {beam} must be at least n-best size {n} ≥ 1")));
    }
    let (encoded, _) = encode(cfg, params, feats)?;
    let dec = ExpectedDecoder::new(cfg, params, &encoded)?;
    let max_len = max_len.unwrap_or_else(|| max_decode_len(dec.frames()));
    let mut live: Vec<(Vec<usize>, f64, ExpectedDecoderState<T>)> = vec![(Vec::new(), 0.0, dec.start())];
    let mut finished = Vec::new();
    while !live.is_empty() {
        let mut expanded = Vec::with_capacity(live.len());
        let mut candidates = Vec::new();
        for (b, (_, score, state)) in live.iter().enumerate() {
            let (lp, next) = dec.step(state)?;
            for (tok, l) in lp.iter().enumerate() {
                candidates.push((b, tok, score + l.as_f64()));
            }
            expanded.push(next);
        }
        candidates.sort_by(|a, b| b.2.total_cmp(&a.2));
        candidates.truncate(beam);
        let mut next_live = Vec::with_capacity(candidates.len());
        for (b, tok, score) in candidates {
            let mut tokens = live[b].0.clone();
            if tok == EOS {
                finished.push(Hypothesis { tokens, score, ended: true });
                continue;
            }
            tokens.push(tok);
            if tokens.len() == max_len {
                finished.push(Hypothesis { tokens, score, ended: false });
                continue;
            }
            let mut state = expanded[b].clone();
            state.prev_token = tok;
            next_live.push((tokens, score, state));
        }
        live = next_live;
    }
    finished.sort_by(|a, b| b.score.total_cmp(&a.score));
    finished.truncate(n);
    Ok(finished)
}

/// Expected-mode greedy decoding (beam of one).
pub fn greedy_decode<T: Real>(
    cfg: &ModelConfig,
    params: &ModelParams<T>,
    feats: &Tensor<T>,
) -> Result<Hypothesis, ModelError> {
    let mut best = beam_search(cfg, params, feats, 1, 1, None)?;
    Ok(best.remove(0))
}
