use crate::attention::{
    alignment_row, alignment_row_backward, chunk_row, chunk_row_backward, clamp_probability,
    initial_alignment, project_keys, project_keys_backward, score_row, score_row_backward,
    soft_context_row, soft_context_row_backward, AttentionError, ScoreCache, ScoreGrads, PROBABILITY_FLOOR,
};
use crate::numeric::{sigmoid, sigmoid_grad_from_output, Parameters, Real, Tensor};

use super::{accumulate_mean, HeadConfig, SharedHeadParams};

/// Expected-mode attention over one utterance's encoder states, advanced one
/// output step at a time so a recurrent decoder can sit in between.
pub struct ExpectedAttention<'a, T> {
    params: &'a SharedHeadParams<T>,
    cfg: HeadConfig,
    h: &'a Tensor<T>,
    mono_keys: Vec<Tensor<T>>,
    chunk_keys: Vec<Tensor<T>>,
    scoring: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct HeadStepCache<T> {
    pub energies: Vec<T>,
    /// Selection probabilities after clamping.
    pub p: Vec<T>,
    /// Whether the clamp was active (gradient blocked).
    clamped: Vec<bool>,
    q: Vec<T>,
    pub alpha: Vec<T>,
    pub chunk_energies: Vec<T>,
    pub beta: Vec<T>,
    pub context: Vec<T>,
    mono: ScoreCache<T>,
    chunk: ScoreCache<T>,
}

#[derive(Debug, Clone)]
pub struct StepCache<T> {
    pub heads: Vec<HeadStepCache<T>>,
}

/// Gradient accumulators that live for the duration of one backward pass.
pub struct AttentionGrads<T> {
    params: SharedHeadParams<T>,
    scoring: Vec<T>,
    mono_keys: Vec<Tensor<T>>,
    chunk_keys: Vec<Tensor<T>>,
    h: Tensor<T>,
}

impl<'a, T: Real> ExpectedAttention<'a, T> {
    pub fn new(params: &'a SharedHeadParams<T>, cfg: &HeadConfig, h: &'a Tensor<T>) -> Result<Self, AttentionError> {
        cfg.validate()?;
        params.check(cfg)?;
        if h.cols() != cfg.dim_h {
            return Err(AttentionError::Shape(format!("encoder width {} vs {}", h.cols(), cfg.dim_h)));
        }
        let mono_keys = (0..cfg.heads).map(|k| project_keys(&params.monotonic.w_h, h, cfg.h_range(k))).collect();
        let chunk_keys = (0..cfg.heads).map(|k| project_keys(&params.chunk.w_h, h, cfg.h_range(k))).collect();
        Ok(Self { params, cfg: *cfg, h, mono_keys, chunk_keys, scoring: params.monotonic.scoring_vector()? })
    }

    pub fn frames(&self) -> usize {
        self.h.rows()
    }

    pub fn initial_alignment(&self) -> Vec<Vec<T>> {
        vec![initial_alignment(self.frames()); self.cfg.heads]
    }

    /// One output step for every head. Writes the head-averaged context into
    /// `context` and returns the caches, whose `alpha` rows feed the next step.
    pub fn step(
        &self,
        s: &[T],
        alpha_prev: &[Vec<T>],
        noise: Option<&[&[T]]>,
        context: &mut [T],
    ) -> StepCache<T> {
        let t = self.frames();
        let w = self.cfg.window;
        let lo = T::from_f64(PROBABILITY_FLOOR);
        let hi = T::one() - lo;
        context.iter_mut().for_each(|c| *c = T::zero());
        let mut heads = Vec::with_capacity(self.cfg.heads);
        for k in 0..self.cfg.heads {
            let s_k = &s[self.cfg.s_range(k)];
            let mono_p = &self.params.monotonic;
            let mut energies = vec![T::zero(); t];
            let mono = score_row(&mono_p.w_s, &mono_p.b, &self.scoring, mono_p.offset(), s_k, &self.mono_keys[k], &mut energies);
            let mut p = vec![T::zero(); t];
            let mut clamped = vec![false; t];
            for j in 0..t {
                let eps = noise.map_or(T::zero(), |n| n[k][j]);
                let raw = sigmoid(energies[j] + eps);
                clamped[j] = raw < lo || raw > hi;
                p[j] = clamp_probability(raw);
            }
            let mut alpha = vec![T::zero(); t];
            let mut q = vec![T::zero(); t];
            alignment_row(&alpha_prev[k], &p, &mut alpha, &mut q);

            let chunk_p = &self.params.chunk;
            let mut chunk_energies = vec![T::zero(); t];
            let chunk = score_row(&chunk_p.w_s, &chunk_p.b, chunk_p.v.data(), T::zero(), s_k, &self.chunk_keys[k], &mut chunk_energies);
            let mut beta = vec![T::zero(); t];
            chunk_row(&alpha, &chunk_energies, w, &mut beta);
            let mut head_ctx = vec![T::zero(); self.cfg.head_dim_h()];
            soft_context_row(&beta, self.h, self.cfg.h_range(k), &mut head_ctx);
            accumulate_mean(context, &head_ctx, self.cfg.heads);
            heads.push(HeadStepCache {
                energies,
                p,
                clamped,
                q,
                alpha,
                chunk_energies,
                beta,
                context: head_ctx,
                mono,
                chunk,
            });
        }
        StepCache { heads }
    }

    pub fn new_grads(&self) -> AttentionGrads<T> {
        let mut params = self.params.clone();
        params.zero();
        AttentionGrads {
            params,
            scoring: vec![T::zero(); self.scoring.len()],
            mono_keys: self.mono_keys.iter().map(Tensor::zeros_like).collect(),
            chunk_keys: self.chunk_keys.iter().map(Tensor::zeros_like).collect(),
            h: self.h.zeros_like(),
        }
    }

    /// Backward through one step. `g_alpha_next[k]` is the gradient w.r.t.
    /// this step's α for head `k` arriving from later steps. Accumulates
    /// into `grads` and `g_s`; returns the gradient w.r.t. `alpha_prev`.
    #[allow(clippy::too_many_arguments)]
    pub fn step_backward(
        &self,
        s: &[T],
        alpha_prev: &[Vec<T>],
        cache: &StepCache<T>,
        g_context: &[T],
        g_alpha_next: &[Vec<T>],
        grads: &mut AttentionGrads<T>,
        g_s: &mut [T],
    ) -> Vec<Vec<T>> {
        let t = self.frames();
        let w = self.cfg.window;
        let inv_k = T::one() / T::from_usize(self.cfg.heads);
        let g_head_ctx: Vec<T> = g_context.iter().map(|&g| g * inv_k).collect();
        let mut out = Vec::with_capacity(self.cfg.heads);
        for (k, hc) in cache.heads.iter().enumerate() {
            let range = self.cfg.s_range(k);
            let s_k = &s[range.clone()];

            let mut g_beta = vec![T::zero(); t];
            soft_context_row_backward(&hc.beta, self.h, self.cfg.h_range(k), &g_head_ctx, &mut g_beta, &mut grads.h);

            let mut g_alpha = g_alpha_next[k].clone();
            let mut g_u = vec![T::zero(); t];
            chunk_row_backward(&hc.alpha, &hc.chunk_energies, w, &g_beta, &mut g_alpha, &mut g_u);

            let mut unused_offset = T::zero();
            let chunk_g = &mut grads.params.chunk;
            score_row_backward(
                &self.params.chunk.w_s,
                self.params.chunk.v.data(),
                s_k,
                &hc.chunk,
                &g_u,
                ScoreGrads {
                    w_s: &mut chunk_g.w_s,
                    b: &mut chunk_g.b,
                    scoring: chunk_g.v.data_mut(),
                    offset: &mut unused_offset,
                    s: &mut g_s[range.clone()],
                    keys: &mut grads.chunk_keys[k],
                },
            );

            let mut g_prev = vec![T::zero(); t];
            let mut g_p = vec![T::zero(); t];
            alignment_row_backward(&hc.p, &hc.q, &g_alpha, &mut g_prev, &mut g_p);
            let g_e: Vec<T> = (0..t)
                .map(|j| if hc.clamped[j] { T::zero() } else { g_p[j] * sigmoid_grad_from_output(hc.p[j]) })
                .collect();

            let mono_g = &mut grads.params.monotonic;
            score_row_backward(
                &self.params.monotonic.w_s,
                &self.scoring,
                s_k,
                &hc.mono,
                &g_e,
                ScoreGrads {
                    w_s: &mut mono_g.w_s,
                    b: &mut mono_g.b,
                    scoring: &mut grads.scoring,
                    offset: &mut mono_g.r.data_mut()[0],
                    s: &mut g_s[range],
                    keys: &mut grads.mono_keys[k],
                },
            );
            debug_assert_eq!(alpha_prev[k].len(), t);
            out.push(g_prev);
        }
        out
    }

    /// Folds the accumulated key, scoring-vector and context gradients into
    /// parameter gradients and encoder-state gradients.
    pub fn finish_backward(
        &self,
        grads: AttentionGrads<T>,
        g_params: &mut SharedHeadParams<T>,
        g_h: &mut Tensor<T>,
    ) -> Result<(), AttentionError> {
        g_params.add_scaled(&grads.params, T::one());
        self.params.monotonic.accumulate_scoring_grad(&grads.scoring, &mut g_params.monotonic)?;
        for k in 0..self.cfg.heads {
            let range = self.cfg.h_range(k);
            project_keys_backward(&self.params.monotonic.w_h, self.h, range.clone(), &grads.mono_keys[k], &mut g_params.monotonic.w_h, g_h);
            project_keys_backward(&self.params.chunk.w_h, self.h, range, &grads.chunk_keys[k], &mut g_params.chunk.w_h, g_h);
        }
        for (d, &s) in g_h.data_mut().iter_mut().zip(grads.h.data()) {
            *d += s;
        }
        Ok(())
    }
}
