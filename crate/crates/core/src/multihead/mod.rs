//! Multi-head monotonic chunkwise attention.
//!
//! The decoder state and every encoder frame are cut into `K` contiguous
//! slices. Each slice pair runs its own monotonic chunkwise attention, but all
//! heads score with one shared parameter set. The head contexts are averaged.

mod expected;

pub use expected::{AttentionGrads, ExpectedAttention, HeadStepCache, StepCache};

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::attention::{
    hard_decode_step, monotonic_energy, AttentionError, ChunkEnergyParams, FrameSource,
    HardDecodeState, MonotonicEnergyParams,
};
use crate::numeric::{dot, matvec_into, stream_id, Parameters, Real, RngStream, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    /// Number of heads `K`.
    pub heads: usize,
    /// Width of the encoder states.
    pub dim_h: usize,
    /// Width of the decoder state used as the attention query.
    pub dim_s: usize,
    /// Chunk width `w`.
    pub window: usize,
    /// Hidden size of the energy functions.
    pub energy_dim: usize,
}

impl HeadConfig {
    pub fn validate(&self) -> Result<(), AttentionError> {
        if self.heads == 0 {
            return Err(AttentionError::Shape("at least one head is required".into()));
        }
        if self.dim_h % self.heads != 0 || self.dim_s % self.heads != 0 {
            return Err(AttentionError::Shape(format!(
                "{} heads do not divide state widths {} and {}",
                self.heads, self.dim_h, self.dim_s
            )));
        }
        if self.window == 0 {
            return Err(AttentionError::WindowTooSmall);
        }
        if self.energy_dim == 0 {
            return Err(AttentionError::Shape("energy dimension must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim_h(&self) -> usize {
        self.dim_h / self.heads
    }

    pub fn head_dim_s(&self) -> usize {
        self.dim_s / self.heads
    }

    pub fn h_range(&self, head: usize) -> Range<usize> {
        let d = self.head_dim_h();
        head * d..(head + 1) * d
    }

    pub fn s_range(&self, head: usize) -> Range<usize> {
        let d = self.head_dim_s();
        head * d..(head + 1) * d
    }
}

/// One monotonic and one chunk energy parameter set, shared by every head.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedHeadParams<T> {
    pub monotonic: MonotonicEnergyParams<T>,
    pub chunk: ChunkEnergyParams<T>,
}

impl<T: Real> SharedHeadParams<T> {
    pub fn init(cfg: &HeadConfig, rng: &mut RngStream) -> Self {
        let (ds, dh) = (cfg.head_dim_s(), cfg.head_dim_h());
        Self {
            monotonic: MonotonicEnergyParams::init(cfg.energy_dim, ds, dh, rng),
            chunk: ChunkEnergyParams::init(cfg.energy_dim, ds, dh, rng),
        }
    }

    pub fn check(&self, cfg: &HeadConfig) -> Result<(), AttentionError> {
        let (ds, dh, d) = (cfg.head_dim_s(), cfg.head_dim_h(), cfg.energy_dim);
        let m = &self.monotonic;
        let c = &self.chunk;
        let ok = m.w_s.dims() == [d, ds]
            && m.w_h.dims() == [d, dh]
            && c.w_s.dims() == [d, ds]
            && c.w_h.dims() == [d, dh]
            && m.v.len() == d
            && c.v.len() == d;
        if !ok {
            return Err(AttentionError::Shape("shared head parameters do not match the head config".into()));
        }
        m.v_norm().map(|_| ())
    }
}

impl<T: Real> Parameters<T> for SharedHeadParams<T> {
    fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<_> =
            self.monotonic.tensors().into_iter().map(|(n, t)| (format!("monotonic.{n}"), t)).collect();
        out.extend(self.chunk.tensors().into_iter().map(|(n, t)| (format!("chunk.{n}"), t)));
        out
    }
    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out: Vec<_> =
            self.monotonic.tensors_mut().into_iter().map(|(n, t)| (format!("monotonic.{n}"), t)).collect();
        out.extend(self.chunk.tensors_mut().into_iter().map(|(n, t)| (format!("chunk.{n}"), t)));
        out
    }
}

/// Contiguous equal slices.
pub fn split_heads<T>(x: &[T], heads: usize) -> Result<Vec<&[T]>, AttentionError> {
    if heads == 0 || x.len() % heads != 0 {
        return Err(AttentionError::Shape(format!("{heads} heads do not divide width {}", x.len())));
    }
    Ok(x.chunks(x.len() / heads).collect())
}

pub fn concat_heads<T: Copy>(parts: &[&[T]]) -> Vec<T> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

/// Monotonic energy of one head slice pair under the shared parameters.
pub fn per_head_energy<T: Real>(params: &SharedHeadParams<T>, s_k: &[T], h_k: &[T]) -> Result<T, AttentionError> {
    monotonic_energy(&params.monotonic, s_k, h_k)
}

/// Gaussian noise added to monotonic energies during training, one `U × T'`
/// matrix per head. Drawn up front so a loss is a deterministic function of
/// the parameters once the tape is fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTape<T> {
    pub heads: Vec<Tensor<T>>,
}

impl<T: Real> NoiseTape<T> {
    /// Head `k` draws from its own stream derived from `(base, k)`.
    pub fn draw(seed: u64, base_stream: u64, heads: usize, steps: usize, frames: usize) -> Self {
        let heads = (0..heads)
            .map(|k| {
                let mut rng = RngStream::new(seed, stream_id(&[base_stream, k as u64]));
                Tensor::from_fn(&[steps, frames], |_| T::from_f64(rng.gaussian()))
            })
            .collect();
        Self { heads }
    }

    pub fn row(&self, head: usize, step: usize) -> &[T] {
        self.heads[head].row(step)
    }
}

/// Per-head expected alignment diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentTensor<T> {
    pub alpha: Tensor<T>,
    pub beta: Tensor<T>,
}

impl<T: Real> AlignmentTensor<T> {
    /// Checks `α ∈ [0,1]`, `Σ_j α ≤ 1`, `β ≥ 0` and `Σ_j β = Σ_j α`.
    pub fn check_invariants(&self, tol: f64) -> Result<(), String> {
        for i in 0..self.alpha.rows() {
            let a = self.alpha.row(i);
            let b = self.beta.row(i);
            if a.iter().any(|&x| x < T::zero() || x > T::one()) {
                return Err(format!("alpha row {i} leaves [0, 1]"));
            }
            if b.iter().any(|&x| x < T::zero()) {
                return Err(format!("beta row {i} has a negative entry"));
            }
            let sa: f64 = a.iter().map(|x| x.as_f64()).sum();
            let sb: f64 = b.iter().map(|x| x.as_f64()).sum();
            if sa > 1.0 + tol {
                return Err(format!("alpha row {i} sums to {sa}"));
            }
            if (sa - sb).abs() > tol {
                return Err(format!("row {i}: alpha mass {sa} vs beta mass {sb}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    Expected,
    Hard,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MthOutput<T> {
    /// Averaged contexts, `U × (dim_h / K)`.
    pub contexts: Tensor<T>,
    /// Expected mode: per-head α/β.
    pub alignments: Vec<AlignmentTensor<T>>,
    /// Hard mode: `selections[i][k]` is the frame head `k` chose at step `i`.
    pub selections: Vec<Vec<Option<usize>>>,
}

/// Runs multi-head attention for a given sequence of decoder states
/// `s` (`U × dim_s`) over encoder states `h` (`T' × dim_h`).
pub fn mth_mocha_context<T: Real>(
    params: &SharedHeadParams<T>,
    cfg: &HeadConfig,
    s: &Tensor<T>,
    h: &Tensor<T>,
    mode: AttentionMode,
    noise: Option<&NoiseTape<T>>,
) -> Result<MthOutput<T>, AttentionError> {
    cfg.validate()?;
    if s.cols() != cfg.dim_s || h.cols() != cfg.dim_h {
        return Err(AttentionError::Shape(format!(
            "states {:?} / {:?} vs config widths {} / {}",
            s.dims(),
            h.dims(),
            cfg.dim_s,
            cfg.dim_h
        )));
    }
    match mode {
        AttentionMode::Expected => {
            let engine = ExpectedAttention::new(params, cfg, h)?;
            let mut alphas = engine.initial_alignment();
            let u = s.rows();
            let t = h.rows();
            let mut contexts = Tensor::zeros(&[u, cfg.head_dim_h()]);
            let mut alignments =
                vec![AlignmentTensor { alpha: Tensor::zeros(&[u, t]), beta: Tensor::zeros(&[u, t]) }; cfg.heads];
            for i in 0..u {
                let noise_rows: Option<Vec<&[T]>> =
                    noise.map(|n| (0..cfg.heads).map(|k| n.row(k, i)).collect());
                let cache = engine.step(s.row(i), &alphas, noise_rows.as_deref(), contexts.row_mut(i));
                for (k, head) in cache.heads.iter().enumerate() {
                    alignments[k].alpha.row_mut(i).copy_from_slice(&head.alpha);
                    alignments[k].beta.row_mut(i).copy_from_slice(&head.beta);
                }
                alphas = cache.heads.into_iter().map(|hc| hc.alpha).collect();
            }
            Ok(MthOutput { contexts, alignments, selections: Vec::new() })
        }
        AttentionMode::Hard => {
            params.check(cfg)?;
            let mut states = vec![HardDecodeState::default(); cfg.heads];
            let mut frames = h.clone();
            let mut contexts = Tensor::zeros(&[s.rows(), cfg.head_dim_h()]);
            let mut selections = Vec::with_capacity(s.rows());
            let mut head_ctx = vec![T::zero(); cfg.head_dim_h()];
            for i in 0..s.rows() {
                let mut picks = Vec::with_capacity(cfg.heads);
                for (k, state) in states.iter_mut().enumerate() {
                    if state.finished {
                        picks.push(None);
                        continue;
                    }
                    let q = HardQuery::new(params, &s.row(i)[cfg.s_range(k)])?;
                    let pick = hard_decode_step(
                        state,
                        &mut frames,
                        cfg.h_range(k),
                        |f| q.monotonic(params, f),
                        |f| q.chunk(params, f),
                        cfg.window,
                        &mut head_ctx,
                    )?;
                    accumulate_mean(contexts.row_mut(i), &head_ctx, cfg.heads);
                    picks.push(pick);
                }
                selections.push(picks);
            }
            Ok(MthOutput { contexts, alignments: Vec::new(), selections })
        }
    }
}

pub(crate) fn accumulate_mean<T: Real>(dst: &mut [T], src: &[T], heads: usize) {
    let scale = T::one() / T::from_usize(heads);
    for (d, &v) in dst.iter_mut().zip(src) {
        *d += scale * v;
    }
}

/// Query-side projections of one head slice, reused across the frames a hard
/// decode step scans.
pub struct HardQuery<T> {
    mono_query: Vec<T>,
    chunk_query: Vec<T>,
    scoring: Vec<T>,
    scratch: std::cell::RefCell<Vec<T>>,
}

impl<T: Real> HardQuery<T> {
    pub fn new(params: &SharedHeadParams<T>, s_k: &[T]) -> Result<Self, AttentionError> {
        let d = params.monotonic.hidden();
        let mut mono_query = vec![T::zero(); d];
        matvec_into(params.monotonic.w_s.data(), s_k, &mut mono_query);
        for (q, &b) in mono_query.iter_mut().zip(params.monotonic.b.data()) {
            *q += b;
        }
        let mut chunk_query = vec![T::zero(); params.chunk.v.len()];
        matvec_into(params.chunk.w_s.data(), s_k, &mut chunk_query);
        for (q, &b) in chunk_query.iter_mut().zip(params.chunk.b.data()) {
            *q += b;
        }
        Ok(Self {
            mono_query,
            chunk_query,
            scoring: params.monotonic.scoring_vector()?,
            scratch: std::cell::RefCell::new(vec![T::zero(); d]),
        })
    }

    pub fn monotonic(&self, params: &SharedHeadParams<T>, h_k: &[T]) -> T {
        let mut key = self.scratch.borrow_mut();
        key.resize(self.mono_query.len(), T::zero());
        matvec_into(params.monotonic.w_h.data(), h_k, &mut key);
        for (x, &q) in key.iter_mut().zip(&self.mono_query) {
            *x = (*x + q).tanh();
        }
        dot(&self.scoring, &key) + params.monotonic.offset()
    }

    pub fn chunk(&self, params: &SharedHeadParams<T>, h_k: &[T]) -> T {
        let mut key = self.scratch.borrow_mut();
        key.resize(self.chunk_query.len(), T::zero());
        matvec_into(params.chunk.w_h.data(), h_k, &mut key);
        for (x, &q) in key.iter_mut().zip(&self.chunk_query) {
            *x = (*x + q).tanh();
        }
        dot(params.chunk.v.data(), &key)
    }
}

/// Hard-mode attention for one head over an arbitrary frame source.
pub fn hard_head_step<T: Real, S: FrameSource<T> + ?Sized>(
    params: &SharedHeadParams<T>,
    cfg: &HeadConfig,
    head: usize,
    s: &[T],
    state: &mut HardDecodeState,
    frames: &mut S,
    head_ctx: &mut [T],
) -> Result<Option<usize>, AttentionError> {
    let q = HardQuery::new(params, &s[cfg.s_range(head)])?;
    hard_decode_step(
        state,
        frames,
        cfg.h_range(head),
        |f| q.monotonic(params, f),
        |f| q.chunk(params, f),
        cfg.window,
        head_ctx,
    )
}

/// Gradients of `Σ_i ⟨g_contexts[i], c_i⟩` for expected-mode attention:
/// `(shared parameter grads, g_s, g_h)`.
pub fn mth_mocha_backward<T: Real>(
    params: &SharedHeadParams<T>,
    cfg: &HeadConfig,
    s: &Tensor<T>,
    h: &Tensor<T>,
    noise: Option<&NoiseTape<T>>,
    g_contexts: &Tensor<T>,
) -> Result<(SharedHeadParams<T>, Tensor<T>, Tensor<T>), AttentionError> {
    cfg.validate()?;
    let engine = ExpectedAttention::new(params, cfg, h)?;
    let u = s.rows();
    let mut caches = Vec::with_capacity(u);
    let mut alphas_in = Vec::with_capacity(u);
    let mut alphas = engine.initial_alignment();
    let mut ctx = vec![T::zero(); cfg.head_dim_h()];
    for i in 0..u {
        let noise_rows: Option<Vec<&[T]>> = noise.map(|n| (0..cfg.heads).map(|k| n.row(k, i)).collect());
        let cache = engine.step(s.row(i), &alphas, noise_rows.as_deref(), &mut ctx);
        alphas_in.push(alphas);
        alphas = cache.heads.iter().map(|hc| hc.alpha.clone()).collect();
        caches.push(cache);
    }
    let mut grads = engine.new_grads();
    let mut g_s = s.zeros_like();
    let mut g_alpha: Vec<Vec<T>> = vec![vec![T::zero(); h.rows()]; cfg.heads];
    for i in (0..u).rev() {
        g_alpha = engine.step_backward(
            s.row(i),
            &alphas_in[i],
            &caches[i],
            g_contexts.row(i),
            &g_alpha,
            &mut grads,
            g_s.row_mut(i),
        );
    }
    let mut g_params = params.clone();
    g_params.zero();
    let mut g_h = h.zeros_like();
    engine.finish_backward(grads, &mut g_params, &mut g_h)?;
    Ok((g_params, g_s, g_h))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_examples() {
        let x: Vec<f64> = (0..1024).map(f64::from).collect();
        let parts = split_heads(&x, 4).unwrap();
        assert_eq!(parts.len(), 4);
        assert!(parts.iter().all(|p| p.len() == 256));
        assert_eq!(concat_heads(&parts), x);
        assert_eq!(split_heads(&x, 1).unwrap()[0], &x[..]);
        assert!(split_heads(&x[..10], 4).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = HeadConfig { heads: 4, dim_h: 64, dim_s: 64, window: 2, energy_dim: 16 };
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.head_dim_h(), 16);
        cfg.heads = 3;
        assert!(cfg.validate().is_err());
        cfg.heads = 4;
        cfg.window = 0;
        assert_eq!(cfg.validate(), Err(AttentionError::WindowTooSmall));
    }

    #[test]
    fn identical_slices_identical_energies() {
        let cfg = HeadConfig { heads: 3, dim_h: 6, dim_s: 9, window: 2, energy_dim: 4 };
        let mut rng = RngStream::new(3, 0);
        let p = SharedHeadParams::<f64>::init(&cfg, &mut rng);
        let s_k = [0.1, -0.4, 0.9];
        let h_k = [1.0, 0.5];
        let s = concat_heads(&[&s_k[..], &s_k, &s_k]);
        let h = concat_heads(&[&h_k[..], &h_k, &h_k]);
        let e: Vec<f64> = split_heads(&s, 3)
            .unwrap()
            .iter()
            .zip(split_heads(&h, 3).unwrap())
            .map(|(a, b)| per_head_energy(&p, a, b).unwrap())
            .collect();
        assert!(e.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn zero_weights_energy_is_offset() {
        let cfg = HeadConfig { heads: 2, dim_h: 4, dim_s: 4, window: 2, energy_dim: 3 };
        let mut rng = RngStream::new(4, 0);
        let mut p = SharedHeadParams::<f64>::init(&cfg, &mut rng);
        p.monotonic.w_s.fill(0.0);
        p.monotonic.w_h.fill(0.0);
        let e = per_head_energy(&p, &[0.3, 0.2], &[1.0, -1.0]).unwrap();
        assert_eq!(e, -4.0);
    }

    #[test]
    fn noise_tape_streams_differ_per_head() {
        let tape = NoiseTape::<f64>::draw(5, 77, 2, 3, 4);
        assert_ne!(tape.heads[0], tape.heads[1]);
        assert_eq!(tape, NoiseTape::<f64>::draw(5, 77, 2, 3, 4));
    }
}
