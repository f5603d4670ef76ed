//! Browser bindings for three small views of the attention machinery. Each
//! entry point returns a JSON document that `www/index.html` draws onto a
//! canvas. The `*_json` functions are plain Rust so they can be tested
//! natively; the `#[wasm_bindgen]` wrappers only convert errors.

use mthm::attention::expected_alignment;
use mthm::augment::{apply_specaugment, MaskAxis, SpecAugmentPolicy};
use mthm::multihead::{mth_mocha_context, AttentionMode, HeadConfig, NoiseTape, SharedHeadParams};
use mthm::numeric::{RngStream, Tensor};
use mthm::oracle::enumerate_alignments;
use serde::Serialize;
use wasm_bindgen::prelude::*;

const MAX_STEPS: usize = 64;
const MAX_FRAMES: usize = 256;
const HEAD_DIM: usize = 4;
const STATE_DIM: usize = 4;

#[derive(Serialize)]
struct AttentionView {
    steps: usize,
    frames: usize,
    /// `alpha[k][i][j]` for head `k`.
    alpha: Vec<Vec<Vec<f64>>>,
    beta: Vec<Vec<Vec<f64>>>,
    /// `hard[i][k]`: frame head `k` stopped at on step `i`, if any.
    hard: Vec<Vec<Option<usize>>>,
}

/// Expected and hard attention of randomly initialised shared-parameter
/// heads over random encoder and decoder states.
#[allow(clippy::too_many_arguments)]
pub fn attention_json(
    seed: u64,
    steps: usize,
    frames: usize,
    heads: usize,
    window: usize,
    offset: f64,
    gain: f64,
    noise: bool,
) -> Result<String, String> {
    if !(1..=MAX_STEPS).contains(&steps) || !(1..=MAX_FRAMES).contains(&frames) {
        return Err(format!("steps must lie in 1..={MAX_STEPS} and frames in 1..={MAX_FRAMES}"));
    }
    if !(1..=8).contains(&heads) {
        return Err("heads must lie in 1..=8".into());
    }
    let cfg = HeadConfig { heads, dim_h: heads * HEAD_DIM, dim_s: heads * STATE_DIM, window, energy_dim: 8 };
    let mut rng = RngStream::new(seed, 1);
    let mut params = SharedHeadParams::<f64>::init(&cfg, &mut rng);
    params.monotonic.r.data_mut()[0] = offset;
    params.monotonic.g.data_mut()[0] = gain;
    let s = Tensor::from_fn(&[steps, cfg.dim_s], |_| rng.gaussian());
    let h = Tensor::from_fn(&[frames, cfg.dim_h], |_| rng.gaussian());
    let tape = noise.then(|| NoiseTape::draw(seed, 2, heads, steps, frames));
    let expected = mth_mocha_context(&params, &cfg, &s, &h, AttentionMode::Expected, tape.as_ref())
        .map_err(|e| e.to_string())?;
    let hard = mth_mocha_context(&params, &cfg, &s, &h, AttentionMode::Hard, None).map_err(|e| e.to_string())?;
    let rows = |t: &Tensor<f64>| (0..t.rows()).map(|i| t.row(i).to_vec()).collect::<Vec<_>>();
    let view = AttentionView {
        steps,
        frames,
        alpha: expected.alignments.iter().map(|a| rows(&a.alpha)).collect(),
        beta: expected.alignments.iter().map(|a| rows(&a.beta)).collect(),
        hard: hard.selections,
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct MaskView {
    frames: usize,
    bins: usize,
    /// Row-major `frames × bins`, 1 where the cell was zeroed.
    masked: Vec<u8>,
    blocks: Vec<Block>,
}

#[derive(Serialize)]
struct Block {
    axis: &'static str,
    start: usize,
    len: usize,
}

/// Time and frequency masks drawn for a `frames × bins` input.
#[allow(clippy::too_many_arguments)]
pub fn specaugment_json(
    seed: u64,
    frames: usize,
    bins: usize,
    max_time: usize,
    max_freq: usize,
    time_masks: usize,
    freq_masks: usize,
    time_fraction_cap: f64,
) -> Result<String, String> {
    if !(1..=2000).contains(&frames) || !(1..=256).contains(&bins) {
        return Err("frames must lie in 1..=2000 and bins in 1..=256".into());
    }
    let policy = SpecAugmentPolicy { max_time, max_freq, time_masks, freq_masks, time_fraction_cap };
    let ones = Tensor::<f32>::from_fn(&[frames, bins], |_| 1.0);
    let (out, blocks) =
        apply_specaugment(&ones, &policy, &mut RngStream::new(seed, 3)).map_err(|e| e.to_string())?;
    let view = MaskView {
        frames,
        bins,
        masked: out.data().iter().map(|&v| u8::from(v == 0.0)).collect(),
        blocks: blocks
            .iter()
            .map(|b| Block {
                axis: match b.axis {
                    MaskAxis::Time => "time",
                    MaskAxis::Freq => "freq",
                },
                start: b.start,
                len: b.len,
            })
            .collect(),
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct OracleView {
    steps: usize,
    frames: usize,
    p: Vec<Vec<f64>>,
    recurrence: Vec<Vec<f64>>,
    enumeration: Vec<Vec<f64>>,
    max_abs_error: f64,
}

/// The alignment recurrence next to brute-force enumeration of every
/// monotonic path, for random selection probabilities.
pub fn alignment_oracle_json(seed: u64, steps: usize, frames: usize) -> Result<String, String> {
    if !(1..=5).contains(&steps) || !(1..=7).contains(&frames) {
        return Err("enumeration is limited to 1..=5 steps and 1..=7 frames".into());
    }
    let mut rng = RngStream::new(seed, 4);
    let p = Tensor::from_fn(&[steps, frames], |_| rng.uniform());
    let fast = expected_alignment(&p).map_err(|e| e.to_string())?;
    let rows = |t: &Tensor<f64>| (0..t.rows()).map(|i| t.row(i).to_vec()).collect::<Vec<_>>();
    let p_rows = rows(&p);
    let (slow, _) = enumerate_alignments(&p_rows).map_err(|e| e.to_string())?;
    let recurrence = rows(&fast);
    let max_abs_error = recurrence
        .iter()
        .flatten()
        .zip(slow.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let view = OracleView { steps, frames, p: p_rows, recurrence, enumeration: slow, max_abs_error };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn attention(
    seed: u32,
    steps: usize,
    frames: usize,
    heads: usize,
    window: usize,
    offset: f64,
    gain: f64,
    noise: bool,
) -> Result<String, JsError> {
    attention_json(seed.into(), steps, frames, heads, window, offset, gain, noise).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn specaugment(
    seed: u32,
    frames: usize,
    bins: usize,
    max_time: usize,
    max_freq: usize,
    time_masks: usize,
    freq_masks: usize,
    time_fraction_cap: f64,
) -> Result<String, JsError> {
    specaugment_json(seed.into(), frames, bins, max_time, max_freq, time_masks, freq_masks, time_fraction_cap)
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn alignment_oracle(seed: u32, steps: usize, frames: usize) -> Result<String, JsError> {
    alignment_oracle_json(seed.into(), steps, frames).map_err(|e| JsError::new(&e))
}
