//! Self-contained verification runs shared by the `oracle` command and the
//! test suites. Each run builds its own random instances from a seed and
//! reports the worst deviation it saw against a fixed tolerance.

use std::fmt;
use std::time::Instant;

use crate::attention::{
    chunk_energy, clamp_probability, expected_alignment, expected_chunk_attention, monotonic_energy, soft_context,
    MonotonicEnergyParams,
};
use crate::augment::{apply_specaugment, MaskAxis, SpecAugmentPolicy};
use crate::data::Utterance;
use crate::model::{
    backward, decode_hard, decode_stream, forward_train, forward_train_unchecked, log_softmax, FeatureSource,
    HorizonGuard, ModelConfig, ModelError, ModelParams, EOS,
};
use crate::multihead::{mth_mocha_context, AttentionMode, HeadConfig, NoiseTape, SharedHeadParams};
use crate::numeric::{sigmoid, stream_id, Parameters, RngStream, Tensor};
use crate::oracle::{
    enumerate_alignments, exhaustive_expected_error, finite_difference_grad, ridders_difference_grad,
    GradCheckReport, OracleError, DEFAULT_STEP,
};
use crate::training::{beam_search, TrainingError, cross_entropy_label_smoothed, mwer_from_scores, mwer_loss};

/// Result of one verification run.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed deviation (or violation count), compared to `tolerance`.
    pub measured: f64,
    pub tolerance: f64,
    pub seconds: f64,
    pub detail: String,
}

impl fmt::Display for SuiteOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: measured {:.3e} (tolerance {:.1e}, {:.2}s) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance,
            self.seconds,
            self.detail
        )
    }
}

fn outcome(name: &'static str, measured: f64, tolerance: f64, started: Instant, detail: String) -> SuiteOutcome {
    SuiteOutcome { name, passed: measured < tolerance, measured, tolerance, seconds: started.elapsed().as_secs_f64(), detail }
}

fn failed(name: &'static str, started: Instant, detail: String) -> SuiteOutcome {
    SuiteOutcome {
        name,
        passed: false,
        measured: f64::INFINITY,
        tolerance: 0.0,
        seconds: started.elapsed().as_secs_f64(),
        detail,
    }
}

/// Random selection probabilities with some mass near 0 and 1.
fn random_probabilities(rng: &mut RngStream, u: usize, t: usize) -> Tensor<f64> {
    Tensor::from_fn(&[u, t], |_| match rng.below(6) {
        0 => rng.uniform_range(0.0, 1e-3),
        1 => rng.uniform_range(1.0 - 1e-3, 1.0),
        _ => rng.uniform_range(0.0, 1.0),
    })
}

fn random_rows(rng: &mut RngStream, rows: usize, cols: usize, scale: f64) -> Tensor<f64> {
    Tensor::from_fn(&[rows, cols], |_| scale * rng.gaussian())
}

pub const ALIGNMENT_TOLERANCE: f64 = 1e-12;

/// Expected alignments against path enumeration on random instances with at
/// most 4 output steps and 6 frames; also checks that the enumerated mass
/// (no-selection paths included) is one.
pub fn alignment_oracle(seed: u64, instances: usize) -> SuiteOutcome {
    let started = Instant::now();
    let mut rng = RngStream::new(seed, stream_id(&[0xa119]));
    let mut worst: f64 = 0.0;
    let mut worst_mass: f64 = 0.0;
    for _ in 0..instances {
        let u = 1 + rng.below(4);
        let t = 1 + rng.below(6);
        let p = random_probabilities(&mut rng, u, t);
        let alpha = match expected_alignment(&p) {
            Ok(a) => a,
            Err(e) => return failed("alignment oracle", started, e.to_string()),
        };
        let rows: Vec<Vec<f64>> = (0..u).map(|i| p.row(i).to_vec()).collect();
        let (exact, mass) = match enumerate_alignments(&rows) {
            Ok(x) => x,
            Err(e) => return failed("alignment oracle", started, e.to_string()),
        };
        for (i, row) in exact.iter().enumerate() {
            for (j, &a) in row.iter().enumerate() {
                worst = worst.max((a - alpha.get2(i, j)).abs());
            }
        }
        worst_mass = worst_mass.max((mass - 1.0).abs());
    }
    outcome(
        "alignment oracle",
        worst.max(worst_mass),
        ALIGNMENT_TOLERANCE,
        started,
        format!("{instances} instances, max |Δα| {worst:.2e}, max |mass−1| {worst_mass:.2e}"),
    )
}

pub const CHUNK_MASS_TOLERANCE: f64 = 1e-9;

/// `Σ_j β = Σ_j α` per row for random widths, and `β = α` bit for bit at `w = 1`.
pub fn chunk_mass(seed: u64, instances: usize) -> SuiteOutcome {
    let started = Instant::now();
    let mut rng = RngStream::new(seed, stream_id(&[0xc4a5]));
    let mut worst: f64 = 0.0;
    let mut identity_violations = 0usize;
    for _ in 0..instances {
        let u = 1 + rng.below(6);
        let t = 1 + rng.below(12);
        let w = 1 + rng.below(5);
        let p = random_probabilities(&mut rng, u, t);
        let energies = random_rows(&mut rng, u, t, 3.0);
        let run = expected_alignment(&p).and_then(|alpha| {
            let beta = expected_chunk_attention(&alpha, &energies, w)?;
            let unit = expected_chunk_attention(&alpha, &energies, 1)?;
            Ok((alpha, beta, unit))
        });
        let (alpha, beta, unit) = match run {
            Ok(x) => x,
            Err(e) => return failed("chunk mass", started, e.to_string()),
        };
        for i in 0..u {
            let sa: f64 = alpha.row(i).iter().sum();
            let sb: f64 = beta.row(i).iter().sum();
            worst = worst.max((sa - sb).abs());
        }
        identity_violations += alpha.data().iter().zip(unit.data()).filter(|(a, b)| a.to_bits() != b.to_bits()).count();
    }
    let mut o = outcome(
        "chunk mass",
        worst,
        CHUNK_MASS_TOLERANCE,
        started,
        format!("{instances} instances, max |Σβ−Σα| {worst:.2e}, w=1 mismatches {identity_violations}"),
    );
    o.passed &= identity_violations == 0;
    o
}

pub const REDUCTION_TOLERANCE: f64 = 1e-12;

/// Single-head multi-head attention against single-head chunkwise attention
/// assembled from the kernels: energies, clamped sigmoid, alignment
/// recurrence, chunk weights and a weighted sum of encoder states.
pub fn single_head_reduction(seed: u64, instances: usize) -> SuiteOutcome {
    let started = Instant::now();
    let mut rng = RngStream::new(seed, stream_id(&[0x4ed1]));
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let cfg = HeadConfig {
            heads: 1,
            dim_h: 1 + rng.below(6),
            dim_s: 1 + rng.below(6),
            window: 1 + rng.below(4),
            energy_dim: 1 + rng.below(5),
        };
        let mut params = SharedHeadParams::<f64>::init(&cfg, &mut rng);
        // Move r away from its initial value so selections are not all rare.
        params.monotonic.r.data_mut()[0] = rng.uniform_range(-2.0, 2.0);
        let u = 1 + rng.below(4);
        let t = 1 + rng.below(8);
        let s = random_rows(&mut rng, u, cfg.dim_s, 1.0);
        let h = random_rows(&mut rng, t, cfg.dim_h, 1.0);
        let run = || -> Result<f64, Box<dyn std::error::Error>> {
            let multi = mth_mocha_context(&params, &cfg, &s, &h, AttentionMode::Expected, None)?;
            let mut p = Tensor::zeros(&[u, t]);
            let mut ce = Tensor::zeros(&[u, t]);
            for i in 0..u {
                for j in 0..t {
                    let e = monotonic_energy(&params.monotonic, s.row(i), h.row(j))?;
                    p.set2(i, j, clamp_probability(sigmoid(e)));
                    ce.set2(i, j, chunk_energy(&params.chunk, s.row(i), h.row(j))?);
                }
            }
            let alpha = expected_alignment(&p)?;
            let beta = expected_chunk_attention(&alpha, &ce, cfg.window)?;
            let single = soft_context(&beta, &h)?;
            Ok(multi.contexts.max_abs_diff(&single))
        };
        match run() {
            Ok(d) => worst = worst.max(d),
            Err(e) => return failed("single-head reduction", started, e.to_string()),
        }
    }
    outcome("single-head reduction", worst, REDUCTION_TOLERANCE, started, format!("{instances} instances"))
}

pub const ENERGY_SCALE_TOLERANCE: f64 = 1e-12;

/// Monotonic energies are unchanged when `v` is multiplied by `c > 0`.
pub fn energy_scale_invariance(seed: u64, instances: usize) -> SuiteOutcome {
    let started = Instant::now();
    let mut rng = RngStream::new(seed, stream_id(&[0xe5ca]));
    let mut worst: f64 = 0.0;
    for n in 0..instances {
        let (d, ds, dh) = (1 + rng.below(16), 1 + rng.below(8), 1 + rng.below(8));
        let params = MonotonicEnergyParams::<f64>::init(d, ds, dh, &mut rng);
        let s: Vec<f64> = (0..ds).map(|_| rng.gaussian()).collect();
        let h: Vec<f64> = (0..dh).map(|_| rng.gaussian()).collect();
        let c = match n % 4 {
            0 => 1e-3,
            1 => 1e3,
            _ => (4.0 * rng.gaussian()).exp(),
        };
        let mut scaled = params.clone();
        scaled.v.data_mut().iter_mut().for_each(|x| *x *= c);
        match (monotonic_energy(&params, &s, &h), monotonic_energy(&scaled, &s, &h)) {
            (Ok(a), Ok(b)) => worst = worst.max((a - b).abs()),
            (Err(e), _) | (_, Err(e)) => return failed("energy scale invariance", started, e.to_string()),
        }
    }
    outcome("energy scale invariance", worst, ENERGY_SCALE_TOLERANCE, started, format!("{instances} instances"))
}

pub const END_TO_END_TOLERANCE: f64 = 1e-5;
pub const MWER_GRAD_TOLERANCE: f64 = 1e-6;

/// The configuration of the end-to-end gradient check: two encoder layers
/// with pooling after the first, two decoder layers, two heads, widths of at
/// most eight.
pub fn gradcheck_config() -> ModelConfig {
    ModelConfig {
        feature_dim: 3,
        encoder_layers: 2,
        encoder_width: 8,
        pool_after: vec![1],
        pool_width: 2,
        decoder_layers: 2,
        decoder_width: 8,
        vocab_size: 4,
        embedding_dim: 3,
        context_dim: 4,
        heads: 2,
        window: 2,
        energy_dim: 4,
    }
}

/// Seed of the end-to-end instance. See the README for how it was chosen.
pub const GRADCHECK_SEED: u64 = 3;

/// The end-to-end instance: parameters drawn from `N(0, 0.8²)` with `r = 0`,
/// 8 input frames, targets `[2, EOS]`, and a frozen noise tape.
pub struct GradcheckInstance {
    pub cfg: ModelConfig,
    pub params: ModelParams<f64>,
    pub feats: Tensor<f64>,
    pub targets: Vec<usize>,
    pub noise: NoiseTape<f64>,
}

impl GradcheckInstance {
    pub fn new(seed: u64) -> Result<Self, ModelError> {
        let cfg = gradcheck_config();
        let mut params = ModelParams::<f64>::init(&cfg, seed)?;
        let mut g = RngStream::new(seed, 991);
        for (_, t) in params.tensors_mut() {
            t.data_mut().iter_mut().for_each(|x| *x = 0.8 * g.gaussian());
        }
        params.attention.monotonic.r.data_mut()[0] = 0.0;
        let mut rng = RngStream::new(seed, 77);
        let frames = 8;
        let feats = Tensor::from_fn(&[frames, cfg.feature_dim], |_| rng.gaussian());
        let targets = vec![2, EOS];
        let noise = NoiseTape::draw(seed, 3, cfg.heads, targets.len(), cfg.encoded_len(frames));
        Ok(Self { cfg, params, feats, targets, noise })
    }

    pub fn loss(&self, params: &ModelParams<f64>) -> Result<f64, TrainingError> {
        let f = forward_train(&self.cfg, params, &self.feats, &self.targets, Some(&self.noise))?;
        let (l, _) = cross_entropy_label_smoothed(&f.logits, &self.targets, 0.1)?;
        Ok(l)
    }

    /// Analytic gradient, flattened, with the per-tensor block sizes.
    pub fn analytic(&self) -> Result<(Vec<(String, usize)>, Vec<f64>), TrainingError> {
        let fwd = forward_train(&self.cfg, &self.params, &self.feats, &self.targets, Some(&self.noise))?;
        let (_, g_logits) =
            cross_entropy_label_smoothed(&fwd.logits, &self.targets, 0.1)?;
        let grads = backward(&self.cfg, &self.params, &fwd, &g_logits)?;
        let blocks = grads.tensors().into_iter().map(|(n, t)| (n, t.len())).collect();
        Ok((blocks, grads.flatten()))
    }

    fn numeric(&self, ridders: bool) -> Result<Vec<f64>, OracleError> {
        let mut probe = self.params.clone();
        let theta = self.params.flatten();
        let f = |x: &[f64]| {
            probe.set_flat(x);
            self.loss(&probe).unwrap_or(f64::NAN)
        };
        if ridders {
            Ok(ridders_difference_grad(f, &theta, RIDDERS_STEP)?.0)
        } else {
            finite_difference_grad(f, &theta, DEFAULT_STEP)
        }
    }
}

/// Initial step of the extrapolated central differences.
pub const RIDDERS_STEP: f64 = 1e-2;

/// End-to-end gradient check. The verdict uses central differences
/// extrapolated to zero step; the plain fixed-step comparison is returned as
/// a second report for reference.
pub fn end_to_end_gradcheck(seed: u64) -> (SuiteOutcome, Option<GradCheckReport>, Option<GradCheckReport>) {
    let started = Instant::now();
    let name = "end-to-end gradient check";
    let run = || -> Result<(GradCheckReport, GradCheckReport, usize), Box<dyn std::error::Error>> {
        let inst = GradcheckInstance::new(seed)?;
        let (blocks, analytic) = inst.analytic()?;
        let extrapolated = inst.numeric(true)?;
        let plain = inst.numeric(false)?;
        Ok((
            GradCheckReport::compare(&blocks, &analytic, &extrapolated, RIDDERS_STEP, END_TO_END_TOLERANCE),
            GradCheckReport::compare(&blocks, &analytic, &plain, DEFAULT_STEP, END_TO_END_TOLERANCE),
            analytic.len(),
        ))
    };
    match run() {
        Ok((main, plain, n)) => {
            let detail = format!(
                "{n} parameters, {} failing coordinates; fixed step {:.0e}: max rel err {:.2e}",
                main.failures.len(),
                DEFAULT_STEP,
                plain.max_relative_error()
            );
            let mut o = outcome(name, main.max_relative_error(), END_TO_END_TOLERANCE, started, detail);
            o.passed = main.passed();
            (o, Some(main), Some(plain))
        }
        Err(e) => (failed(name, started, e.to_string()), None, None),
    }
}

/// MWER score gradients against central differences on random N-best lists.
pub fn mwer_gradcheck(seed: u64, instances: usize) -> SuiteOutcome {
    let started = Instant::now();
    let name = "MWER score gradient check";
    let mut rng = RngStream::new(seed, stream_id(&[0x3e12]));
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = 1 + rng.below(8);
        let scores: Vec<f64> = (0..n).map(|_| -3.0 * rng.uniform()).collect();
        let errors: Vec<f64> = (0..n).map(|_| rng.below(6) as f64).collect();
        let lambda = rng.uniform_range(0.0, 0.1);
        let ce = rng.uniform_range(0.0, 3.0);
        let analytic = match mwer_from_scores(&scores, &errors, lambda, ce) {
            Ok(o) => o.score_grads,
            Err(e) => return failed(name, started, e.to_string()),
        };
        let numeric = finite_difference_grad(
            |s| mwer_from_scores(s, &errors, lambda, ce).map_or(f64::NAN, |o| o.loss),
            &scores,
            DEFAULT_STEP,
        );
        let numeric = match numeric {
            Ok(g) => g,
            Err(e) => return failed(name, started, e.to_string()),
        };
        let blocks = [("scores".to_string(), n)];
        worst = worst.max(GradCheckReport::compare(&blocks, &analytic, &numeric, DEFAULT_STEP, MWER_GRAD_TOLERANCE).max_relative_error());
    }
    outcome(name, worst, MWER_GRAD_TOLERANCE, started, format!("{instances} random N-best lists"))
}

pub const MWER_ORACLE_TOLERANCE: f64 = 1e-9;

/// The three-token model of the MWER oracle (two symbols plus the end token).
pub fn mwer_oracle_config() -> ModelConfig {
    ModelConfig {
        feature_dim: 2,
        encoder_layers: 1,
        encoder_width: 4,
        pool_after: vec![],
        pool_width: 2,
        decoder_layers: 1,
        decoder_width: 4,
        vocab_size: 3,
        embedding_dim: 2,
        context_dim: 4,
        heads: 2,
        window: 2,
        energy_dim: 3,
    }
}

/// N-best expected error with `N = V^L` equals the exhaustive expectation over
/// every output of length at most `L`; with `λ = 0` and equal errors the score
/// gradients are exactly zero.
pub fn mwer_oracle(seed: u64, instances: usize) -> SuiteOutcome {
    const MAX_LEN: usize = 3;
    let started = Instant::now();
    let name = "MWER oracle";
    let cfg = mwer_oracle_config();
    let v = cfg.vocab_size;
    let n = v.pow(MAX_LEN as u32);
    let mut worst: f64 = 0.0;
    let mut nonzero_grads = 0usize;
    for inst in 0..instances {
        let run = || -> Result<(f64, usize), Box<dyn std::error::Error>> {
            let mut params = ModelParams::<f64>::init(&cfg, seed.wrapping_add(inst as u64))?;
            let mut g = RngStream::new(seed, stream_id(&[0x3e14, inst as u64]));
            for (_, t) in params.tensors_mut() {
                t.data_mut().iter_mut().for_each(|x| *x = g.gaussian());
            }
            let frames = 2 + g.below(4);
            let feats = Tensor::from_fn(&[frames, cfg.feature_dim], |_| g.gaussian());
            let ref_len = g.below(MAX_LEN + 1);
            let reference: Vec<usize> = (0..ref_len).map(|_| 1 + g.below(v - 1)).collect();
            let nbest = beam_search(&cfg, &params, &feats, n, n, Some(MAX_LEN))?;
            let approx = mwer_loss(&nbest, &reference, 0.0, 0.0)?.expected_error;
            let next = |prefix: &[usize]| -> Result<Vec<f64>, OracleError> {
                let mut tokens = prefix.to_vec();
                tokens.push(EOS);
                let f = forward_train_unchecked(&cfg, &params, &feats, &tokens).map_err(|e| OracleError::Model(e.to_string()))?;
                Ok(log_softmax(f.logits.row(prefix.len())))
            };
            let exact = exhaustive_expected_error(next, v, EOS, &reference, MAX_LEN)?;
            let scores: Vec<f64> = nbest.iter().map(|h| h.score).collect();
            let flat = mwer_from_scores(&scores, &vec![2.0; scores.len()], 0.0, 0.0)?;
            let nonzero = flat.score_grads.iter().filter(|&&g| g != 0.0).count() + usize::from(flat.loss != 0.0);
            Ok(((approx - exact).abs(), nonzero))
        };
        match run() {
            Ok((d, nz)) => {
                worst = worst.max(d);
                nonzero_grads += nz;
            }
            Err(e) => return failed(name, started, e.to_string()),
        }
    }
    let mut o = outcome(
        name,
        worst,
        MWER_ORACLE_TOLERANCE,
        started,
        format!("{instances} instances, V={v}, L={MAX_LEN}, N={n}; nonzero equal-error gradients {nonzero_grads}"),
    );
    o.passed &= nonzero_grads == 0;
    o
}

/// SpecAugment bound and reproducibility check over `applications` seeded
/// draws with the given policy.
pub fn specaugment_bounds(seed: u64, applications: usize, policy: &SpecAugmentPolicy) -> SuiteOutcome {
    let started = Instant::now();
    let name = "SpecAugment bounds";
    let mut violations = 0usize;
    let mut shape_rng = RngStream::new(seed, stream_id(&[0x5ae0]));
    for i in 0..applications {
        let frames = 1 + shape_rng.below(400);
        let bins = [13, 40, 80][shape_rng.below(3)];
        let feats = Tensor::<f32>::from_fn(&[frames, bins], |k| 1.0 + (k % 7) as f32);
        let stream = stream_id(&[0x5ae1, i as u64]);
        let run = apply_specaugment(&feats, policy, &mut RngStream::new(seed, stream))
            .and_then(|a| apply_specaugment(&feats, policy, &mut RngStream::new(seed, stream)).map(|b| (a, b)));
        let ((out, blocks), (again, blocks_again)) = match run {
            Ok(x) => x,
            Err(e) => return failed(name, started, e.to_string()),
        };
        if blocks != blocks_again || out != again {
            violations += 1;
        }
        let expected_count = policy.time_masks + policy.freq_masks;
        if blocks.len() != expected_count {
            violations += 1;
        }
        for b in &blocks {
            let (bound, extent) = match b.axis {
                MaskAxis::Time => (policy.time_bound(frames), frames),
                MaskAxis::Freq => (policy.freq_bound(bins), bins),
            };
            let len_ok = if bound == 0 { b.len == 0 } else { b.len < bound };
            if !len_ok || b.start + b.len > extent {
                violations += 1;
            }
        }
        for r in 0..frames {
            for c in 0..bins {
                let masked = blocks.iter().any(|b| match b.axis {
                    MaskAxis::Time => (b.start..b.start + b.len).contains(&r),
                    MaskAxis::Freq => (b.start..b.start + b.len).contains(&c),
                });
                let v = out.get2(r, c);
                if (masked && v != 0.0) || (!masked && v != feats.get2(r, c)) {
                    violations += 1;
                }
            }
        }
    }
    let mut o = outcome(name, violations as f64, 0.5, started, format!("{applications} applications, {violations} violations"));
    o.passed = violations == 0;
    o
}

/// Streaming against offline hard decoding over `data`, then, for every
/// emitted token, a rerun whose input faults on any frame past the horizon
/// recorded for that token.
pub fn streaming_causality(cfg: &ModelConfig, params: &ModelParams<f32>, data: &[Utterance<f32>]) -> SuiteOutcome {
    let started = Instant::now();
    let name = "streaming causality";
    let mut mismatches = 0usize;
    let mut faults = 0usize;
    let mut reruns = 0usize;
    for (idx, u) in data.iter().enumerate() {
        let offline = match decode_hard(cfg, params, &u.feats) {
            Ok(o) => o,
            Err(e) => return failed(name, started, format!("utterance {idx}: {e}")),
        };
        let stream = match decode_stream(cfg, params, FeatureSource::new(&u.feats), None) {
            Ok(o) => o,
            Err(e) => return failed(name, started, format!("utterance {idx}: {e}")),
        };
        if stream != offline {
            mismatches += 1;
        }
        for (i, &limit) in stream.horizons.iter().enumerate() {
            reruns += 1;
            match decode_stream(cfg, params, HorizonGuard::new(&u.feats, limit), Some(i + 1)) {
                Ok(partial) if partial.tokens[..] == stream.tokens[..=i] => {}
                Ok(_) => mismatches += 1,
                Err(_) => faults += 1,
            }
        }
    }
    let bad = mismatches + faults;
    let mut o = outcome(
        name,
        bad as f64,
        0.5,
        started,
        format!("{} utterances, {reruns} guarded reruns, {mismatches} mismatches, {faults} faults", data.len()),
    );
    o.passed = bad == 0;
    o
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_runs_pass() {
        assert!(alignment_oracle(1, 20).passed);
        assert!(chunk_mass(1, 20).passed);
        assert!(single_head_reduction(1, 10).passed);
        assert!(energy_scale_invariance(1, 20).passed);
        assert!(mwer_gradcheck(1, 10).passed);
    }

    #[test]
    fn display_marks_verdict() {
        let o = chunk_mass(2, 3);
        assert!(o.to_string().starts_with("PASS chunk mass"));
    }
}
