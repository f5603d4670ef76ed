use std::fs;

use mthm::data::{Split, SyntheticTaskSpec};
use mthm::model::{
    backward, decode_hard, decode_stream, forward_train, load_checkpoint, read_tensors, save_checkpoint,
    sequence_log_prob, FeatureSource, HorizonGuard, ModelConfig, ModelParams, EOS,
};
use mthm::numeric::{Parameters, RngStream, Tensor};
use mthm::oracle::{finite_difference_grad, relative_error};
use mthm::suites::streaming_causality;
use mthm::training::beam_search;

fn small_config() -> ModelConfig {
    ModelConfig {
        feature_dim: 5,
        encoder_layers: 2,
        encoder_width: 8,
        pool_after: vec![1],
        pool_width: 2,
        decoder_layers: 1,
        decoder_width: 6,
        vocab_size: 4,
        embedding_dim: 3,
        context_dim: 4,
        heads: 2,
        window: 2,
        energy_dim: 4,
    }
}

/// Random parameters with a positive energy offset so hard attention
/// actually selects frames.
fn eager_params(cfg: &ModelConfig, seed: u64) -> ModelParams<f64> {
    let mut p = ModelParams::<f64>::init(cfg, seed).unwrap();
    let mut rng = RngStream::new(seed, 99);
    for (_, t) in p.tensors_mut() {
        for x in t.data_mut() {
            *x += 0.3 * rng.gaussian();
        }
    }
    p.attention.monotonic.r.data_mut()[0] = 1.0;
    p
}

fn single(p: &ModelParams<f64>) -> ModelParams<f32> {
    let mut q = ModelParams::<f32>::zeros_for(&small_config()).unwrap();
    q.copy_from(p).unwrap();
    q
}

fn feats(frames: usize, dim: usize, seed: u64) -> Tensor<f64> {
    let mut rng = RngStream::new(seed, 5);
    Tensor::from_fn(&[frames, dim], |_| rng.gaussian())
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let params = ModelParams::<f32>::init(&cfg, 4).unwrap();
    let path = dir.path().join("m.mthm");
    save_checkpoint(&path, &cfg, &params).unwrap();

    let bytes = fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"MTHM");
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize, params.tensors().len());
    assert!(dir.path().join("m.json").is_file());

    let (cfg2, params2) = load_checkpoint::<f32>(&path).unwrap();
    assert_eq!(cfg2, cfg);
    assert_eq!(params2, params);
    let names: Vec<String> = read_tensors::<f32>(&path).unwrap().into_iter().map(|(n, _)| n).collect();
    let expected: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    assert_eq!(names, expected);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let path = dir.path().join("m.mthm");
    save_checkpoint(&path, &cfg, &ModelParams::<f32>::init(&cfg, 1).unwrap()).unwrap();
    let good = fs::read(&path).unwrap();

    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    fs::write(&path, &bad_magic).unwrap();
    assert!(load_checkpoint::<f32>(&path).is_err());

    fs::write(&path, &good[..good.len() - 3]).unwrap();
    assert!(load_checkpoint::<f32>(&path).is_err());

    fs::write(&path, &good).unwrap();
    let mut other = cfg.clone();
    other.encoder_width = 12;
    fs::write(dir.path().join("m.json"), serde_json::to_string(&other).unwrap()).unwrap();
    assert!(load_checkpoint::<f32>(&path).is_err());
}

#[test]
fn full_model_gradient_matches_differences_with_two_heads() {
    let cfg = small_config();
    let params = eager_params(&cfg, 11);
    let x = feats(7, cfg.feature_dim, 2);
    let targets = [2, 1, EOS];
    let fwd = forward_train(&cfg, &params, &x, &targets, None).unwrap();
    let g_logits = {
        let mut g = fwd.logits.zeros_like();
        for (i, &t) in targets.iter().enumerate() {
            let lp = mthm::model::log_softmax(fwd.logits.row(i));
            for (c, v) in g.row_mut(i).iter_mut().enumerate() {
                *v = lp[c].exp() - if c == t { 1.0 } else { 0.0 };
            }
        }
        g
    };
    let grads = backward(&cfg, &params, &fwd, &g_logits).unwrap();
    let analytic = grads.flatten();
    let theta = params.flatten();
    let numeric = finite_difference_grad(
        |th| {
            let mut p = params.clone();
            p.set_flat(th);
            -sequence_log_prob(&cfg, &p, &x, &targets).unwrap()
        },
        &theta,
        1e-5,
    )
    .unwrap();
    // Only coordinates with gradients well above the difference noise floor
    // can be compared at this tolerance.
    let mut checked = 0;
    for (a, n) in analytic.iter().zip(&numeric) {
        if a.abs().max(n.abs()) > 1e-4 {
            assert!(relative_error(*a, *n) < 1e-5, "analytic {a} numeric {n}");
            checked += 1;
        }
    }
    assert!(checked > theta.len() / 4, "only {checked} coordinates compared");
}

#[test]
fn streaming_matches_offline_and_respects_horizons() {
    let cfg = small_config();
    let params = single(&eager_params(&cfg, 3));
    for seed in 0..10 {
        let x = feats(9 + seed as usize, cfg.feature_dim, seed).cast::<f32>();
        let offline = decode_hard(&cfg, &params, &x).unwrap();
        let stream = decode_stream(&cfg, &params, FeatureSource::new(&x), None).unwrap();
        assert_eq!(stream, offline);
        for (i, &h) in stream.horizons.iter().enumerate() {
            assert!(h <= x.rows());
            let partial = decode_stream(&cfg, &params, HorizonGuard::new(&x, h), Some(i + 1)).unwrap();
            assert_eq!(partial.tokens[..], stream.tokens[..=i]);
        }
    }
}

#[test]
fn horizon_guard_faults_when_reads_run_ahead() {
    let cfg = small_config();
    let params = single(&eager_params(&cfg, 3));
    let x = feats(12, cfg.feature_dim, 1).cast::<f32>();
    let full = decode_stream(&cfg, &params, FeatureSource::new(&x), None).unwrap();
    let first = *full.horizons.first().expect("at least one token");
    assert!(first > 0);
    assert!(decode_stream(&cfg, &params, HorizonGuard::new(&x, first - 1), Some(1)).is_err());
}

#[test]
fn causality_suite_passes_on_toy_utterances() {
    let spec = SyntheticTaskSpec { test_size: 6, feature_dim: 5, vocab: 3, ..SyntheticTaskSpec::default() };
    let data = spec.generate::<f32>(Split::Test).unwrap();
    let cfg = small_config();
    let params = single(&eager_params(&cfg, 8));
    let o = streaming_causality(&cfg, &params, &data);
    assert!(o.passed, "{o}");
}

#[test]
fn beam_search_finds_the_best_short_sequence() {
    let cfg = ModelConfig { vocab_size: 3, ..small_config() };
    let params = eager_params(&cfg, 21);
    let x = feats(6, cfg.feature_dim, 4);
    let max_len = 4;
    // Exhaustive search: ended sequences shorter than the cap, plus the
    // unended ones that reach it.
    let mut best = (f64::NEG_INFINITY, Vec::new());
    let mut stack: Vec<Vec<usize>> = vec![vec![]];
    while let Some(prefix) = stack.pop() {
        let scored = if prefix.len() == max_len {
            prefix.clone()
        } else {
            for v in 1..cfg.vocab_size {
                let mut p = prefix.clone();
                p.push(v);
                stack.push(p);
            }
            let mut ended = prefix.clone();
            ended.push(EOS);
            ended
        };
        let lp = sequence_log_prob(&cfg, &params, &x, &scored).unwrap();
        if lp > best.0 {
            best = (lp, prefix);
        }
    }
    let hyps = beam_search(&cfg, &params, &x, 64, 1, Some(max_len)).unwrap();
    assert_eq!(hyps[0].tokens, best.1);
    assert!((hyps[0].score - best.0).abs() < 1e-9);
}
