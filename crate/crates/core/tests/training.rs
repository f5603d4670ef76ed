use mthm::config::RunConfig;
use mthm::data::{Split, SyntheticTaskSpec, Utterance};
use mthm::model::{ModelConfig, ModelParams};
use mthm::training::{
    evaluate, load_train_state, run_training, save_train_state, DecodeMode, MetricsRecord, Phase, TrainConfig,
    TrainState,
};

fn tiny() -> (ModelConfig, TrainConfig, Vec<Utterance<f32>>) {
    let spec = SyntheticTaskSpec {
        vocab: 3,
        feature_dim: 6,
        train_size: 16,
        test_size: 4,
        min_symbols: 2,
        max_symbols: 3,
        ..SyntheticTaskSpec::default()
    };
    let cfg = ModelConfig {
        feature_dim: 6,
        encoder_width: 8,
        decoder_width: 8,
        context_dim: 8,
        energy_dim: 4,
        embedding_dim: 4,
        vocab_size: 4,
        heads: 2,
        ..ModelConfig::default()
    };
    let tc = TrainConfig { epochs: 2, mwer_epochs: 1, batch_size: 4, augment: true, ..TrainConfig::default() };
    (cfg, tc, spec.generate(Split::Train).unwrap())
}

fn train(
    cfg: &ModelConfig,
    tc: &TrainConfig,
    state: &mut TrainState<f32>,
    data: &[Utterance<f32>],
) -> Vec<MetricsRecord> {
    let mut records = Vec::new();
    run_training(cfg, tc, 9, state, data, &data[..2], &mut |r| {
        records.push(r.clone());
        Ok(())
    }, &mut |_| Ok(()))
    .unwrap();
    records
}

#[test]
fn resuming_from_disk_reproduces_an_uninterrupted_run() {
    let (cfg, tc, data) = tiny();
    let mut straight = TrainState::new(ModelParams::<f32>::init(&cfg, 2).unwrap());
    let all = train(&cfg, &tc, &mut straight, &data);

    let dir = tempfile::tempdir().unwrap();
    let mut first = TrainState::new(ModelParams::<f32>::init(&cfg, 2).unwrap());
    let mut partial = train(&cfg, &TrainConfig { epochs: 1, mwer_epochs: 0, ..tc.clone() }, &mut first, &data);
    save_train_state(dir.path(), &cfg, &first).unwrap();
    let (cfg2, mut resumed) = load_train_state::<f32>(dir.path()).unwrap();
    assert_eq!(cfg2, cfg);
    partial.extend(train(&cfg, &tc, &mut resumed, &data));

    assert_eq!(resumed.params, straight.params);
    assert_eq!(resumed.step, straight.step);
    assert_eq!(partial, all);
}

#[test]
fn phases_and_steps_follow_the_schedule() {
    let (cfg, tc, data) = tiny();
    let mut state = TrainState::new(ModelParams::<f32>::init(&cfg, 5).unwrap());
    let records = train(&cfg, &tc, &mut state, &data);
    let phases: Vec<Phase> = records.iter().map(|r| r.phase).collect();
    let per_epoch = data.len().div_ceil(tc.batch_size);
    assert_eq!(records.len(), 3 * (per_epoch + 1));
    assert!(phases[..per_epoch].iter().all(|&p| p == Phase::Ce));
    assert_eq!(phases[per_epoch], Phase::Eval);
    assert!(phases[2 * (per_epoch + 1)..3 * (per_epoch + 1) - 1].iter().all(|&p| p == Phase::Mwer));
    for r in &records {
        assert!(r.loss.is_finite());
        assert_eq!(r.cer.is_some(), r.phase == Phase::Eval);
        assert_eq!(r.grad_norm.is_some(), r.phase != Phase::Eval);
    }
    assert_eq!(records.last().unwrap().step as usize, 3 * per_epoch);
}

#[test]
fn a_tiny_training_set_is_memorized() {
    let (cfg, _, data) = tiny();
    let data = &data[..6];
    let mut tc = TrainConfig { epochs: 400, batch_size: 2, ..TrainConfig::default() };
    tc.optimizer.learning_rate = 1e-2;
    tc.lr_decay = 0.995;
    let mut state = TrainState::new(ModelParams::<f32>::init(&cfg, 1).unwrap());
    run_training(&cfg, &tc, 3, &mut state, data, &[], &mut |_| Ok(()), &mut |_| Ok(())).unwrap();
    let greedy = evaluate(&cfg, &state.params, data, DecodeMode::Greedy, 1).unwrap();
    assert_eq!(greedy.errors, 0, "expected-mode greedy decoding of the training set");
}

#[test]
fn default_run_config_matches_the_toy_task() {
    let cfg = RunConfig::default();
    assert_eq!(cfg.model.heads, 4);
    assert_eq!(cfg.model.window, 2);
    assert_eq!(cfg.model.vocab_size, cfg.task.vocab + 1);
    assert!(cfg.model.encoder_width <= 64 && cfg.model.decoder_width <= 64 && cfg.model.context_dim <= 64);
    assert_eq!((cfg.task.train_size, cfg.task.test_size, cfg.task.vocab), (2000, 200, 12));
}
