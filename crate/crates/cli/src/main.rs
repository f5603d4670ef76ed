use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mthm::augment::apply_specaugment;
use mthm::config::{ConfigError, RunConfig};
use mthm::data::{generate_dataset, read_split, DataError, Split, Utterance};
use mthm::model::{
    decode_hard, decode_stream, load_checkpoint, FeatureSource, ModelConfig, ModelError, ModelParams,
};
use mthm::numeric::{stream_id, RngStream};
use mthm::suites;
use mthm::training::{
    beam_search, edit_distance, has_train_state, load_train_state, run_training, save_train_state, MetricsWriter,
    Phase, TrainState, TrainingError, MODEL_FILE,
};

#[derive(Parser, Debug)]
#[command(name = "mthm", version, about = "Multi-head monotonic chunkwise attention toy-task harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON run configuration; defaults are used for anything it omits.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Dotted-key override, e.g. `--set model.heads=1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthetic train and test splits (`--seed` sets the task seed).
    Generate(Common),
    /// Train a model; checkpoints and metrics.csv go to the output directory.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue the run saved in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Decode a split with a trained checkpoint and report CER.
    Decode {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = DecodeKind::Stream)]
        mode: DecodeKind,
        #[arg(long, default_value_t = 4)]
        beam: usize,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Decode at most this many utterances (0 = all).
        #[arg(long, default_value_t = 0)]
        limit: usize,
        /// Also check streaming against offline decoding under a horizon guard.
        #[arg(long)]
        verify: bool,
    },
    /// Show the SpecAugment masks drawn for one utterance.
    Augment {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, value_enum, default_value_t = SplitArg::Train)]
        split: SplitArg,
    },
    /// Run the brute-force and finite-difference verification suites.
    Oracle {
        #[command(flatten)]
        common: Common,
        /// Smaller instance counts.
        #[arg(long)]
        quick: bool,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum DecodeKind {
    Stream,
    Offline,
    Beam,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

/// Failure classes, each with its own exit status.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Verification(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Verification(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Verification(m) | Failure::Numeric(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Numeric(_) | ModelError::Attention(_) => Failure::Numeric(e.to_string()),
            e => Failure::Usage(e.to_string()),
        }
    }
}

impl From<TrainingError> for Failure {
    fn from(e: TrainingError) -> Self {
        match e {
            TrainingError::NonFinite(_) => Failure::Numeric(e.to_string()),
            TrainingError::Model(m) => m.into(),
            e => Failure::Usage(e.to_string()),
        }
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Model(m) => m.into(),
            e => Failure::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(common.config.as_deref(), &common.overrides)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Generate(common) => generate(&common),
        Command::Train { common, resume } => train(&common, resume),
        Command::Decode { common, mode, beam, split, limit, verify } => decode(&common, mode, beam, split.into(), limit, verify),
        Command::Augment { common, index, split } => augment(&common, index, split.into()),
        Command::Oracle { common, quick } => oracle(&common, quick),
    }
}

fn generate(common: &Common) -> Result<(), Failure> {
    let mut cfg = load_config(common)?;
    if let Some(seed) = common.seed {
        cfg.task.seed = seed;
    }
    generate_dataset(&cfg.task, &common.out)?;
    println!(
        "wrote {} train and {} test utterances to {}",
        cfg.task.train_size,
        cfg.task.test_size,
        common.out.display()
    );
    Ok(())
}

fn load_split(cfg: &RunConfig, split: Split) -> Result<Vec<Utterance<f32>>, Failure> {
    match &cfg.paths.data_dir {
        Some(dir) => Ok(read_split(dir, split.name())?),
        None => Ok(cfg.task.generate(split)?),
    }
}

fn check_data(model: &ModelConfig, data: &[Utterance<f32>]) -> Result<(), Failure> {
    for (i, u) in data.iter().enumerate() {
        if u.feats.cols() != model.feature_dim {
            return Err(Failure::Usage(format!(
                "utterance {i} has {} feature bins, model expects {}",
                u.feats.cols(),
                model.feature_dim
            )));
        }
        if let Some(&bad) = u.labels.iter().find(|&&l| l == 0 || l >= model.vocab_size) {
            return Err(Failure::Usage(format!("utterance {i} has label {bad} outside 1..{}", model.vocab_size)));
        }
    }
    Ok(())
}

fn train(common: &Common, resume: bool) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let out = &common.out;
    fs::create_dir_all(out)?;
    let mut state = if resume {
        if !has_train_state(out) {
            return Err(Failure::Usage(format!("--resume: no saved run in {}", out.display())));
        }
        let (saved, state) = load_train_state::<f32>(out)?;
        if saved != cfg.model {
            return Err(Failure::Usage("--resume: saved model config differs from the run config".into()));
        }
        state
    } else {
        let params = match &cfg.paths.checkpoint {
            Some(p) => {
                let (saved, params) = load_checkpoint::<f32>(p)?;
                if saved != cfg.model {
                    return Err(Failure::Usage(format!("{}: model config differs from the run config", p.display())));
                }
                params
            }
            None => ModelParams::init(&cfg.model, cfg.seed)?,
        };
        TrainState::new(params)
    };
    let train = load_split(&cfg, Split::Train)?;
    let test = load_split(&cfg, Split::Test)?;
    check_data(&cfg.model, &train)?;
    check_data(&cfg.model, &test)?;
    fs::write(out.join("config.json"), cfg.to_json())?;

    let metrics_path = out.join("metrics.csv");
    let mut metrics = if resume && metrics_path.is_file() {
        MetricsWriter::append(BufWriter::new(fs::OpenOptions::new().append(true).open(&metrics_path)?))
    } else {
        MetricsWriter::new(BufWriter::new(fs::File::create(&metrics_path)?))?
    };
    let total = cfg.train.epochs + cfg.train.mwer_epochs;
    let mut on_record = |r: &mthm::training::MetricsRecord| -> Result<(), TrainingError> {
        metrics.write(r)?;
        if r.phase == Phase::Eval {
            eprintln!("step {:>7}  eval ce {:.4}  hard cer {:.4}", r.step, r.loss, r.cer.unwrap_or(f64::NAN));
        }
        Ok(())
    };
    let mut on_epoch = |s: &TrainState<f32>| -> Result<(), TrainingError> {
        save_train_state(out, &cfg.model, s)?;
        eprintln!("epoch {}/{total} saved", s.epoch);
        Ok(())
    };
    run_training(&cfg.model, &cfg.train, cfg.seed, &mut state, &train, &test, &mut on_record, &mut on_epoch)?;
    println!("trained {} epochs, {} steps; model in {}", state.epoch, state.step, out.join(MODEL_FILE).display());
    Ok(())
}

fn checkpoint_path(cfg: &RunConfig, out: &Path) -> PathBuf {
    cfg.paths.checkpoint.clone().unwrap_or_else(|| out.join(MODEL_FILE))
}

fn decode(common: &Common, mode: DecodeKind, beam: usize, split: Split, limit: usize, verify: bool) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let (model, params) = load_checkpoint::<f32>(&checkpoint_path(&cfg, &common.out))?;
    let mut data = load_split(&cfg, split)?;
    if limit > 0 {
        data.truncate(limit);
    }
    check_data(&model, &data)?;
    let mut report = String::from("index\treference\thypothesis\thorizons\n");
    let (mut errors, mut total) = (0usize, 0usize);
    for (i, u) in data.iter().enumerate() {
        let (tokens, horizons) = match mode {
            DecodeKind::Stream => {
                let o = decode_stream(&model, &params, FeatureSource::new(&u.feats), None)?;
                (o.tokens, o.horizons)
            }
            DecodeKind::Offline => {
                let o = decode_hard(&model, &params, &u.feats)?;
                (o.tokens, o.horizons)
            }
            DecodeKind::Beam => {
                let best = beam_search(&model, &params, &u.feats, beam.max(1), 1, None)?;
                (best.into_iter().next().map(|h| h.tokens).unwrap_or_default(), Vec::new())
            }
        };
        errors += edit_distance(&tokens, &u.labels);
        total += u.labels.len();
        let join = |xs: &[usize]| xs.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
        let _ = writeln!(report, "{i}\t{}\t{}\t{}", join(&u.labels), join(&tokens), join(&horizons));
    }
    fs::create_dir_all(&common.out)?;
    fs::write(common.out.join("decode.tsv"), report)?;
    let cer = if total == 0 { 0.0 } else { errors as f64 / total as f64 };
    println!("{} utterances, {errors} errors over {total} symbols, CER {:.4}", data.len(), cer);
    if verify {
        let outcome = suites::streaming_causality(&model, &params, &data);
        println!("{outcome}");
        if !outcome.passed {
            return Err(Failure::Verification("streaming decode is not causal or differs from offline decoding".into()));
        }
    }
    Ok(())
}

fn augment(common: &Common, index: usize, split: Split) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let data = load_split(&cfg, split)?;
    let u = data
        .get(index)
        .ok_or_else(|| Failure::Usage(format!("index {index} is out of range for {} utterances", data.len())))?;
    let mut rng = RngStream::new(cfg.seed, stream_id(&[0xa06, index as u64]));
    let (masked, blocks) =
        apply_specaugment(&u.feats, &cfg.train.spec_augment, &mut rng).map_err(|e| Failure::Usage(e.to_string()))?;
    println!("utterance {index}: {} frames × {} bins", u.feats.rows(), u.feats.cols());
    for b in &blocks {
        println!("  {b}");
    }
    let zeroed = masked.data().iter().filter(|&&x| x == 0.0).count();
    println!("  {zeroed} of {} cells zeroed", masked.len());
    fs::create_dir_all(&common.out)?;
    let doc = serde_json::json!({
        "index": index,
        "frames": u.feats.rows(),
        "bins": u.feats.cols(),
        "policy": cfg.train.spec_augment,
        "blocks": blocks,
    });
    fs::write(common.out.join("augment.json"), serde_json::to_string_pretty(&doc).expect("json"))?;
    Ok(())
}

fn oracle(common: &Common, quick: bool) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let seed = cfg.seed;
    let scale = |n: usize| if quick { (n / 10).max(1) } else { n };
    let mut outcomes = vec![
        suites::alignment_oracle(seed, scale(200)),
        suites::chunk_mass(seed, scale(200)),
        suites::single_head_reduction(seed, scale(100)),
        suites::energy_scale_invariance(seed, scale(1000)),
    ];
    let (grad, main, _) = suites::end_to_end_gradcheck(suites::GRADCHECK_SEED);
    outcomes.push(grad);
    outcomes.push(suites::mwer_gradcheck(seed, scale(200)));
    outcomes.push(suites::mwer_oracle(seed, scale(20)));
    outcomes.push(suites::specaugment_bounds(seed, scale(10_000), &cfg.train.spec_augment));
    if let Some(path) = &cfg.paths.checkpoint {
        let (model, params) = load_checkpoint::<f32>(path)?;
        let mut data = load_split(&cfg, Split::Test)?;
        if quick {
            data.truncate(20);
        }
        check_data(&model, &data)?;
        outcomes.push(suites::streaming_causality(&model, &params, &data));
    }
    let mut text = String::new();
    for o in &outcomes {
        let _ = writeln!(text, "{o}");
    }
    if let Some(report) = main {
        let _ = write!(text, "\nend-to-end gradient report\n{report}");
    }
    print!("{text}");
    fs::create_dir_all(&common.out)?;
    fs::write(common.out.join("oracle.txt"), &text)?;
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verification(format!("failed: {}", failed.join(", "))))
    }
}
