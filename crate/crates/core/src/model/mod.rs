//! Attention-based encoder-decoder built around multi-head monotonic
//! chunkwise attention.
//!
//! Token `0` is the end-of-sequence symbol; it also seeds the decoder as the
//! "previous token" of the first step.

mod checkpoint;
mod decoder;
mod encoder;
mod forward;
mod hard;
mod lstm;

pub use checkpoint::{
    load_checkpoint, read_tensors, save_checkpoint, write_tensors, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use decoder::{decode_step, decode_step_backward, DecodeStepCache, DecoderState};
pub use encoder::{
    encode, encode_backward, max_pool_time, max_pool_time_backward, EncoderCache, FeatureSource, HorizonGuard,
    InputSource, StreamingEncoder,
};
pub use forward::{
    backward, backward_into, forward_train, forward_train_unchecked, log_softmax, sequence_log_prob,
    validate_targets, ExpectedDecoder, ExpectedDecoderState, TrainForward,
};
pub use hard::{decode_hard, decode_stream, max_decode_len, HardDecodeOutput};
pub use lstm::{lstm_step, lstm_step_backward, LstmCache, LstmParams, LstmState};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::{AttentionError, SourceError};
use crate::multihead::{HeadConfig, SharedHeadParams};
use crate::numeric::{stream_id, uniform_tensor, NumericError, Parameters, Real, RngStream, Tensor};

pub const EOS: usize = 0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("input has {frames} frames but the encoder needs at least {required}")]
    TooShort { frames: usize, required: usize },
    #[error("token {0} is outside the vocabulary")]
    Token(usize),
    #[error("invalid targets: {0}")]
    Targets(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Architecture hyperparameters. Serialized as the checkpoint sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub encoder_layers: usize,
    pub encoder_width: usize,
    /// 1-based encoder layers followed by max pooling over time.
    pub pool_after: Vec<usize>,
    pub pool_width: usize,
    pub decoder_layers: usize,
    pub decoder_width: usize,
    /// Including the end token.
    pub vocab_size: usize,
    pub embedding_dim: usize,
    /// Width of the projected attention context fed to the decoder.
    pub context_dim: usize,
    pub heads: usize,
    pub window: usize,
    pub energy_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_dim: 20,
            encoder_layers: 2,
            encoder_width: 64,
            pool_after: vec![1],
            pool_width: 2,
            decoder_layers: 2,
            decoder_width: 64,
            vocab_size: 13,
            embedding_dim: 16,
            context_dim: 64,
            heads: 4,
            window: 2,
            energy_dim: 16,
        }
    }
}

impl ModelConfig {
    pub fn head_config(&self) -> HeadConfig {
        HeadConfig {
            heads: self.heads,
            dim_h: self.encoder_width,
            dim_s: self.decoder_width,
            window: self.window,
            energy_dim: self.energy_dim,
        }
    }

    /// Whether max pooling follows 0-based encoder layer `layer`.
    pub fn pools_after(&self, layer: usize) -> bool {
        self.pool_after.contains(&(layer + 1))
    }

    /// Total time reduction of the encoder.
    pub fn subsampling(&self) -> usize {
        (0..self.encoder_layers).filter(|&l| self.pools_after(l)).map(|_| self.pool_width).product()
    }

    /// Encoder output length for `frames` input frames.
    pub fn encoded_len(&self, frames: usize) -> usize {
        (0..self.encoder_layers)
            .filter(|&l| self.pools_after(l))
            .fold(frames, |t, _| t.div_ceil(self.pool_width))
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("feature_dim", self.feature_dim),
            ("encoder_layers", self.encoder_layers),
            ("encoder_width", self.encoder_width),
            ("pool_width", self.pool_width),
            ("decoder_layers", self.decoder_layers),
            ("decoder_width", self.decoder_width),
            ("embedding_dim", self.embedding_dim),
            ("context_dim", self.context_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if self.vocab_size < 2 {
            return Err(ModelError::Config("vocab_size must include the end token and one symbol".into()));
        }
        if let Some(l) = self.pool_after.iter().find(|&&l| l == 0 || l > self.encoder_layers) {
            return Err(ModelError::Config(format!("pool_after layer {l} does not exist")));
        }
        self.head_config().validate()?;
        Ok(())
    }
}

/// All trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub encoder: Vec<LstmParams<T>>,
    pub attention: SharedHeadParams<T>,
    /// `context_dim × (encoder_width / heads)`.
    pub context_proj: Tensor<T>,
    /// `vocab_size × embedding_dim`.
    pub embedding: Tensor<T>,
    pub decoder: Vec<LstmParams<T>>,
    pub output_w: Tensor<T>,
    pub output_b: Tensor<T>,
}

impl<T: Real> ModelParams<T> {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = RngStream::new(seed, stream_id(&[0x9a7a_3e75]));
        let mut encoder = Vec::with_capacity(cfg.encoder_layers);
        let mut input = cfg.feature_dim;
        for _ in 0..cfg.encoder_layers {
            encoder.push(LstmParams::init(input, cfg.encoder_width, &mut rng));
            input = cfg.encoder_width;
        }
        let head_cfg = cfg.head_config();
        let attention = SharedHeadParams::init(&head_cfg, &mut rng);
        let ctx_in = head_cfg.head_dim_h();
        let context_proj = uniform_tensor(&[cfg.context_dim, ctx_in], 1.0 / (ctx_in as f64).sqrt(), &mut rng);
        let embedding = uniform_tensor(&[cfg.vocab_size, cfg.embedding_dim], 0.5, &mut rng);
        let mut decoder = Vec::with_capacity(cfg.decoder_layers);
        let mut input = cfg.embedding_dim + cfg.context_dim;
        for _ in 0..cfg.decoder_layers {
            decoder.push(LstmParams::init(input, cfg.decoder_width, &mut rng));
            input = cfg.decoder_width + cfg.context_dim;
        }
        let output_w =
            uniform_tensor(&[cfg.vocab_size, cfg.decoder_width], 1.0 / (cfg.decoder_width as f64).sqrt(), &mut rng);
        Ok(Self {
            encoder,
            attention,
            context_proj,
            embedding,
            decoder,
            output_w,
            output_b: Tensor::zeros(&[cfg.vocab_size]),
        })
    }

    /// Shape check against a config, e.g. after loading a checkpoint.
    pub fn check(&self, cfg: &ModelConfig) -> Result<(), ModelError> {
        let reference = ModelParams::<T>::zeros_for(cfg)?;
        let mine = self.tensors();
        let theirs = reference.tensors();
        if mine.len() != theirs.len() {
            return Err(ModelError::Config("parameter count does not match the config".into()));
        }
        for ((a, ta), (_, tb)) in mine.iter().zip(&theirs) {
            if ta.dims() != tb.dims() {
                return Err(ModelError::Config(format!("tensor {a} has dims {:?}, expected {:?}", ta.dims(), tb.dims())));
            }
        }
        Ok(())
    }

    /// Correctly shaped parameters, all zero except the energy gain and
    /// `v`, which keep their initial values so the result is well-formed.
    pub fn zeros_for(cfg: &ModelConfig) -> Result<Self, ModelError> {
        let mut p = Self::init(cfg, 0)?;
        for (name, t) in p.tensors_mut() {
            if name != "attention.monotonic.v" && name != "attention.monotonic.g" {
                t.fill(T::zero());
            }
        }
        Ok(p)
    }
}

fn prefixed<'a, T: Real, P: Parameters<T>>(prefix: &str, p: &'a P) -> impl Iterator<Item = (String, &'a Tensor<T>)> + 'a {
    let prefix = prefix.to_string();
    p.tensors().into_iter().map(move |(n, t)| (format!("{prefix}.{n}"), t))
}

fn prefixed_mut<'a, T: Real, P: Parameters<T>>(
    prefix: &str,
    p: &'a mut P,
) -> impl Iterator<Item = (String, &'a mut Tensor<T>)> + 'a {
    let prefix = prefix.to_string();
    p.tensors_mut().into_iter().map(move |(n, t)| (format!("{prefix}.{n}"), t))
}

impl<T: Real> Parameters<T> for ModelParams<T> {
    fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (l, p) in self.encoder.iter().enumerate() {
            out.extend(prefixed(&format!("encoder.{l}"), p));
        }
        out.extend(prefixed("attention", &self.attention));
        out.push(("context_proj".into(), &self.context_proj));
        out.push(("embedding".into(), &self.embedding));
        for (l, p) in self.decoder.iter().enumerate() {
            out.extend(prefixed(&format!("decoder.{l}"), p));
        }
        out.push(("output.w".into(), &self.output_w));
        out.push(("output.b".into(), &self.output_b));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (l, p) in self.encoder.iter_mut().enumerate() {
            out.extend(prefixed_mut(&format!("encoder.{l}"), p));
        }
        out.extend(prefixed_mut("attention", &mut self.attention));
        out.push(("context_proj".into(), &mut self.context_proj));
        out.push(("embedding".into(), &mut self.embedding));
        for (l, p) in self.decoder.iter_mut().enumerate() {
            out.extend(prefixed_mut(&format!("decoder.{l}"), p));
        }
        out.push(("output.w".into(), &mut self.output_w));
        out.push(("output.b".into(), &mut self.output_b));
        out
    }
}
