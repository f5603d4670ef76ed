//! Synthetic monotonic task and dataset files.
//!
//! Each symbol owns a fixed random template vector. An utterance is a symbol
//! sequence with no immediate repeats; every symbol is rendered as its
//! template repeated for a random number of frames, plus Gaussian noise.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{read_tensors, write_tensors, ModelError};
use crate::numeric::{stream_id, Real, RngStream, Tensor};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid task spec: {0}")]
    Spec(String),
    #[error("dataset file {path}: {msg}")]
    Format { path: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance<T> {
    /// `T × F` features.
    pub feats: Tensor<T>,
    /// Symbols in `1..=V`; the end token is not included.
    pub labels: Vec<usize>,
    /// First frame of each symbol, when known.
    pub boundaries: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticTaskSpec {
    /// Number of distinct symbols; ids run from 1 to `vocab`.
    pub vocab: usize,
    pub min_symbols: usize,
    pub max_symbols: usize,
    pub min_repeat: usize,
    pub max_repeat: usize,
    pub feature_dim: usize,
    /// Standard deviation of the additive noise.
    pub noise: f64,
    pub train_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        Self {
            vocab: 12,
            min_symbols: 4,
            max_symbols: 10,
            min_repeat: 4,
            max_repeat: 6,
            feature_dim: 40,
            noise: 0.3,
            train_size: 2000,
            test_size: 200,
            seed: 1,
        }
    }
}

const TEMPLATE_STREAM: u64 = 0x7e3a;
const UTTERANCE_STREAM: u64 = 0x0773;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::Spec(m.into()));
        if self.vocab < 2 {
            return bad("vocab must be at least 2 so adjacent symbols can differ");
        }
        if self.min_symbols == 0 || self.min_symbols > self.max_symbols {
            return bad("symbol count range is empty");
        }
        if self.min_repeat == 0 || self.min_repeat > self.max_repeat {
            return bad("repeat range is empty");
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be a finite non-negative number");
        }
        Ok(())
    }

    /// Template rows `1..=vocab` (row 0 is unused and zero).
    pub fn templates(&self) -> Tensor<f64> {
        let mut rng = RngStream::new(self.seed, stream_id(&[TEMPLATE_STREAM]));
        let mut t = Tensor::zeros(&[self.vocab + 1, self.feature_dim]);
        for r in 1..=self.vocab {
            for v in t.row_mut(r) {
                *v = rng.gaussian();
            }
        }
        t
    }

    /// Utterance `index` of `split`; a pure function of the spec.
    pub fn utterance<T: Real>(&self, templates: &Tensor<f64>, split: Split, index: usize) -> Utterance<T> {
        let mut rng = RngStream::new(self.seed, stream_id(&[UTTERANCE_STREAM, split as u64, index as u64]));
        let n = self.min_symbols + rng.below(self.max_symbols - self.min_symbols + 1);
        let mut labels = Vec::with_capacity(n);
        while labels.len() < n {
            let s = 1 + rng.below(self.vocab);
            if labels.last() != Some(&s) {
                labels.push(s);
            }
        }
        let mut rows = Vec::new();
        let mut boundaries = Vec::with_capacity(n);
        for &s in &labels {
            boundaries.push(rows.len());
            let reps = self.min_repeat + rng.below(self.max_repeat - self.min_repeat + 1);
            for _ in 0..reps {
                let row: Vec<T> = templates
                    .row(s)
                    .iter()
                    .map(|&x| {
                        let eps = if self.noise > 0.0 { self.noise * rng.gaussian() } else { 0.0 };
                        T::from_f64(x + eps)
                    })
                    .collect();
                rows.push(row);
            }
        }
        let feats = Tensor::from_rows(&rows).expect("rectangular rows");
        Utterance { feats, labels, boundaries }
    }

    pub fn generate<T: Real>(&self, split: Split) -> Result<Vec<Utterance<T>>, DataError> {
        self.validate()?;
        let templates = self.templates();
        let size = match split {
            Split::Train => self.train_size,
            Split::Test => self.test_size,
        };
        Ok((0..size).map(|i| self.utterance(&templates, split, i)).collect())
    }
}

/// Writes `<stem>.feats.mthm` and `<stem>.labels.txt` under `dir`.
pub fn write_split<T: Real>(dir: &Path, stem: &str, data: &[Utterance<T>]) -> Result<(), DataError> {
    fs::create_dir_all(dir)?;
    let names: Vec<String> = (0..data.len()).map(|i| format!("utt{i:06}")).collect();
    let tensors: Vec<(String, &Tensor<T>)> = names.iter().cloned().zip(data.iter().map(|u| &u.feats)).collect();
    write_tensors(&dir.join(format!("{stem}.feats.mthm")), &tensors)?;
    let mut text = String::new();
    for u in data {
        let line: Vec<String> = u.labels.iter().map(usize::to_string).collect();
        text.push_str(&line.join(" "));
        text.push('\n');
    }
    fs::write(dir.join(format!("{stem}.labels.txt")), text)?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<Vec<usize>>, DataError> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .map(|(n, line)| {
            line.split_whitespace()
                .map(|tok| {
                    tok.parse::<usize>().map_err(|_| DataError::Format {
                        path: path.display().to_string(),
                        msg: format!("line {}: {tok:?} is not a token id", n + 1),
                    })
                })
                .collect()
        })
        .collect()
}

pub fn read_split<T: Real>(dir: &Path, stem: &str) -> Result<Vec<Utterance<T>>, DataError> {
    let feats_path = dir.join(format!("{stem}.feats.mthm"));
    let labels_path = dir.join(format!("{stem}.labels.txt"));
    let feats = read_tensors::<T>(&feats_path)?;
    let labels = read_labels(&labels_path)?;
    if feats.len() != labels.len() {
        return Err(DataError::Format {
            path: labels_path.display().to_string(),
            msg: format!("{} label lines for {} feature matrices", labels.len(), feats.len()),
        });
    }
    feats
        .into_iter()
        .zip(labels)
        .map(|((name, f), l)| {
            if f.rank() != 2 {
                return Err(DataError::Format {
                    path: feats_path.display().to_string(),
                    msg: format!("{name} is not a matrix"),
                });
            }
            Ok(Utterance { feats: f, labels: l, boundaries: Vec::new() })
        })
        .collect()
}

/// Generates both splits and writes them plus `task.json` to `dir`.
pub fn generate_dataset(spec: &SyntheticTaskSpec, dir: &Path) -> Result<(), DataError> {
    let train = spec.generate::<f32>(Split::Train)?;
    let test = spec.generate::<f32>(Split::Test)?;
    write_split(dir, "train", &train)?;
    write_split(dir, "test", &test)?;
    fs::write(dir.join("task.json"), serde_json::to_string_pretty(spec)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_frames_equal_templates() {
        let spec = SyntheticTaskSpec { noise: 0.0, train_size: 5, ..Default::default() };
        let templates = spec.templates();
        for u in spec.generate::<f64>(Split::Train).unwrap() {
            let mut next = u.boundaries.iter().skip(1).copied().chain([u.feats.rows()]);
            for (k, (&s, &b)) in u.labels.iter().zip(&u.boundaries).enumerate() {
                let end = next.next().unwrap();
                assert!(end > b, "symbol {k} has no frames");
                for r in b..end {
                    assert_eq!(u.feats.row(r), templates.row(s));
                }
            }
        }
    }

    #[test]
    fn lengths_and_labels_in_range() {
        let spec = SyntheticTaskSpec {
            min_symbols: 10,
            max_symbols: 10,
            min_repeat: 1,
            max_repeat: 3,
            train_size: 50,
            ..Default::default()
        };
        for u in spec.generate::<f32>(Split::Train).unwrap() {
            assert!((10..=30).contains(&u.feats.rows()));
            assert!(u.labels.iter().all(|&s| (1..=12).contains(&s)));
            assert!(u.labels.windows(2).all(|w| w[0] != w[1]));
            assert!(u.boundaries.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn splits_differ_and_are_reproducible() {
        let spec = SyntheticTaskSpec { train_size: 3, test_size: 3, ..Default::default() };
        let a = spec.generate::<f32>(Split::Train).unwrap();
        let b = spec.generate::<f32>(Split::Train).unwrap();
        let c = spec.generate::<f32>(Split::Test).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].feats, c[0].feats);
    }

    #[test]
    fn invalid_spec() {
        let spec = SyntheticTaskSpec { min_repeat: 0, ..Default::default() };
        assert!(spec.validate().is_err());
    }
}
