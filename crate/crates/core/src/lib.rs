//! Multi-head monotonic chunkwise attention for streaming sequence-to-sequence
//! models, with the training apparatus around it: SpecAugment masking,
//! label-smoothed cross-entropy, N-best MWER, and brute-force verifiers.

pub mod attention;
pub mod augment;
pub mod config;
pub mod data;
pub mod model;
pub mod multihead;
pub mod numeric;
pub mod oracle;
pub mod suites;
pub mod training;
