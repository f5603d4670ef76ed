use serde::{Deserialize, Serialize};

use super::beam::Hypothesis;
use super::losses::edit_distance;
use super::TrainingError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MwerConfig {
    /// Weight of the cross-entropy term.
    pub lambda: f64,
    pub nbest: usize,
    pub beam: usize,
}

impl Default for MwerConfig {
    fn default() -> Self {
        Self { lambda: 0.01, nbest: 4, beam: 4 }
    }
}

impl MwerConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        if !(self.lambda >= 0.0) || self.nbest == 0 || self.beam < self.nbest {
            return Err(TrainingError::Config(format!("invalid MWER settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MwerOutput {
    pub loss: f64,
    /// `Σ P̂·W` before the baseline is subtracted.
    pub expected_error: f64,
    /// Mean error over the list.
    pub baseline: f64,
    /// Normalized hypothesis probabilities.
    pub probs: Vec<f64>,
    /// `∂loss/∂score_n`.
    pub score_grads: Vec<f64>,
}

/// N-best risk: `Σ P̂_n (W_n − W̄) + λ·ce_loss`, with `P̂` the softmax of the
/// scores and `W̄` the mean error of the list.
pub fn mwer_from_scores(scores: &[f64], errors: &[f64], lambda: f64, ce_loss: f64) -> Result<MwerOutput, TrainingError> {
    if scores.is_empty() || scores.len() != errors.len() {
        return Err(TrainingError::Config(format!("{} scores and {} errors", scores.len(), errors.len())));
    }
    if scores.iter().chain(errors).any(|x| !x.is_finite()) {
        return Err(TrainingError::NonFinite("hypothesis score or error".into()));
    }
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = w.iter().sum();
    let probs: Vec<f64> = w.iter().map(|x| x / z).collect();
    let n = errors.len() as f64;
    let baseline = errors.iter().sum::<f64>() / n;
    let expected_error: f64 = probs.iter().zip(errors).map(|(p, e)| p * e).sum();
    let centered: f64 = probs.iter().zip(errors).map(|(p, e)| p * (e - baseline)).sum();
    // ∂/∂s_n Σ_m P̂_m W_m = P̂_n Σ_m P̂_m (W_n − W_m); written with differences so
    // equal errors give exactly zero.
    let score_grads = (0..scores.len())
        .map(|i| probs[i] * probs.iter().zip(errors).map(|(p, e)| p * (errors[i] - e)).sum::<f64>())
        .collect();
    Ok(MwerOutput { loss: centered + lambda * ce_loss, expected_error, baseline, probs, score_grads })
}

/// [`mwer_from_scores`] with errors measured as edit distance to `reference`.
pub fn mwer_loss(nbest: &[Hypothesis], reference: &[usize], lambda: f64, ce_loss: f64) -> Result<MwerOutput, TrainingError> {
    let scores: Vec<f64> = nbest.iter().map(|h| h.score).collect();
    let errors: Vec<f64> = nbest.iter().map(|h| edit_distance(&h.tokens, reference) as f64).collect();
    mwer_from_scores(&scores, &errors, lambda, ce_loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_hypothesis_has_zero_loss() {
        let out = mwer_from_scores(&[-3.2], &[2.0], 0.0, 5.0).unwrap();
        assert_eq!(out.loss, 0.0);
        assert_eq!(out.score_grads, vec![0.0]);
    }

    #[test]
    fn equal_errors_leave_only_ce() {
        let out = mwer_from_scores(&[-1.0, -2.5, -0.3], &[3.0, 3.0, 3.0], 0.01, 2.0).unwrap();
        assert_eq!(out.loss, 0.02);
        assert!(out.score_grads.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn two_hypothesis_hand_example() {
        let out = mwer_from_scores(&[0.75f64.ln(), 0.25f64.ln()], &[1.0, 3.0], 0.0, 0.0).unwrap();
        assert!((out.expected_error - 1.5).abs() < 1e-15);
        assert!((out.loss - (-0.5)).abs() < 1e-15);
    }

    #[test]
    fn empty_list_rejected() {
        assert!(mwer_from_scores(&[], &[], 0.0, 0.0).is_err());
    }
}
