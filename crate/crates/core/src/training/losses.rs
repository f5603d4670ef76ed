use crate::numeric::{Real, Tensor};

use super::TrainingError;

/// Cross-entropy against targets smoothed to `1 − ε` on the true token and
/// `ε / (V − 1)` on every other token, averaged over rows. Returns the loss
/// and its gradient w.r.t. the logits.
pub fn cross_entropy_label_smoothed<T: Real>(
    logits: &Tensor<T>,
    targets: &[usize],
    epsilon: f64,
) -> Result<(T, Tensor<T>), TrainingError> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(TrainingError::Config(format!("label smoothing {epsilon} outside [0, 1)")));
    }
    let (u, v) = (logits.rows(), logits.cols());
    if targets.len() != u || u == 0 {
        return Err(TrainingError::Target(format!("{} targets for {u} logit rows", targets.len())));
    }
    if v < 2 {
        return Err(TrainingError::Target("need at least two classes".into()));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
        return Err(TrainingError::Target(format!("token {bad} outside vocabulary of {v}")));
    }
    let on = T::from_f64(1.0 - epsilon);
    let off = T::from_f64(epsilon / (v - 1) as f64);
    let inv_u = T::one() / T::from_usize(u);
    let mut loss = T::zero();
    let mut grad = logits.zeros_like();
    for (i, &tgt) in targets.iter().enumerate() {
        let row = logits.row(i);
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let z: T = row.iter().map(|&x| (x - m).exp()).sum();
        let lse = m + z.ln();
        let g = grad.row_mut(i);
        for (c, &x) in row.iter().enumerate() {
            let q = if c == tgt { on } else { off };
            loss -= q * (x - lse);
            // Smoothed targets sum to one, so the gradient is softmax − q.
            g[c] = ((x - lse).exp() - q) * inv_u;
        }
    }
    Ok((loss * inv_u, grad))
}

/// Levenshtein distance with unit costs.
pub fn edit_distance<A: PartialEq>(hyp: &[A], reference: &[A]) -> usize {
    let mut prev: Vec<usize> = (0..=reference.len()).collect();
    let mut cur = vec![0; reference.len() + 1];
    for (i, a) in hyp.iter().enumerate() {
        cur[0] = i + 1;
        for (j, b) in reference.iter().enumerate() {
            let sub = prev[j] + usize::from(a != b);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[reference.len()]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unsmoothed_is_negative_log_softmax() {
        let logits = Tensor::from_rows(&[vec![1.0_f64, 2.0, 0.5]]).unwrap();
        let (loss, _) = cross_entropy_label_smoothed(&logits, &[1], 0.0).unwrap();
        let lse = (1f64.exp() + 2f64.exp() + 0.5f64.exp()).ln();
        assert!((loss - (lse - 2.0)).abs() < 1e-14);
    }

    #[test]
    fn uniform_logits_give_log_v() {
        let logits = Tensor::<f64>::zeros(&[3, 5]);
        for eps in [0.0, 0.1, 0.5] {
            let (loss, _) = cross_entropy_label_smoothed(&logits, &[0, 4, 2], eps).unwrap();
            assert!((loss - 5f64.ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn invalid_inputs() {
        let logits = Tensor::<f64>::zeros(&[1, 3]);
        assert!(cross_entropy_label_smoothed(&logits, &[3], 0.1).is_err());
        assert!(cross_entropy_label_smoothed(&logits, &[0, 1], 0.1).is_err());
        assert!(cross_entropy_label_smoothed(&logits, &[0], 1.0).is_err());
    }

    #[test]
    fn edit_distance_examples() {
        assert_eq!(edit_distance(b"kitten", b"sitting"), 3);
        assert_eq!(edit_distance::<u8>(b"", b"abcd"), 4);
        assert_eq!(edit_distance(b"same", b"same"), 0);
    }
}
