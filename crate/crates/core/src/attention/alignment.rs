//! Expected monotonic alignment.
//!
//! `α[i][j]` is the probability that output step `i` stops at frame `j`,
//! given per-step stopping probabilities `p[i][j]`. Step `i` resumes the scan
//! at the frame chosen by step `i − 1`; the first step starts at frame 0.
//! Computed with the cumulative form
//!
//! ```text
//! q[i][j] = (1 − p[i][j−1]) · q[i][j−1] + α[i−1][j]
//! α[i][j] = p[i][j] · q[i][j]
//! ```
//!
//! with `α[−1]` one-hot on frame 0. No division by `p` is needed.

use crate::numeric::{Real, Tensor};

use super::AttentionError;

/// The alignment "before" the first output step: all mass on frame 0.
pub fn initial_alignment<T: Real>(frames: usize) -> Vec<T> {
    let mut a = vec![T::zero(); frames];
    if let Some(first) = a.first_mut() {
        *first = T::one();
    }
    a
}

/// One row of the recurrence. Writes `α_i` and the running `q` used by the
/// backward pass.
pub fn alignment_row<T: Real>(alpha_prev: &[T], p: &[T], alpha: &mut [T], q: &mut [T]) {
    let mut carry = T::zero();
    for j in 0..p.len() {
        if j > 0 {
            carry = (T::one() - p[j - 1]) * carry;
        }
        carry += alpha_prev[j];
        q[j] = carry;
        alpha[j] = p[j] * carry;
    }
}

/// Accumulates gradients for `alpha_prev` and `p` given `g_alpha`.
pub fn alignment_row_backward<T: Real>(
    p: &[T],
    q: &[T],
    g_alpha: &[T],
    g_alpha_prev: &mut [T],
    g_p: &mut [T],
) {
    let mut g_carry = T::zero();
    for j in (0..p.len()).rev() {
        g_carry += g_alpha[j] * p[j];
        g_p[j] += g_alpha[j] * q[j];
        g_alpha_prev[j] += g_carry;
        if j > 0 {
            g_p[j - 1] -= g_carry * q[j - 1];
            g_carry *= T::one() - p[j - 1];
        }
    }
}

fn validate_probabilities<T: Real>(p: &Tensor<T>) -> Result<(), AttentionError> {
    if p.rank() != 2 {
        return Err(AttentionError::Shape(format!("expected a U×T' matrix, got {:?}", p.dims())));
    }
    match p.data().iter().find(|&&x| !(x >= T::zero() && x <= T::one())) {
        Some(bad) => Err(AttentionError::ProbabilityOutOfRange(bad.as_f64())),
        None => Ok(()),
    }
}

/// Expected alignment for a full `U × T'` selection-probability matrix.
pub fn expected_alignment<T: Real>(p: &Tensor<T>) -> Result<Tensor<T>, AttentionError> {
    validate_probabilities(p)?;
    let (u, t) = (p.rows(), p.cols());
    let mut alpha = Tensor::zeros(&[u, t]);
    let mut prev = initial_alignment(t);
    let mut q = vec![T::zero(); t];
    for i in 0..u {
        alignment_row(&prev, p.row(i), alpha.row_mut(i), &mut q);
        prev.copy_from_slice(alpha.row(i));
    }
    Ok(alpha)
}

/// Gradient of a scalar loss w.r.t. `p`, given its gradient w.r.t. `α`.
pub fn expected_alignment_backward<T: Real>(
    p: &Tensor<T>,
    g_alpha: &Tensor<T>,
) -> Result<Tensor<T>, AttentionError> {
    validate_probabilities(p)?;
    let (u, t) = (p.rows(), p.cols());
    let mut alphas = vec![initial_alignment::<T>(t)];
    let mut qs = Vec::with_capacity(u);
    for i in 0..u {
        let mut a = vec![T::zero(); t];
        let mut q = vec![T::zero(); t];
        alignment_row(&alphas[i], p.row(i), &mut a, &mut q);
        alphas.push(a);
        qs.push(q);
    }
    let mut g_p = Tensor::zeros(&[u, t]);
    let mut g_next: Vec<T> = vec![T::zero(); t];
    for i in (0..u).rev() {
        let mut g_a: Vec<T> = g_alpha.row(i).to_vec();
        for (a, &n) in g_a.iter_mut().zip(&g_next) {
            *a += n;
        }
        let mut g_prev = vec![T::zero(); t];
        alignment_row_backward(p.row(i), &qs[i], &g_a, &mut g_prev, g_p.row_mut(i));
        g_next = g_prev;
    }
    Ok(g_p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::RngStream;

    #[test]
    fn all_ones_stays_on_first_frame() {
        let p = Tensor::from_fn(&[3, 4], |_| 1.0_f64);
        let a = expected_alignment(&p).unwrap();
        for i in 0..3 {
            assert_eq!(a.row(i), &[1.0, 0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn all_zeros_never_selects() {
        let p = Tensor::<f64>::zeros(&[3, 4]);
        assert!(expected_alignment(&p).unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_step_two_frames() {
        let p = Tensor::from_rows(&[vec![0.5_f64, 0.5]]).unwrap();
        let a = expected_alignment(&p).unwrap();
        assert_eq!(a.data(), &[0.5, 0.25]);
    }

    #[test]
    fn rejects_out_of_range_probabilities() {
        let p = Tensor::from_rows(&[vec![0.5_f64, 1.5]]).unwrap();
        assert_eq!(expected_alignment(&p), Err(AttentionError::ProbabilityOutOfRange(1.5)));
        let p = Tensor::from_rows(&[vec![f64::NAN]]).unwrap();
        assert!(expected_alignment(&p).is_err());
    }

    #[test]
    fn row_mass_never_exceeds_one() {
        let mut rng = RngStream::new(11, 0);
        for _ in 0..50 {
            let p = Tensor::from_fn(&[5, 7], |_| rng.uniform());
            let a = expected_alignment(&p).unwrap();
            for i in 0..5 {
                let s: f64 = a.row(i).iter().sum();
                assert!(s <= 1.0 + 1e-9 && a.row(i).iter().all(|&x| (0.0..=1.0).contains(&x)));
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let mut rng = RngStream::new(12, 0);
        let p = Tensor::from_fn(&[3, 4], |_| rng.uniform());
        let g = expected_alignment_backward(&p, &Tensor::zeros(&[3, 4])).unwrap();
        assert!(g.data().iter().all(|&x| x == 0.0));
    }
}
