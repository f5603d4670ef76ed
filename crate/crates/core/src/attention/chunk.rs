//! Expected chunkwise attention: every frame `k` the alignment may stop at
//! spreads its mass `α[k]` over the window `[k − w + 1, k]` (truncated at
//! frame 0) with softmax weights of the chunk energies inside that window.

use std::ops::Range;

use crate::numeric::{Real, Tensor};

use super::AttentionError;

#[inline]
pub fn window(k: usize, w: usize) -> Range<usize> {
    (k + 1).saturating_sub(w)..k + 1
}

/// Softmax of `u` over `win`, max-shifted, written into `weights[..win.len()]`.
fn window_softmax<T: Real>(u: &[T], win: Range<usize>, weights: &mut [T]) {
    let m = u[win.clone()].iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for (wt, &x) in weights.iter_mut().zip(&u[win.clone()]) {
        *wt = (x - m).exp();
        total += *wt;
    }
    for wt in weights[..win.len()].iter_mut() {
        *wt /= total;
    }
}

pub fn chunk_row<T: Real>(alpha: &[T], u: &[T], w: usize, beta: &mut [T]) {
    beta.iter_mut().for_each(|b| *b = T::zero());
    let mut weights = vec![T::zero(); w];
    for k in 0..alpha.len() {
        if alpha[k] == T::zero() {
            continue;
        }
        let win = window(k, w);
        window_softmax(u, win.clone(), &mut weights);
        for (b, &wt) in beta[win].iter_mut().zip(&weights) {
            *b += alpha[k] * wt;
        }
    }
}

/// Accumulates `g_alpha` and `g_u` for one row given `g_beta`.
pub fn chunk_row_backward<T: Real>(
    alpha: &[T],
    u: &[T],
    w: usize,
    g_beta: &[T],
    g_alpha: &mut [T],
    g_u: &mut [T],
) {
    let mut weights = vec![T::zero(); w];
    for k in 0..alpha.len() {
        let win = window(k, w);
        window_softmax(u, win.clone(), &mut weights);
        let n = win.len();
        let mean: T = weights[..n].iter().zip(&g_beta[win.clone()]).map(|(&a, &g)| a * g).sum();
        g_alpha[k] += mean;
        if alpha[k] == T::zero() {
            continue;
        }
        for ((gu, &wt), &gb) in g_u[win.clone()].iter_mut().zip(&weights[..n]).zip(&g_beta[win]) {
            *gu += alpha[k] * wt * (gb - mean);
        }
    }
}

fn check<T: Real>(alpha: &Tensor<T>, u: &Tensor<T>, w: usize) -> Result<(), AttentionError> {
    if w < 1 {
        return Err(AttentionError::WindowTooSmall);
    }
    if alpha.dims() != u.dims() || alpha.rank() != 2 {
        return Err(AttentionError::Shape(format!(
            "alpha {:?} and chunk energies {:?}",
            alpha.dims(),
            u.dims()
        )));
    }
    Ok(())
}

pub fn expected_chunk_attention<T: Real>(
    alpha: &Tensor<T>,
    u: &Tensor<T>,
    w: usize,
) -> Result<Tensor<T>, AttentionError> {
    check(alpha, u, w)?;
    let mut beta = alpha.zeros_like();
    for i in 0..alpha.rows() {
        chunk_row(alpha.row(i), u.row(i), w, beta.row_mut(i));
    }
    Ok(beta)
}

/// Returns `(g_alpha, g_u)`.
pub fn expected_chunk_attention_backward<T: Real>(
    alpha: &Tensor<T>,
    u: &Tensor<T>,
    w: usize,
    g_beta: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>), AttentionError> {
    check(alpha, u, w)?;
    let mut g_alpha = alpha.zeros_like();
    let mut g_u = u.zeros_like();
    for i in 0..alpha.rows() {
        chunk_row_backward(alpha.row(i), u.row(i), w, g_beta.row(i), g_alpha.row_mut(i), g_u.row_mut(i));
    }
    Ok((g_alpha, g_u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::RngStream;

    fn random(seed: u64, u: usize, t: usize) -> (Tensor<f64>, Tensor<f64>) {
        let mut rng = RngStream::new(seed, 0);
        let alpha = Tensor::from_fn(&[u, t], |_| rng.uniform() / t as f64);
        let en = Tensor::from_fn(&[u, t], |_| 3.0 * rng.gaussian());
        (alpha, en)
    }

    #[test]
    fn width_one_is_identity() {
        let (a, u) = random(1, 3, 6);
        assert_eq!(expected_chunk_attention(&a, &u, 1).unwrap(), a);
    }

    #[test]
    fn conserves_mass() {
        for seed in 0..20 {
            let (a, u) = random(seed, 3, 7);
            let b = expected_chunk_attention(&a, &u, 3).unwrap();
            for i in 0..3 {
                let sa: f64 = a.row(i).iter().sum();
                let sb: f64 = b.row(i).iter().sum();
                assert!((sa - sb).abs() < 1e-9);
                assert!(b.row(i).iter().all(|&x| x >= 0.0));
            }
        }
    }

    #[test]
    fn rejects_zero_width() {
        let (a, u) = random(2, 1, 2);
        assert_eq!(expected_chunk_attention(&a, &u, 0), Err(AttentionError::WindowTooSmall));
    }

    #[test]
    fn survives_large_energies() {
        let a = Tensor::from_rows(&[vec![0.5_f64, 0.5]]).unwrap();
        let u = Tensor::from_rows(&[vec![1000.0_f64, -1000.0]]).unwrap();
        let b = expected_chunk_attention(&a, &u, 2).unwrap();
        assert!(b.all_finite());
        assert!((b.data()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn energy_gradient_sums_to_zero_per_window() {
        // Only a single selection point carries mass, so g_u lives in one window.
        let mut a = Tensor::<f64>::zeros(&[1, 6]);
        a.set2(0, 4, 0.7);
        let (_, u) = random(3, 1, 6);
        let mut rng = RngStream::new(4, 0);
        let g_beta = Tensor::from_fn(&[1, 6], |_| rng.gaussian());
        let (_, g_u) = expected_chunk_attention_backward(&a, &u, 3, &g_beta).unwrap();
        let s: f64 = g_u.row(0)[2..5].iter().sum();
        assert!(s.abs() < 1e-12);
        assert!(g_u.row(0)[..2].iter().chain(&g_u.row(0)[5..]).all(|&x| x == 0.0));
    }
}
