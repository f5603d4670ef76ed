use std::ops::Range;

use crate::numeric::{axpy, dot, matmul, Real, Tensor};

use super::AttentionError;

/// `out = Σ_j β_j · h_j[cols]` over the first `beta.len()` frames.
pub fn soft_context_row<T: Real>(beta: &[T], h: &Tensor<T>, cols: Range<usize>, out: &mut [T]) {
    out.iter_mut().for_each(|c| *c = T::zero());
    for (j, &b) in beta.iter().enumerate() {
        if b != T::zero() {
            axpy(b, &h.row(j)[cols.clone()], out);
        }
    }
}

pub fn soft_context_row_backward<T: Real>(
    beta: &[T],
    h: &Tensor<T>,
    cols: Range<usize>,
    g_c: &[T],
    g_beta: &mut [T],
    g_h: &mut Tensor<T>,
) {
    for (j, &b) in beta.iter().enumerate() {
        g_beta[j] += dot(&h.row(j)[cols.clone()], g_c);
        if b != T::zero() {
            axpy(b, g_c, &mut g_h.row_mut(j)[cols.clone()]);
        }
    }
}

/// Contexts for every output step: `C = β · H`.
pub fn soft_context<T: Real>(beta: &Tensor<T>, h: &Tensor<T>) -> Result<Tensor<T>, AttentionError> {
    if beta.cols() != h.rows() {
        return Err(AttentionError::Shape(format!(
            "beta has {} frames, encoder states have {}",
            beta.cols(),
            h.rows()
        )));
    }
    Ok(matmul(beta, h)?)
}

/// Returns `(g_beta, g_h)`.
pub fn soft_context_backward<T: Real>(
    beta: &Tensor<T>,
    h: &Tensor<T>,
    g_c: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>), AttentionError> {
    Ok(crate::numeric::matmul_backward(beta, h, g_c)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::RngStream;

    #[test]
    fn one_hot_picks_frame() {
        let h = Tensor::from_rows(&[vec![1.0_f64, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let beta = Tensor::from_rows(&[vec![0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(soft_context(&beta, &h).unwrap().data(), h.row(1));
        let zero = Tensor::zeros(&[1, 3]);
        assert!(soft_context(&zero, &h).unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn weighted_sum_matches_loop() {
        let mut rng = RngStream::new(5, 0);
        let h = Tensor::from_fn(&[4, 3], |_| rng.gaussian());
        let beta = Tensor::from_fn(&[2, 4], |_| rng.uniform());
        let c = soft_context(&beta, &h).unwrap();
        for i in 0..2 {
            let mut row = vec![0.0; 3];
            soft_context_row(beta.row(i), &h, 0..3, &mut row);
            for d in 0..3 {
                let expect: f64 = (0..4).map(|j| beta.get2(i, j) * h.get2(j, d)).sum();
                assert!((c.get2(i, d) - expect).abs() < 1e-12);
                assert!((row[d] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let h = Tensor::<f64>::zeros(&[3, 2]);
        let beta = Tensor::<f64>::zeros(&[1, 4]);
        assert!(soft_context(&beta, &h).is_err());
    }
}
