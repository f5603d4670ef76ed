//! Thresholded, streaming attention used at inference time.

use std::ops::Range;

use thiserror::Error;

use crate::numeric::{axpy, sigmoid, softmax_in_place, Real};

use super::chunk::window;
use super::AttentionError;

pub const SELECTION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SourceError {
    #[error("read of frame {index} beyond the permitted horizon of {limit} frames")]
    Horizon { index: usize, limit: usize },
    #[error("{0}")]
    Other(String),
}

/// Frames indexed from 0 that become available on demand. `Ok(None)` means
/// the input ended before frame `j`.
pub trait FrameSource<T> {
    fn frame(&mut self, j: usize) -> Result<Option<&[T]>, SourceError>;
}

/// Fully materialized frames, one per row.
impl<T: Real> FrameSource<T> for crate::numeric::Tensor<T> {
    fn frame(&mut self, j: usize) -> Result<Option<&[T]>, SourceError> {
        Ok((j < self.rows()).then(|| self.row(j)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct HardDecodeState {
    /// Frame selected by the previous step; the next scan resumes here.
    pub t_prev: usize,
    pub finished: bool,
}

/// Advances one output step. Scans frames from `state.t_prev` and stops at the
/// first one whose selection probability reaches 0.5, then attends softly over
/// the `w` frames ending there. Only frames up to the selected one are read.
///
/// If the input ends first, `context` is zeroed, `state.finished` is set and
/// `None` is returned.
pub fn hard_decode_step<T, S, M, C>(
    state: &mut HardDecodeState,
    frames: &mut S,
    cols: Range<usize>,
    mut monotonic: M,
    mut chunk: C,
    w: usize,
    context: &mut [T],
) -> Result<Option<usize>, AttentionError>
where
    T: Real,
    S: FrameSource<T> + ?Sized,
    M: FnMut(&[T]) -> T,
    C: FnMut(&[T]) -> T,
{
    if state.finished {
        return Err(AttentionError::Finished);
    }
    if w < 1 {
        return Err(AttentionError::WindowTooSmall);
    }
    let threshold = T::from_f64(SELECTION_THRESHOLD);
    let mut j = state.t_prev;
    let selected = loop {
        match frames.frame(j)? {
            None => break None,
            Some(f) => {
                if sigmoid(monotonic(&f[cols.clone()])) >= threshold {
                    break Some(j);
                }
            }
        }
        j += 1;
    };
    context.iter_mut().for_each(|c| *c = T::zero());
    let Some(t) = selected else {
        state.finished = true;
        return Ok(None);
    };
    let win = window(t, w);
    let mut weights = Vec::with_capacity(win.len());
    for k in win.clone() {
        let f = frames.frame(k)?.expect("frame at or before the selection point");
        weights.push(chunk(&f[cols.clone()]));
    }
    softmax_in_place(&mut weights);
    for (k, &wt) in win.zip(&weights) {
        let f = frames.frame(k)?.expect("frame at or before the selection point");
        axpy(wt, &f[cols.clone()], context);
    }
    state.t_prev = t;
    Ok(Some(t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Tensor;

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    /// Each frame is `[monotonic energy, chunk energy, value]`.
    fn frames(ps: &[f64]) -> Tensor<f64> {
        let rows: Vec<Vec<f64>> =
            ps.iter().enumerate().map(|(j, &p)| vec![logit(p), 0.0, j as f64 + 1.0]).collect();
        Tensor::from_rows(&rows).unwrap()
    }

    #[test]
    fn selects_first_crossing() {
        let mut src = frames(&[0.1, 0.9, 0.2, 0.95]);
        let mut st = HardDecodeState::default();
        let mut c = [0.0; 3];
        let t = hard_decode_step(&mut st, &mut src, 0..3, |f| f[0], |f| f[1], 1, &mut c).unwrap();
        assert_eq!(t, Some(1));
        assert_eq!(st.t_prev, 1);
        assert_eq!(c[2], 2.0);
        let t = hard_decode_step(&mut st, &mut src, 0..3, |f| f[0], |f| f[1], 1, &mut c).unwrap();
        assert_eq!(t, Some(1), "the previous selection may be selected again");
    }

    #[test]
    fn window_context_averages_values() {
        let mut src = frames(&[0.1, 0.9]);
        let mut st = HardDecodeState::default();
        let mut c = [0.0];
        hard_decode_step(&mut st, &mut src, 2..3, |f| if f[0] == 2.0 { 10.0 } else { -10.0 }, |_| 0.0, 2, &mut c)
            .unwrap();
        // frames are [1], [2]; equal chunk energies average them
        assert_eq!(st.t_prev, 1);
        assert!((c[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn no_selection_finishes_with_zero_context() {
        let mut src = frames(&[0.1, 0.2, 0.3]);
        let mut st = HardDecodeState::default();
        let mut c = [7.0, 7.0];
        let t = hard_decode_step(&mut st, &mut src, 0..2, |f| f[0], |f| f[1], 2, &mut c).unwrap();
        assert_eq!(t, None);
        assert!(st.finished);
        assert_eq!(c, [0.0, 0.0]);
        let again = hard_decode_step(&mut st, &mut src, 0..2, |f| f[0], |f| f[1], 2, &mut c);
        assert_eq!(again, Err(AttentionError::Finished));
    }
}
