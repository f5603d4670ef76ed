//! Brute-force and finite-difference verifiers.
//!
//! Nothing here calls into the kernels it checks: alignments are enumerated
//! path by path, edit distance is a memoized recursion, and gradients come
//! from perturbing a black-box loss.

mod expected_error;
mod gradcheck;

pub use expected_error::exhaustive_expected_error;
pub use gradcheck::{
    finite_difference_grad, relative_error, richardson_difference_grad, ridders_difference_grad, GradCheckEntry, GradCheckReport, FailingCoordinate,
    DEFAULT_STEP,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("instance too large for exhaustive enumeration: {0}")]
    TooLarge(String),
    #[error("non-finite loss evaluation at coordinate {0}")]
    NonFinite(usize),
    #[error("model evaluation failed: {0}")]
    Model(String),
}

pub const MAX_ENUM_STEPS: usize = 6;
pub const MAX_ENUM_FRAMES: usize = 8;

/// Expected alignment by enumerating every monotonic selection path.
///
/// Each output step resumes at the previous step's frame (frame 0 for the
/// first step) and either stops at some frame at or after it, or runs off the
/// end, in which case every later step selects nothing too. Returns the
/// marginals `α[i][j]` and the total probability of all enumerated paths,
/// including the ones that end without a selection.
pub fn enumerate_alignments(p: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, f64), OracleError> {
    let steps = p.len();
    let frames = p.first().map_or(0, Vec::len);
    if steps > MAX_ENUM_STEPS || frames > MAX_ENUM_FRAMES {
        return Err(OracleError::TooLarge(format!("{steps} steps × {frames} frames")));
    }
    let mut alpha = vec![vec![0.0; frames]; steps];
    let mut total = 0.0;
    walk(p, 0, 0, 1.0, &mut Vec::new(), &mut alpha, &mut total);
    Ok((alpha, total))
}

fn walk(
    p: &[Vec<f64>],
    step: usize,
    start: usize,
    prob: f64,
    path: &mut Vec<usize>,
    alpha: &mut [Vec<f64>],
    total: &mut f64,
) {
    if step == p.len() {
        for (i, &t) in path.iter().enumerate() {
            alpha[i][t] += prob;
        }
        *total += prob;
        return;
    }
    let row = &p[step];
    let mut survive = 1.0;
    for t in start..row.len() {
        path.push(t);
        walk(p, step + 1, t, prob * survive * row[t], path, alpha, total);
        path.pop();
        survive *= 1.0 - row[t];
    }
    // Ran off the end: this and every later step select nothing.
    for (i, &t) in path.iter().enumerate() {
        alpha[i][t] += prob * survive;
    }
    *total += prob * survive;
}

/// Levenshtein distance by memoized recursion over suffixes.
pub fn edit_distance_recursive(a: &[u32], b: &[u32]) -> usize {
    fn go(a: &[u32], b: &[u32], i: usize, j: usize, memo: &mut Vec<Vec<Option<usize>>>) -> usize {
        if let Some(v) = memo[i][j] {
            return v;
        }
        let v = if i == a.len() {
            b.len() - j
        } else if j == b.len() {
            a.len() - i
        } else {
            let sub = go(a, b, i + 1, j + 1, memo) + usize::from(a[i] != b[j]);
            let del = go(a, b, i + 1, j, memo) + 1;
            let ins = go(a, b, i, j + 1, memo) + 1;
            sub.min(del).min(ins)
        };
        memo[i][j] = Some(v);
        v
    }
    let mut memo = vec![vec![None; b.len() + 1]; a.len() + 1];
    go(a, b, 0, 0, &mut memo)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_enumerated_single_step() {
        let (a, total) = enumerate_alignments(&[vec![0.5, 0.5]]).unwrap();
        assert_eq!(a, vec![vec![0.5, 0.25]]);
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn certain_selection_stays_on_first_frame() {
        let p = vec![vec![1.0; 4]; 3];
        let (a, _) = enumerate_alignments(&p).unwrap();
        for row in a {
            assert_eq!(row, vec![1.0, 0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn total_mass_is_one() {
        let p = vec![vec![0.3, 0.7, 0.1, 0.9, 0.5], vec![0.2, 0.4, 0.6, 0.8, 0.05], vec![0.5; 5]];
        let (_, total) = enumerate_alignments(&p).unwrap();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn refuses_large_instances() {
        assert!(enumerate_alignments(&vec![vec![0.5; 9]; 2]).is_err());
        assert!(enumerate_alignments(&vec![vec![0.5; 2]; 7]).is_err());
    }

    #[test]
    fn recursive_edit_distance() {
        let kitten: Vec<u32> = "kitten".bytes().map(u32::from).collect();
        let sitting: Vec<u32> = "sitting".bytes().map(u32::from).collect();
        assert_eq!(edit_distance_recursive(&kitten, &sitting), 3);
        assert_eq!(edit_distance_recursive(&[], &[1, 2, 3]), 3);
        assert_eq!(edit_distance_recursive(&[4, 5], &[4, 5]), 0);
    }
}
