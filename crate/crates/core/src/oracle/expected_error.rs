use super::{edit_distance_recursive, OracleError};

/// Upper bound on `vocab^max_len` for the enumeration.
pub const MAX_ENUM_SEQUENCES: f64 = 1e5;

/// `Σ_y P(y|x)·W(y, y*)` over every output the decoder can produce in at most
/// `max_len` steps.
///
/// `next_log_probs(prefix)` returns log-probabilities over the whole
/// vocabulary, token `eos` included, for the step after `prefix`. A sequence
/// ends when `eos` is chosen (the end token is not part of the hypothesis) or
/// when `max_len` symbols have been emitted, so the probabilities of all
/// enumerated outputs sum to one.
pub fn exhaustive_expected_error<F>(
    mut next_log_probs: F,
    vocab: usize,
    eos: usize,
    reference: &[usize],
    max_len: usize,
) -> Result<f64, OracleError>
where
    F: FnMut(&[usize]) -> Result<Vec<f64>, OracleError>,
{
    if (vocab as f64).powi(max_len as i32) > MAX_ENUM_SEQUENCES {
        return Err(OracleError::TooLarge(format!("{vocab}^{max_len} sequences")));
    }
    let reference: Vec<u32> = reference.iter().map(|&t| t as u32).collect();
    let mut total = 0.0;
    let mut prefix = Vec::new();
    expand(&mut next_log_probs, vocab, eos, &reference, max_len, 0.0, &mut prefix, &mut total)?;
    Ok(total)
}

#[allow(clippy::too_many_arguments)]
fn expand<F>(
    f: &mut F,
    vocab: usize,
    eos: usize,
    reference: &[u32],
    max_len: usize,
    log_p: f64,
    prefix: &mut Vec<usize>,
    total: &mut f64,
) -> Result<(), OracleError>
where
    F: FnMut(&[usize]) -> Result<Vec<f64>, OracleError>,
{
    let error = |p: &[usize]| {
        let hyp: Vec<u32> = p.iter().map(|&t| t as u32).collect();
        edit_distance_recursive(&hyp, reference) as f64
    };
    if prefix.len() == max_len {
        *total += log_p.exp() * error(prefix);
        return Ok(());
    }
    let lp = f(prefix)?;
    if lp.len() != vocab {
        return Err(OracleError::Model(format!("{} log-probabilities for a vocabulary of {vocab}", lp.len())));
    }
    for (tok, &l) in lp.iter().enumerate() {
        if tok == eos {
            *total += (log_p + l).exp() * error(prefix);
        } else {
            prefix.push(tok);
            expand(f, vocab, eos, reference, max_len, log_p + l, prefix, total)?;
            prefix.pop();
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(v: usize) -> impl FnMut(&[usize]) -> Result<Vec<f64>, OracleError> {
        move |_| Ok(vec![-(v as f64).ln(); v])
    }

    #[test]
    fn uniform_two_tokens_one_step() {
        let e = exhaustive_expected_error(uniform(2), 2, 0, &[1], 1).unwrap();
        assert!((e - 0.5).abs() < 1e-15);
    }

    #[test]
    fn certain_model_has_zero_error() {
        let reference = [2usize, 1];
        let model = |p: &[usize]| {
            let next = reference.get(p.len()).copied().unwrap_or(0);
            Ok((0..3).map(|t| if t == next { 0.0 } else { f64::NEG_INFINITY }).collect())
        };
        assert_eq!(exhaustive_expected_error(model, 3, 0, &reference, 3).unwrap(), 0.0);
    }

    #[test]
    fn rejects_huge_instances() {
        assert!(exhaustive_expected_error(uniform(20), 20, 0, &[1], 5).is_err());
    }
}
