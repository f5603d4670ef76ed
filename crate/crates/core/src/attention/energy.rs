use std::ops::Range;

use crate::numeric::{
    axpy, dot, matvec_into, matvec_t_acc, outer_acc, tanh_grad_from_output, uniform_tensor,
    Parameters, Real, RngStream, Tensor,
};

use super::AttentionError;

/// Parameters of `g · (vᵀ/‖v‖) · tanh(W_s s + W_h h + b) + r`.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicEnergyParams<T> {
    pub w_s: Tensor<T>,
    pub w_h: Tensor<T>,
    pub v: Tensor<T>,
    pub b: Tensor<T>,
    pub g: Tensor<T>,
    pub r: Tensor<T>,
}

/// Parameters of `v'ᵀ · tanh(W_s' s + W_h' h + b')`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkEnergyParams<T> {
    pub w_s: Tensor<T>,
    pub w_h: Tensor<T>,
    pub v: Tensor<T>,
    pub b: Tensor<T>,
}

pub const INITIAL_ENERGY_OFFSET: f64 = -4.0;

impl<T: Real> MonotonicEnergyParams<T> {
    pub fn init(d: usize, dim_s: usize, dim_h: usize, rng: &mut RngStream) -> Self {
        Self {
            w_s: uniform_tensor(&[d, dim_s], 1.0 / (dim_s as f64).sqrt(), rng),
            w_h: uniform_tensor(&[d, dim_h], 1.0 / (dim_h as f64).sqrt(), rng),
            v: uniform_tensor(&[d], 1.0 / (d as f64).sqrt(), rng),
            b: Tensor::zeros(&[d]),
            g: Tensor::scalar(T::one()),
            r: Tensor::scalar(T::from_f64(INITIAL_ENERGY_OFFSET)),
        }
    }

    pub fn hidden(&self) -> usize {
        self.v.len()
    }
    pub fn dim_s(&self) -> usize {
        self.w_s.cols()
    }
    pub fn dim_h(&self) -> usize {
        self.w_h.cols()
    }
    pub fn gain(&self) -> T {
        self.g.data()[0]
    }
    pub fn offset(&self) -> T {
        self.r.data()[0]
    }

    pub fn v_norm(&self) -> Result<T, AttentionError> {
        let n = self.v.sum_squares().sqrt();
        if n > T::zero() {
            Ok(n)
        } else {
            Err(AttentionError::ZeroNormV)
        }
    }

    /// `g · v / ‖v‖`, the effective scoring vector.
    pub fn scoring_vector(&self) -> Result<Vec<T>, AttentionError> {
        let scale = self.gain() / self.v_norm()?;
        Ok(self.v.data().iter().map(|&x| x * scale).collect())
    }

    /// Maps the gradient w.r.t. the scoring vector onto `v` and `g`.
    pub fn accumulate_scoring_grad(&self, g_score: &[T], grads: &mut Self) -> Result<(), AttentionError> {
        let n = self.v_norm()?;
        let g = self.gain();
        let unit: Vec<T> = self.v.data().iter().map(|&x| x / n).collect();
        let proj = dot(&unit, g_score);
        grads.g.data_mut()[0] += proj;
        for ((gv, &u), &gs) in grads.v.data_mut().iter_mut().zip(&unit).zip(g_score) {
            *gv += g / n * (gs - proj * u);
        }
        Ok(())
    }
}

impl<T: Real> ChunkEnergyParams<T> {
    pub fn init(d: usize, dim_s: usize, dim_h: usize, rng: &mut RngStream) -> Self {
        Self {
            w_s: uniform_tensor(&[d, dim_s], 1.0 / (dim_s as f64).sqrt(), rng),
            w_h: uniform_tensor(&[d, dim_h], 1.0 / (dim_h as f64).sqrt(), rng),
            v: uniform_tensor(&[d], 1.0 / (d as f64).sqrt(), rng),
            b: Tensor::zeros(&[d]),
        }
    }
}

impl<T: Real> Parameters<T> for MonotonicEnergyParams<T> {
    fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        vec![
            ("w_s".into(), &self.w_s),
            ("w_h".into(), &self.w_h),
            ("v".into(), &self.v),
            ("b".into(), &self.b),
            ("g".into(), &self.g),
            ("r".into(), &self.r),
        ]
    }
    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        vec![
            ("w_s".into(), &mut self.w_s),
            ("w_h".into(), &mut self.w_h),
            ("v".into(), &mut self.v),
            ("b".into(), &mut self.b),
            ("g".into(), &mut self.g),
            ("r".into(), &mut self.r),
        ]
    }
}

impl<T: Real> Parameters<T> for ChunkEnergyParams<T> {
    fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        vec![
            ("w_s".into(), &self.w_s),
            ("w_h".into(), &self.w_h),
            ("v".into(), &self.v),
            ("b".into(), &self.b),
        ]
    }
    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        vec![
            ("w_s".into(), &mut self.w_s),
            ("w_h".into(), &mut self.w_h),
            ("v".into(), &mut self.v),
            ("b".into(), &mut self.b),
        ]
    }
}

fn check_input<T: Real>(w: &Tensor<T>, x: &[T], what: &str) -> Result<(), AttentionError> {
    if w.cols() != x.len() {
        return Err(AttentionError::Shape(format!(
            "{what}: expected length {}, got {}",
            w.cols(),
            x.len()
        )));
    }
    Ok(())
}

/// Direct evaluation of the monotonic energy for one (state, frame) pair.
pub fn monotonic_energy<T: Real>(
    params: &MonotonicEnergyParams<T>,
    s: &[T],
    h: &[T],
) -> Result<T, AttentionError> {
    check_input(&params.w_s, s, "decoder state")?;
    check_input(&params.w_h, h, "encoder frame")?;
    let norm = params.v_norm()?;
    let d = params.hidden();
    let mut pre = vec![T::zero(); d];
    let mut hp = vec![T::zero(); d];
    matvec_into(params.w_s.data(), s, &mut pre);
    matvec_into(params.w_h.data(), h, &mut hp);
    let mut acc = T::zero();
    for k in 0..d {
        acc += params.v.data()[k] / norm * (pre[k] + hp[k] + params.b.data()[k]).tanh();
    }
    Ok(params.gain() * acc + params.offset())
}

/// Direct evaluation of the chunk energy for one (state, frame) pair.
pub fn chunk_energy<T: Real>(params: &ChunkEnergyParams<T>, s: &[T], h: &[T]) -> Result<T, AttentionError> {
    check_input(&params.w_s, s, "decoder state")?;
    check_input(&params.w_h, h, "encoder frame")?;
    let d = params.v.len();
    let mut pre = vec![T::zero(); d];
    let mut hp = vec![T::zero(); d];
    matvec_into(params.w_s.data(), s, &mut pre);
    matvec_into(params.w_h.data(), h, &mut hp);
    Ok((0..d).map(|k| params.v.data()[k] * (pre[k] + hp[k] + params.b.data()[k]).tanh()).sum())
}

/// `W_h h_j[cols]` for every frame `j`: a `T' × d` key matrix.
pub fn project_keys<T: Real>(w_h: &Tensor<T>, h: &Tensor<T>, cols: Range<usize>) -> Tensor<T> {
    let d = w_h.rows();
    let mut keys = Tensor::zeros(&[h.rows(), d]);
    for j in 0..h.rows() {
        let frame = &h.row(j)[cols.clone()];
        matvec_into(w_h.data(), frame, keys.row_mut(j));
    }
    keys
}

/// Routes key gradients into `W_h` and the encoder states.
pub fn project_keys_backward<T: Real>(
    w_h: &Tensor<T>,
    h: &Tensor<T>,
    cols: Range<usize>,
    g_keys: &Tensor<T>,
    g_w_h: &mut Tensor<T>,
    g_h: &mut Tensor<T>,
) {
    for j in 0..h.rows() {
        let gk = g_keys.row(j);
        outer_acc(gk, &h.row(j)[cols.clone()], g_w_h.data_mut());
        matvec_t_acc(w_h.data(), gk, &mut g_h.row_mut(j)[cols.clone()]);
    }
}

/// Per-row activations kept for the backward pass of [`score_row`].
#[derive(Debug, Clone)]
pub struct ScoreCache<T> {
    /// `tanh(W_s s + b + key_j)`, one row per frame, flattened.
    pub act: Vec<T>,
}

/// Scores every key against one query: `out_j = vecᵀ tanh(W_s s + b + key_j) + offset`.
/// `frames` limits the scan to a prefix of the key rows.
pub fn score_row<T: Real>(
    w_s: &Tensor<T>,
    b: &Tensor<T>,
    scoring: &[T],
    offset: T,
    s: &[T],
    keys: &Tensor<T>,
    out: &mut [T],
) -> ScoreCache<T> {
    let d = scoring.len();
    let mut query = vec![T::zero(); d];
    matvec_into(w_s.data(), s, &mut query);
    for (q, &bb) in query.iter_mut().zip(b.data()) {
        *q += bb;
    }
    let mut act = vec![T::zero(); out.len() * d];
    for (j, e) in out.iter_mut().enumerate() {
        let a = &mut act[j * d..(j + 1) * d];
        for ((x, &q), &k) in a.iter_mut().zip(&query).zip(keys.row(j)) {
            *x = (q + k).tanh();
        }
        *e = dot(scoring, a) + offset;
    }
    ScoreCache { act }
}

/// Gradient sinks for [`score_row_backward`].
pub struct ScoreGrads<'a, T> {
    pub w_s: &'a mut Tensor<T>,
    pub b: &'a mut Tensor<T>,
    pub scoring: &'a mut [T],
    pub offset: &'a mut T,
    pub s: &'a mut [T],
    pub keys: &'a mut Tensor<T>,
}

#[allow(clippy::too_many_arguments)]
pub fn score_row_backward<T: Real>(
    w_s: &Tensor<T>,
    scoring: &[T],
    s: &[T],
    cache: &ScoreCache<T>,
    g_out: &[T],
    grads: ScoreGrads<'_, T>,
) {
    let d = scoring.len();
    let mut g_query = vec![T::zero(); d];
    let mut g_pre = vec![T::zero(); d];
    for (j, &ge) in g_out.iter().enumerate() {
        if ge == T::zero() {
            continue;
        }
        *grads.offset += ge;
        let a = &cache.act[j * d..(j + 1) * d];
        axpy(ge, a, grads.scoring);
        for ((gp, &sc), &x) in g_pre.iter_mut().zip(scoring).zip(a) {
            *gp = ge * sc * tanh_grad_from_output(x);
        }
        for (gk, &gp) in grads.keys.row_mut(j).iter_mut().zip(&g_pre) {
            *gk += gp;
        }
        for (gq, &gp) in g_query.iter_mut().zip(&g_pre) {
            *gq += gp;
        }
    }
    for (gb, &gq) in grads.b.data_mut().iter_mut().zip(&g_query) {
        *gb += gq;
    }
    outer_acc(&g_query, s, grads.w_s.data_mut());
    matvec_t_acc(w_s.data(), &g_query, grads.s);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_params(seed: u64) -> (MonotonicEnergyParams<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = RngStream::new(seed, 0);
        let mut p = MonotonicEnergyParams::<f64>::init(5, 4, 3, &mut rng);
        p.b = uniform_tensor(&[5], 0.5, &mut rng);
        p.g = Tensor::scalar(rng.uniform_range(0.5, 2.0));
        p.r = Tensor::scalar(rng.uniform_range(-1.0, 1.0));
        let s = (0..4).map(|_| rng.gaussian()).collect();
        let h = (0..3).map(|_| rng.gaussian()).collect();
        (p, s, h)
    }

    #[test]
    fn zero_weights_give_offset() {
        let (mut p, s, h) = random_params(1);
        p.w_s.fill(0.0);
        p.w_h.fill(0.0);
        p.b.fill(0.0);
        p.r = Tensor::scalar(0.0);
        assert_eq!(monotonic_energy(&p, &s, &h).unwrap(), 0.0);
    }

    #[test]
    fn invariant_to_v_rescaling() {
        let (mut p, s, h) = random_params(2);
        let e1 = monotonic_energy(&p, &s, &h).unwrap();
        p.v.data_mut().iter_mut().for_each(|x| *x *= 2.0);
        let e2 = monotonic_energy(&p, &s, &h).unwrap();
        assert!((e1 - e2).abs() < 1e-12);
    }

    #[test]
    fn matches_hand_written_formula() {
        let (p, s, h) = random_params(3);
        let norm: f64 = p.v.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut expect = 0.0;
        for k in 0..5 {
            let mut a = p.b.data()[k];
            for (m, sm) in s.iter().enumerate() {
                a += p.w_s.get2(k, m) * sm;
            }
            for (m, hm) in h.iter().enumerate() {
                a += p.w_h.get2(k, m) * hm;
            }
            expect += p.v.data()[k] / norm * a.tanh();
        }
        expect = p.g.data()[0] * expect + p.r.data()[0];
        assert!((monotonic_energy(&p, &s, &h).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn zero_norm_v_is_an_error() {
        let (mut p, s, h) = random_params(4);
        p.v.fill(0.0);
        assert_eq!(monotonic_energy(&p, &s, &h), Err(AttentionError::ZeroNormV));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let (p, s, _) = random_params(5);
        assert!(matches!(monotonic_energy(&p, &s, &[1.0]), Err(AttentionError::Shape(_))));
    }

    #[test]
    fn batched_scores_match_direct_evaluation() {
        let (p, s, _) = random_params(6);
        let mut rng = RngStream::new(66, 0);
        let h = Tensor::from_fn(&[4, 3], |_| rng.gaussian());
        let keys = project_keys(&p.w_h, &h, 0..3);
        let mut out = vec![0.0; 4];
        score_row(&p.w_s, &p.b, &p.scoring_vector().unwrap(), p.offset(), &s, &keys, &mut out);
        for j in 0..4 {
            let direct = monotonic_energy(&p, &s, h.row(j)).unwrap();
            assert!((out[j] - direct).abs() < 1e-12);
        }
    }
}
