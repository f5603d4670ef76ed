use crate::numeric::{
    matvec_acc, matvec_t_acc, outer_acc, sigmoid, sigmoid_grad_from_output, tanh_grad_from_output,
    uniform_tensor, Parameters, Real, RngStream, Tensor,
};

/// Gated recurrent cell with input, forget and output gates and a cell state.
/// Gate rows are stacked `[input, forget, candidate, output]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams<T> {
    pub w_x: Tensor<T>,
    pub w_h: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Real> LstmParams<T> {
    pub fn init(input: usize, hidden: usize, rng: &mut RngStream) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut b = Tensor::zeros(&[4 * hidden]);
        b.data_mut()[hidden..2 * hidden].iter_mut().for_each(|x| *x = T::one());
        Self {
            w_x: uniform_tensor(&[4 * hidden, input], bound, rng),
            w_h: uniform_tensor(&[4 * hidden, hidden], bound, rng),
            b,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_h.cols()
    }

    pub fn input(&self) -> usize {
        self.w_x.cols()
    }
}

impl<T: Real> Parameters<T> for LstmParams<T> {
    fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        vec![("w_x".into(), &self.w_x), ("w_h".into(), &self.w_h), ("b".into(), &self.b)]
    }
    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        vec![("w_x".into(), &mut self.w_x), ("w_h".into(), &mut self.w_h), ("b".into(), &mut self.b)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<T> {
    pub h: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Real> LstmState<T> {
    pub fn zeros(hidden: usize) -> Self {
        Self { h: vec![T::zero(); hidden], c: vec![T::zero(); hidden] }
    }
}

#[derive(Debug, Clone)]
pub struct LstmCache<T> {
    x: Vec<T>,
    prev: LstmState<T>,
    /// Activated gates, `[i, f, g, o]`.
    gates: Vec<T>,
    tanh_c: Vec<T>,
}

pub fn lstm_step<T: Real>(p: &LstmParams<T>, x: &[T], prev: &LstmState<T>) -> (LstmState<T>, LstmCache<T>) {
    let n = p.hidden();
    let mut z = p.b.data().to_vec();
    matvec_acc(p.w_x.data(), x, &mut z);
    matvec_acc(p.w_h.data(), &prev.h, &mut z);
    for (k, v) in z.iter_mut().enumerate() {
        *v = if (2 * n..3 * n).contains(&k) { v.tanh() } else { sigmoid(*v) };
    }
    let mut next = LstmState::zeros(n);
    let mut tanh_c = vec![T::zero(); n];
    for k in 0..n {
        let (i, f, g, o) = (z[k], z[n + k], z[2 * n + k], z[3 * n + k]);
        next.c[k] = f * prev.c[k] + i * g;
        tanh_c[k] = next.c[k].tanh();
        next.h[k] = o * tanh_c[k];
    }
    (next, LstmCache { x: x.to_vec(), prev: prev.clone(), gates: z, tanh_c })
}

/// Backward through one step. `g_next` holds the gradients w.r.t. the step's
/// output `(h, c)`; returns those w.r.t. the previous state and accumulates
/// the input gradient into `g_x`.
pub fn lstm_step_backward<T: Real>(
    p: &LstmParams<T>,
    cache: &LstmCache<T>,
    g_next: &LstmState<T>,
    grads: &mut LstmParams<T>,
    g_x: &mut [T],
) -> LstmState<T> {
    let n = p.hidden();
    let z = &cache.gates;
    let mut g_z = vec![T::zero(); 4 * n];
    let mut g_prev = LstmState::zeros(n);
    for k in 0..n {
        let (i, f, g, o) = (z[k], z[n + k], z[2 * n + k], z[3 * n + k]);
        let tc = cache.tanh_c[k];
        let g_o = g_next.h[k] * tc;
        let g_c = g_next.c[k] + g_next.h[k] * o * tanh_grad_from_output(tc);
        g_z[k] = g_c * g * sigmoid_grad_from_output(i);
        g_z[n + k] = g_c * cache.prev.c[k] * sigmoid_grad_from_output(f);
        g_z[2 * n + k] = g_c * i * tanh_grad_from_output(g);
        g_z[3 * n + k] = g_o * sigmoid_grad_from_output(o);
        g_prev.c[k] = g_c * f;
    }
    for (gb, &gz) in grads.b.data_mut().iter_mut().zip(&g_z) {
        *gb += gz;
    }
    outer_acc(&g_z, &cache.x, grads.w_x.data_mut());
    outer_acc(&g_z, &cache.prev.h, grads.w_h.data_mut());
    matvec_t_acc(p.w_x.data(), &g_z, g_x);
    matvec_t_acc(p.w_h.data(), &g_z, &mut g_prev.h);
    g_prev
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_params_zero_input_stay_zero() {
        let mut rng = RngStream::new(1, 0);
        let mut p = LstmParams::<f64>::init(3, 4, &mut rng);
        p.zero();
        let (s, _) = lstm_step(&p, &[0.0; 3], &LstmState::zeros(4));
        assert!(s.h.iter().chain(&s.c).all(|&v| v == 0.0));
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let mut rng = RngStream::new(1, 0);
        let p = LstmParams::<f64>::init(3, 4, &mut rng);
        assert_eq!(&p.b.data()[4..8], &[1.0; 4]);
        assert!(p.b.data()[..4].iter().chain(&p.b.data()[8..]).all(|&v| v == 0.0));
    }
}
