use super::{NumericError, Real, Tensor};

/// A fixed, ordered collection of named parameter tensors. Gradients use the
/// same type as the parameters they belong to.
pub trait Parameters<T: Real> {
    fn tensors(&self) -> Vec<(String, &Tensor<T>)>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn zero(&mut self) {
        for (_, t) in self.tensors_mut() {
            t.fill(T::zero());
        }
    }

    fn sum_squares(&self) -> T {
        self.tensors().iter().map(|(_, t)| t.sum_squares()).sum()
    }

    /// `self += scale · other`, matched by position.
    fn add_scaled(&mut self, other: &Self, scale: T) {
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, &s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d += scale * s;
            }
        }
    }

    fn scale(&mut self, s: T) {
        for (_, t) in self.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.all_finite())
    }

    /// Copies values from a structurally identical set in any precision.
    fn copy_from<U: Real, P: Parameters<U>>(&mut self, other: &P) -> Result<(), NumericError> {
        let src = other.tensors();
        let dst = self.tensors_mut();
        if src.len() != dst.len() {
            return Err(NumericError::Shape("parameter sets differ in tensor count".into()));
        }
        for ((dn, d), (sn, s)) in dst.into_iter().zip(src) {
            if dn != sn || d.dims() != s.dims() {
                return Err(NumericError::Shape(format!("{dn} {:?} vs {sn} {:?}", d.dims(), s.dims())));
            }
            for (x, &y) in d.data_mut().iter_mut().zip(s.data()) {
                *x = T::from_f64(y.as_f64());
            }
        }
        Ok(())
    }

    /// Flattened view of every coordinate, in visiting order.
    fn flatten(&self) -> Vec<T> {
        self.tensors().iter().flat_map(|(_, t)| t.data().iter().copied()).collect()
    }

    fn set_flat(&mut self, values: &[T]) {
        let mut it = values.iter();
        for (_, t) in self.tensors_mut() {
            for v in t.data_mut() {
                *v = *it.next().expect("flat parameter vector too short");
            }
        }
    }
}

pub fn uniform_tensor<T: Real>(
    dims: &[usize],
    bound: f64,
    rng: &mut super::RngStream,
) -> Tensor<T> {
    Tensor::from_fn(dims, |_| T::from_f64(rng.uniform_range(-bound, bound)))
}
