//! Slice kernels used on the hot paths. `w` is always a row-major
//! `rows × cols` matrix flattened into a slice.

use super::Real;

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// `out = W x`
pub fn matvec_into<T: Real>(w: &[T], x: &[T], out: &mut [T]) {
    let cols = x.len();
    debug_assert_eq!(w.len(), cols * out.len());
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o = dot(row, x);
    }
}

/// `out += W x`
pub fn matvec_acc<T: Real>(w: &[T], x: &[T], out: &mut [T]) {
    let cols = x.len();
    debug_assert_eq!(w.len(), cols * out.len());
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += dot(row, x);
    }
}

/// `out += Wᵀ y`
pub fn matvec_t_acc<T: Real>(w: &[T], y: &[T], out: &mut [T]) {
    let cols = out.len();
    debug_assert_eq!(w.len(), cols * y.len());
    for (&yi, row) in y.iter().zip(w.chunks_exact(cols)) {
        if yi == T::zero() {
            continue;
        }
        axpy(yi, row, out);
    }
}

/// `gw += y xᵀ`
pub fn outer_acc<T: Real>(y: &[T], x: &[T], gw: &mut [T]) {
    let cols = x.len();
    debug_assert_eq!(gw.len(), cols * y.len());
    for (&yi, row) in y.iter().zip(gw.chunks_exact_mut(cols)) {
        if yi == T::zero() {
            continue;
        }
        axpy(yi, x, row);
    }
}

/// `y += a x`
#[inline]
pub fn axpy<T: Real>(a: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub fn add_into<T: Real>(src: &[T], dst: &mut [T]) {
    debug_assert_eq!(src.len(), dst.len());
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
