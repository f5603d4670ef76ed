use std::ops::Range;

use super::{NumericError, Real, Tensor};

pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, NumericError> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(NumericError::Shape(format!(
            "matmul expects matrices, got {:?} and {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let (m, k) = (a.dims()[0], a.dims()[1]);
    let (k2, n) = (b.dims()[0], b.dims()[1]);
    if k != k2 {
        return Err(NumericError::Shape(format!("inner dims {k} and {k2} differ")));
    }
    let mut out = Tensor::zeros(&[m, n]);
    let (ad, bd) = (a.data(), b.data());
    let od = out.data_mut();
    for i in 0..m {
        for p in 0..k {
            let aip = ad[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            let orow = &mut od[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out.ensure_finite("matmul")
}

/// Gradients of `a·b` given the upstream gradient: `(g·bᵀ, aᵀ·g)`.
pub fn matmul_backward<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    grad: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>), NumericError> {
    let (m, k) = (a.dims()[0], a.dims()[1]);
    let n = b.dims()[1];
    if grad.dims() != [m, n] {
        return Err(NumericError::Shape(format!("upstream gradient dims {:?}", grad.dims())));
    }
    let mut ga = Tensor::zeros(&[m, k]);
    let mut gb = Tensor::zeros(&[k, n]);
    for i in 0..m {
        for p in 0..k {
            let mut acc = T::zero();
            for j in 0..n {
                acc += grad.get2(i, j) * b.get2(p, j);
            }
            ga.set2(i, p, acc);
        }
    }
    for p in 0..k {
        for j in 0..n {
            let mut acc = T::zero();
            for i in 0..m {
                acc += a.get2(i, p) * grad.get2(i, j);
            }
            gb.set2(p, j, acc);
        }
    }
    Ok((ga, gb))
}

/// Max-shifted softmax over a slice, written back in place.
pub fn softmax_in_place<T: Real>(x: &mut [T]) {
    let m = x.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in x.iter_mut() {
        *v = (*v - m).exp();
        total += *v;
    }
    for v in x.iter_mut() {
        *v /= total;
    }
}

fn lanes(dims: &[usize], axis: usize) -> Result<(usize, usize, usize), NumericError> {
    if axis >= dims.len() {
        return Err(NumericError::Axis { axis, rank: dims.len() });
    }
    let outer: usize = dims[..axis].iter().product();
    let inner: usize = dims[axis + 1..].iter().product();
    Ok((outer, dims[axis], inner))
}

pub fn softmax<T: Real>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>, NumericError> {
    let (outer, n, inner) = lanes(x.dims(), axis)?;
    if n == 0 {
        return Err(NumericError::EmptyAxis);
    }
    if !x.all_finite() {
        return Err(NumericError::NonFinite("softmax input"));
    }
    let mut out = x.clone();
    let mut lane = vec![T::zero(); n];
    let d = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            for (k, l) in lane.iter_mut().enumerate() {
                *l = d[(o * n + k) * inner + i];
            }
            softmax_in_place(&mut lane);
            for (k, l) in lane.iter().enumerate() {
                d[(o * n + k) * inner + i] = *l;
            }
        }
    }
    Ok(out)
}

/// Given `y = softmax(x)` and `gy`, returns `gx = y ⊙ (gy − ⟨y, gy⟩)` per lane.
pub fn softmax_backward<T: Real>(
    y: &Tensor<T>,
    gy: &Tensor<T>,
    axis: usize,
) -> Result<Tensor<T>, NumericError> {
    if y.dims() != gy.dims() {
        return Err(NumericError::Shape("softmax backward dims".into()));
    }
    let (outer, n, inner) = lanes(y.dims(), axis)?;
    let mut gx = y.zeros_like();
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * n + k) * inner + i;
            let inner_prod: T = (0..n).map(|k| y.data()[idx(k)] * gy.data()[idx(k)]).sum();
            for k in 0..n {
                gx.data_mut()[idx(k)] = y.data()[idx(k)] * (gy.data()[idx(k)] - inner_prod);
            }
        }
    }
    Ok(gx)
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn sigmoid_grad_from_output<T: Real>(y: T) -> T {
    y * (T::one() - y)
}

#[inline]
pub fn tanh<T: Real>(x: T) -> T {
    x.tanh()
}

#[inline]
pub fn tanh_grad_from_output<T: Real>(y: T) -> T {
    T::one() - y * y
}

pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, NumericError> {
    if a.dims() != b.dims() {
        return Err(NumericError::Shape(format!("add {:?} + {:?}", a.dims(), b.dims())));
    }
    let mut out = a.clone();
    for (o, &v) in out.data_mut().iter_mut().zip(b.data()) {
        *o += v;
    }
    out.ensure_finite("add")
}

pub fn add_backward<T: Real>(grad: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    (grad.clone(), grad.clone())
}

pub fn scale<T: Real>(a: &Tensor<T>, s: T) -> Result<Tensor<T>, NumericError> {
    let mut out = a.clone();
    out.data_mut().iter_mut().for_each(|v| *v *= s);
    out.ensure_finite("scale")
}

/// Returns `(g·s, ⟨g, a⟩)`: gradients for the tensor and for the scale factor.
pub fn scale_backward<T: Real>(a: &Tensor<T>, s: T, grad: &Tensor<T>) -> (Tensor<T>, T) {
    let mut ga = grad.clone();
    ga.data_mut().iter_mut().for_each(|v| *v *= s);
    let gs = a.data().iter().zip(grad.data()).map(|(&x, &g)| x * g).sum();
    (ga, gs)
}

pub fn concat<T: Real>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>, NumericError> {
    let first = parts.first().ok_or(NumericError::EmptyAxis)?;
    let rank = first.rank();
    if axis >= rank {
        return Err(NumericError::Axis { axis, rank });
    }
    for p in parts {
        let same = p.rank() == rank
            && p.dims().iter().enumerate().all(|(d, &n)| d == axis || n == first.dims()[d]);
        if !same {
            return Err(NumericError::Shape(format!("concat {:?} with {:?}", first.dims(), p.dims())));
        }
    }
    let mut dims = first.dims().to_vec();
    dims[axis] = parts.iter().map(|p| p.dims()[axis]).sum();
    let outer: usize = dims[..axis].iter().product();
    let inner: usize = dims[axis + 1..].iter().product();
    let mut data = Vec::with_capacity(dims.iter().product());
    for o in 0..outer {
        for p in parts {
            let block = p.dims()[axis] * inner;
            data.extend_from_slice(&p.data()[o * block..(o + 1) * block]);
        }
    }
    Tensor::new(dims, data)
}

/// Splits the upstream gradient of a concat back into the pieces' shapes.
pub fn concat_backward<T: Real>(
    grad: &Tensor<T>,
    sizes: &[usize],
    axis: usize,
) -> Result<Vec<Tensor<T>>, NumericError> {
    let mut start = 0;
    sizes
        .iter()
        .map(|&n| {
            let piece = slice(grad, axis, start..start + n);
            start += n;
            piece
        })
        .collect()
}

pub fn slice<T: Real>(a: &Tensor<T>, axis: usize, range: Range<usize>) -> Result<Tensor<T>, NumericError> {
    let (outer, n, inner) = lanes(a.dims(), axis)?;
    if range.start > range.end || range.end > n {
        return Err(NumericError::Shape(format!("slice {range:?} of axis length {n}")));
    }
    let mut dims = a.dims().to_vec();
    dims[axis] = range.len();
    let mut data = Vec::with_capacity(outer * range.len() * inner);
    for o in 0..outer {
        data.extend_from_slice(&a.data()[(o * n + range.start) * inner..(o * n + range.end) * inner]);
    }
    Tensor::new(dims, data)
}

/// Scatters the slice gradient into a zero tensor of the source shape.
pub fn slice_backward<T: Real>(
    source_dims: &[usize],
    axis: usize,
    range: Range<usize>,
    grad: &Tensor<T>,
) -> Result<Tensor<T>, NumericError> {
    let (outer, n, inner) = lanes(source_dims, axis)?;
    let mut out = Tensor::zeros(source_dims);
    let width = range.len() * inner;
    for o in 0..outer {
        let dst = (o * n + range.start) * inner;
        out.data_mut()[dst..dst + width].copy_from_slice(&grad.data()[o * width..(o + 1) * width]);
    }
    Ok(out)
}
