use super::Tensor;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Mul,
    Relu,
    Sigmoid,
}

/// Pointwise operation. Binary ops broadcast over axes where one side has
/// extent 1; both operands must have the same rank.
pub fn elementwise<T: Scalar>(op: ElementwiseOp, a: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    match op {
        ElementwiseOp::Relu => Ok(relu(a)),
        ElementwiseOp::Sigmoid => Ok(sigmoid(a)),
        ElementwiseOp::Add | ElementwiseOp::Mul => {
            let b = b.ok_or(Error::ShapeMsg {
                op: "elementwise",
                msg: format!("{op:?} needs two operands"),
            })?;
            if op == ElementwiseOp::Add {
                add(a, b)
            } else {
                mul(a, b)
            }
        }
    }
}

pub fn relu<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    a.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn sigmoid<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    a.map(sigmoid_scalar)
}

#[inline]
pub(crate) fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    // Split by sign so exp never overflows.
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    broadcast_binary("add", a, b, |x, y| x + y)
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    broadcast_binary("mul", a, b, |x, y| x * y)
}

fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * dims[i + 1];
    }
    s
}

fn broadcast_binary<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.dims() == b.dims() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(a.dims().to_vec(), data);
    }
    if a.rank() != b.rank() {
        return Err(Error::shape(op, "rank", a.rank(), b.rank()));
    }
    let mut out_dims = Vec::with_capacity(a.rank());
    for (axis, (&da, &db)) in a.dims().iter().zip(b.dims()).enumerate() {
        if da != db && da != 1 && db != 1 {
            return Err(Error::shape(op, format!("{axis}"), da, db));
        }
        out_dims.push(da.max(db));
    }
    let sa: Vec<usize> = strides(a.dims())
        .into_iter()
        .zip(a.dims())
        .map(|(s, &d)| if d == 1 { 0 } else { s })
        .collect();
    let sb: Vec<usize> = strides(b.dims())
        .into_iter()
        .zip(b.dims())
        .map(|(s, &d)| if d == 1 { 0 } else { s })
        .collect();
    let total: usize = out_dims.iter().product();
    let mut index = vec![0usize; out_dims.len()];
    let mut data = Vec::with_capacity(total);
    for _ in 0..total {
        let oa: usize = index.iter().zip(&sa).map(|(i, s)| i * s).sum();
        let ob: usize = index.iter().zip(&sb).map(|(i, s)| i * s).sum();
        data.push(f(a.data()[oa], b.data()[ob]));
        for axis in (0..out_dims.len()).rev() {
            index[axis] += 1;
            if index[axis] < out_dims[axis] {
                break;
            }
            index[axis] = 0;
        }
    }
    Tensor::new(out_dims, data)
}
