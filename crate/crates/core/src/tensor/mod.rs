//! Dense row-major tensors and the numeric kernels that operate on them.

mod conv;
mod matmul;
mod ops;
mod pool;
mod resize;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result, Scalar};

pub use conv::{conv2d_backward, conv2d_fast, conv2d_fast_with, conv2d_naive, ConvGrads, ConvSpec};
pub(crate) use matmul::{gemm_a_bt_acc, gemm_acc, gemm_at_b_acc};
pub use matmul::{matmul, matmul_with};
pub(crate) use ops::sigmoid_scalar;
pub use ops::{add, elementwise, mul, relu, sigmoid, ElementwiseOp};
pub use pool::{global_avg_pool, global_avg_pool_backward, pool2d, pool2d_backward, PoolKind, Pooled};
pub use resize::bilinear_resize;

/// Dense tensor with 1 to 4 axes. For 4-D tensors the axis order is
/// batch, channel, height, width; the last axis varies fastest.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: std::fmt::Debug> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("dims", &self.dims)
            .field("data", &preview)
            .finish()
    }
}

fn check_dims(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() || dims.len() > 4 {
        return Err(Error::ShapeMsg {
            op: "tensor",
            msg: format!("rank must be 1..=4, got {}", dims.len()),
        });
    }
    if let Some(axis) = dims.iter().position(|&d| d == 0) {
        return Err(Error::shape("tensor", format!("{axis}"), 1, 0));
    }
    Ok(dims.iter().product())
}

impl<T: Scalar> Tensor<T> {
    pub fn new(dims: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let dims = dims.into();
        let len = check_dims(&dims)?;
        if len != data.len() {
            return Err(Error::ShapeMsg {
                op: "tensor",
                msg: format!("dims {dims:?} need {len} elements, buffer has {}", data.len()),
            });
        }
        Ok(Tensor { dims, data })
    }

    pub fn full(dims: impl Into<Vec<usize>>, value: T) -> Self {
        let dims = dims.into();
        let len = check_dims(&dims).expect("invalid tensor dims");
        Tensor {
            dims,
            data: vec![value; len],
        }
    }

    pub fn zeros(dims: impl Into<Vec<usize>>) -> Self {
        Self::full(dims, T::zero())
    }

    pub fn zeros_like(other: &Tensor<T>) -> Self {
        Tensor {
            dims: other.dims.clone(),
            data: vec![T::zero(); other.data.len()],
        }
    }

    /// Build a tensor whose element at each flat offset is `f(offset)`.
    pub fn from_fn(dims: impl Into<Vec<usize>>, f: impl FnMut(usize) -> T) -> Self {
        let dims = dims.into();
        let len = check_dims(&dims).expect("invalid tensor dims");
        Tensor {
            dims,
            data: (0..len).map(f).collect(),
        }
    }

    /// Standard-normal entries scaled by `std`.
    pub fn randn<R: Rng + ?Sized>(dims: impl Into<Vec<usize>>, std: f64, rng: &mut R) -> Self {
        Self::from_fn(dims, |_| {
            let z: f64 = StandardNormal.sample(rng);
            T::from_f64_lossy(z * std)
        })
    }

    /// Uniform entries in `[lo, hi)`.
    pub fn uniform<R: Rng + ?Sized>(dims: impl Into<Vec<usize>>, lo: f64, hi: f64, rng: &mut R) -> Self {
        Self::from_fn(dims, |_| T::from_f64_lossy(rng.random_range(lo..hi)))
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Dimensions of a 4-D tensor, or a shape error naming `op`.
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match self.dims[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::shape(op, "rank", 4, self.dims.len())),
        }
    }

    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.dims[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::shape(op, "rank", 2, self.dims.len())),
        }
    }

    /// Row-major flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.dims.len());
        index.iter().zip(&self.dims).fold(0, |acc, (&i, &d)| {
            debug_assert!(i < d);
            acc * d + i
        })
    }

    /// Inverse of [`Tensor::offset`].
    pub fn unravel(&self, mut offset: usize) -> Vec<usize> {
        let mut index = vec![0; self.dims.len()];
        for (slot, &d) in index.iter_mut().zip(&self.dims).rev() {
            *slot = offset % d;
            offset /= d;
        }
        index
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn reshape(self, dims: impl Into<Vec<usize>>) -> Result<Self> {
        Tensor::new(dims, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
        }
    }

    /// Sum in fixed left-to-right order.
    pub fn sum(&self) -> T {
        let mut acc = T::zero();
        for &v in &self.data {
            acc += v;
        }
        acc
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    /// `self += other`, elementwise, same dims.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        self.expect_same_dims("add_assign", other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn expect_same_dims(&self, op: &'static str, other: &Tensor<T>) -> Result<()> {
        if self.dims.len() != other.dims.len() {
            return Err(Error::shape(op, "rank", self.dims.len(), other.dims.len()));
        }
        for (axis, (&a, &b)) in self.dims.iter().zip(&other.dims).enumerate() {
            if a != b {
                return Err(Error::shape(op, format!("{axis}"), a, b));
            }
        }
        Ok(())
    }

    /// Stack equally shaped `C×H×W` (or `1×C×H×W`) samples into an `N×C×H×W` batch.
    pub fn stack(samples: &[&Tensor<T>]) -> Result<Self> {
        let first = samples.first().ok_or(Error::ShapeMsg {
            op: "stack",
            msg: "no samples".into(),
        })?;
        let inner: Vec<usize> = match first.dims[..] {
            [1, c, h, w] | [c, h, w] => vec![c, h, w],
            _ => return Err(Error::shape("stack", "rank", 3, first.rank())),
        };
        let mut data = Vec::with_capacity(samples.len() * first.len());
        for s in samples {
            if s.len() != first.len() {
                return Err(Error::shape("stack", "sample length", first.len(), s.len()));
            }
            data.extend_from_slice(&s.data);
        }
        Tensor::new([samples.len(), inner[0], inner[1], inner[2]], data)
    }

    /// Copy of the `n`-th sample of a 4-D tensor as `1×C×H×W`.
    pub fn sample(&self, n: usize) -> Result<Self> {
        let (_, c, h, w) = self.dims4("sample")?;
        let stride = c * h * w;
        Tensor::new([1, c, h, w], self.data[n * stride..(n + 1) * stride].to_vec())
    }

    /// Copy channels `[start, start + count)` of a 4-D tensor.
    pub fn channel_slice(&self, start: usize, count: usize) -> Result<Self> {
        let (n, c, h, w) = self.dims4("channel_slice")?;
        if start + count > c {
            return Err(Error::shape("channel_slice", "1", c, start + count));
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(n * count * hw);
        for b in 0..n {
            let base = (b * c + start) * hw;
            data.extend_from_slice(&self.data[base..base + count * hw]);
        }
        Tensor::new([n, count, h, w], data)
    }

    /// Concatenate 4-D tensors along the channel axis.
    pub fn concat_channels(parts: &[&Tensor<T>]) -> Result<Self> {
        let (n, _, h, w) = parts[0].dims4("concat_channels")?;
        let mut total_c = 0;
        for p in parts {
            let (pn, pc, ph, pw) = p.dims4("concat_channels")?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::ShapeMsg {
                    op: "concat_channels",
                    msg: format!("mismatched dims {:?} vs {:?}", p.dims, parts[0].dims),
                });
            }
            total_c += pc;
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(n * total_c * hw);
        for b in 0..n {
            for p in parts {
                let pc = p.dims[1];
                data.extend_from_slice(&p.data[b * pc * hw..(b + 1) * pc * hw]);
            }
        }
        Tensor::new([n, total_c, h, w], data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_dims() {
        assert!(Tensor::<f64>::new([2, 0], vec![]).is_err());
        assert!(Tensor::<f64>::new([2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::<f64>::new([1, 1, 1, 1, 1], vec![1.0]).is_err());
    }

    #[test]
    fn channel_slice_and_concat_invert() {
        let t = Tensor::<f64>::from_fn([2, 3, 2, 2], |i| i as f64);
        let a = t.channel_slice(0, 1).unwrap();
        let b = t.channel_slice(1, 2).unwrap();
        assert_eq!(Tensor::concat_channels(&[&a, &b]).unwrap(), t);
    }

    proptest! {
        #[test]
        fn offset_and_unravel_round_trip(dims in prop::collection::vec(1usize..5, 1..=4), seed in 0usize..1000) {
            let t = Tensor::<f32>::zeros(dims.clone());
            let off = seed % t.len();
            let idx = t.unravel(off);
            prop_assert_eq!(t.offset(&idx), off);
            // last axis fastest
            if off + 1 < t.len() && idx[dims.len() - 1] + 1 < dims[dims.len() - 1] {
                let mut next = idx.clone();
                *next.last_mut().unwrap() += 1;
                prop_assert_eq!(t.offset(&next), off + 1);
            }
        }
    }
}
