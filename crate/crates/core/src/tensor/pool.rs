use super::Tensor;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    /// Zero padding counts toward the divisor: every window divides by
    /// `kernel * kernel`.
    Avg,
}

#[derive(Debug, Clone)]
pub struct Pooled<T> {
    pub output: Tensor<T>,
    /// For max pooling, the flat input offset chosen by each output element.
    pub argmax: Option<Vec<usize>>,
}

fn output_size(
    op: &'static str,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize)> {
    if kernel == 0 || stride == 0 {
        return Err(Error::Config(format!("{op}: kernel and stride must be >= 1")));
    }
    if padding >= kernel {
        return Err(Error::Config(format!(
            "{op}: padding {padding} must be smaller than kernel {kernel}"
        )));
    }
    if h + 2 * padding < kernel || w + 2 * padding < kernel {
        return Err(Error::ShapeMsg {
            op,
            msg: format!("window {kernel}x{kernel} larger than padded input {h}x{w} (padding {padding})"),
        });
    }
    Ok((
        (h + 2 * padding - kernel) / stride + 1,
        (w + 2 * padding - kernel) / stride + 1,
    ))
}

pub fn pool2d<T: Scalar>(
    input: &Tensor<T>,
    kind: PoolKind,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<Pooled<T>> {
    let (n, c, h, w) = input.dims4("pool2d")?;
    let (oh, ow) = output_size("pool2d", h, w, kernel, stride, padding)?;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::new();
    let divisor = T::from_usize(kernel * kernel).unwrap();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let y0 = (oy * stride) as isize - padding as isize;
                let x0 = (ox * stride) as isize - padding as isize;
                let mut best = T::neg_infinity();
                let mut best_at = usize::MAX;
                let mut sum = T::zero();
                for ky in 0..kernel as isize {
                    let iy = y0 + ky;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kernel as isize {
                        let ix = x0 + kx;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let off = base + iy as usize * w + ix as usize;
                        let v = x[off];
                        sum += v;
                        if v > best || best_at == usize::MAX {
                            best = v;
                            best_at = off;
                        }
                    }
                }
                match kind {
                    PoolKind::Max => {
                        out.push(best);
                        argmax.push(best_at);
                    }
                    PoolKind::Avg => out.push(sum / divisor),
                }
            }
        }
    }
    Ok(Pooled {
        output: Tensor::new([n, c, oh, ow], out)?,
        argmax: (kind == PoolKind::Max).then_some(argmax),
    })
}

/// Gradient of [`pool2d`] with respect to its input.
pub fn pool2d_backward<T: Scalar>(
    input_dims: &[usize],
    grad_out: &Tensor<T>,
    kind: PoolKind,
    argmax: Option<&[usize]>,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = *input_dims else {
        return Err(Error::shape("pool2d_backward", "rank", 4, input_dims.len()));
    };
    let (oh, ow) = output_size("pool2d_backward", h, w, kernel, stride, padding)?;
    if grad_out.dims() != [n, c, oh, ow] {
        return Err(Error::ShapeMsg {
            op: "pool2d_backward",
            msg: format!("grad_out dims {:?}, expected {:?}", grad_out.dims(), [n, c, oh, ow]),
        });
    }
    let mut dx = Tensor::zeros(input_dims.to_vec());
    let d = dx.data_mut();
    let dy = grad_out.data();
    match kind {
        PoolKind::Max => {
            let argmax = argmax.ok_or(Error::StaleContext("max pool (no argmax)"))?;
            for (&g, &at) in dy.iter().zip(argmax) {
                d[at] += g;
            }
        }
        PoolKind::Avg => {
            let divisor = T::from_usize(kernel * kernel).unwrap();
            for plane in 0..n * c {
                let base = plane * h * w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let g = dy[(plane * oh + oy) * ow + ox] / divisor;
                        let y0 = (oy * stride) as isize - padding as isize;
                        let x0 = (ox * stride) as isize - padding as isize;
                        for ky in 0..kernel as isize {
                            let iy = y0 + ky;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kernel as isize {
                                let ix = x0 + kx;
                                if ix >= 0 && ix < w as isize {
                                    d[base + iy as usize * w + ix as usize] += g;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(dx)
}

/// Per-(batch, channel) mean over all spatial positions, as `N×C×1×1`.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4("global_avg_pool")?;
    let hw = h * w;
    let count = T::from_usize(hw).unwrap();
    let data = input
        .data()
        .chunks(hw)
        .map(|plane| {
            let mut s = T::zero();
            for &v in plane {
                s += v;
            }
            s / count
        })
        .collect();
    Tensor::new([n, c, 1, 1], data)
}

pub fn global_avg_pool_backward<T: Scalar>(input_dims: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = *input_dims else {
        return Err(Error::shape("global_avg_pool_backward", "rank", 4, input_dims.len()));
    };
    if grad_out.len() != n * c {
        return Err(Error::shape(
            "global_avg_pool_backward",
            "grad_out",
            n * c,
            grad_out.len(),
        ));
    }
    let hw = h * w;
    let count = T::from_usize(hw).unwrap();
    let mut data = Vec::with_capacity(n * c * hw);
    for &g in grad_out.data() {
        let v = g / count;
        data.extend(std::iter::repeat_n(v, hw));
    }
    Tensor::new(input_dims.to_vec(), data)
}
