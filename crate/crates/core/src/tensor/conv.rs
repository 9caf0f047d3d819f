//! 2-D cross-correlation (no kernel flip) in two forms: a direct nested-loop
//! reference and an im2col lowering onto the matmul kernel.

use std::borrow::Cow;

use super::{gemm_a_bt_acc, gemm_acc, gemm_at_b_acc, Tensor};
use crate::exec::Exec;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    /// Square kernel, ungrouped.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvSpec {
            out_channels,
            in_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding,
            groups: 1,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("conv spec {self:?}: {msg}")));
        if self.groups == 0
            || !self.in_channels.is_multiple_of(self.groups)
            || !self.out_channels.is_multiple_of(self.groups)
        {
            return bad("channels must be divisible by groups".into());
        }
        if self.stride == 0 || self.kernel_h == 0 || self.kernel_w == 0 {
            return bad("stride and kernel must be >= 1".into());
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return bad("channel counts must be >= 1".into());
        }
        Ok(())
    }

    pub fn weight_dims(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel_h,
            self.kernel_w,
        ]
    }

    /// Output spatial size, `None` when the kernel overhangs the padded input.
    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if ph < self.kernel_h || pw < self.kernel_w {
            return None;
        }
        Some((
            (ph - self.kernel_h) / self.stride + 1,
            (pw - self.kernel_w) / self.stride + 1,
        ))
    }

    fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1 && self.stride == 1 && self.padding == 0
    }
}

struct Geometry {
    n: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    cg: usize,
    ocg: usize,
}

fn check<T: Scalar>(
    op: &'static str,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Geometry> {
    spec.validate()?;
    let (n, c, h, w) = input.dims4(op)?;
    if c != spec.in_channels {
        return Err(Error::shape(op, "input.channel", spec.in_channels, c));
    }
    let expect = spec.weight_dims();
    if weight.rank() != 4 {
        return Err(Error::shape(op, "weight.rank", 4, weight.rank()));
    }
    for (axis, (&e, &f)) in expect.iter().zip(weight.dims()).enumerate() {
        if e != f {
            return Err(Error::shape(op, format!("weight.{axis}"), e, f));
        }
    }
    if let Some(b) = bias {
        if b.len() != spec.out_channels {
            return Err(Error::shape(op, "bias.0", spec.out_channels, b.len()));
        }
    }
    let (oh, ow) = spec.output_hw(h, w).ok_or_else(|| Error::ShapeMsg {
        op,
        msg: format!(
            "kernel {}x{} larger than padded input {h}x{w}",
            spec.kernel_h, spec.kernel_w
        ),
    })?;
    Ok(Geometry {
        n,
        h,
        w,
        oh,
        ow,
        cg: spec.in_channels / spec.groups,
        ocg: spec.out_channels / spec.groups,
    })
}

/// Direct nested-loop convolution. Reference implementation.
pub fn conv2d_naive<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let g = check("conv2d_naive", input, weight, bias, spec)?;
    let (kh, kw, s, p) = (
        spec.kernel_h,
        spec.kernel_w,
        spec.stride as isize,
        spec.padding as isize,
    );
    let mut out = Tensor::zeros([g.n, spec.out_channels, g.oh, g.ow]);
    let x = input.data();
    let wt = weight.data();
    let od = out.data_mut();
    let mut o = 0;
    for b in 0..g.n {
        for oc in 0..spec.out_channels {
            let group = oc / g.ocg;
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut acc = T::zero();
                    for ci in 0..g.cg {
                        let c = group * g.cg + ci;
                        for ky in 0..kh {
                            let iy = oy as isize * s - p + ky as isize;
                            if iy < 0 || iy >= g.h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = ox as isize * s - p + kx as isize;
                                if ix < 0 || ix >= g.w as isize {
                                    continue;
                                }
                                let xv = x[((b * spec.in_channels + c) * g.h + iy as usize) * g.w + ix as usize];
                                let wv = wt[((oc * g.cg + ci) * kh + ky) * kw + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    if let Some(bias) = bias {
                        acc += bias.data()[oc];
                    }
                    od[o] = acc;
                    o += 1;
                }
            }
        }
    }
    Ok(out)
}

/// Unfold one group of one image into a `(cg·kh·kw) × (oh·ow)` patch matrix.
fn im2col<T: Scalar>(img: &[T], spec: &ConvSpec, g: &Geometry, group: usize, col: &mut [T]) {
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    let (s, p) = (spec.stride, spec.padding);
    let plane = g.oh * g.ow;
    for ci in 0..g.cg {
        let chan = &img[(group * g.cg + ci) * g.h * g.w..][..g.h * g.w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &mut col[((ci * kh + ky) * kw + kx) * plane..][..plane];
                for oy in 0..g.oh {
                    let dst = &mut row[oy * g.ow..(oy + 1) * g.ow];
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &chan[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * s + kx) as isize - p as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add a patch matrix back onto one group of an image gradient.
fn col2im<T: Scalar>(col: &[T], spec: &ConvSpec, g: &Geometry, group: usize, img: &mut [T]) {
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    let (s, p) = (spec.stride, spec.padding);
    let plane = g.oh * g.ow;
    for ci in 0..g.cg {
        let chan = &mut img[(group * g.cg + ci) * g.h * g.w..][..g.h * g.w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &col[((ci * kh + ky) * kw + kx) * plane..][..plane];
                for oy in 0..g.oh {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut chan[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, &v) in row[oy * g.ow..(oy + 1) * g.ow].iter().enumerate() {
                        let ix = (ox * s + kx) as isize - p as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Patch matrix for `group` of `img`; borrows the input directly for
/// pointwise convolutions.
fn patches<'a, T: Scalar>(img: &'a [T], spec: &ConvSpec, g: &Geometry, group: usize) -> Cow<'a, [T]> {
    if spec.is_pointwise() {
        let plane = g.h * g.w;
        Cow::Borrowed(&img[group * g.cg * plane..(group + 1) * g.cg * plane])
    } else {
        let mut col = vec![T::zero(); g.cg * spec.kernel_h * spec.kernel_w * g.oh * g.ow];
        im2col(img, spec, g, group, &mut col);
        Cow::Owned(col)
    }
}

pub fn conv2d_fast<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    conv2d_fast_with(Exec::default(), input, weight, bias, spec)
}

/// im2col + matmul convolution, parallel over images.
pub fn conv2d_fast_with<T: Scalar>(
    exec: Exec,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let g = check("conv2d_fast", input, weight, bias, spec)?;
    let in_stride = spec.in_channels * g.h * g.w;
    let plane = g.oh * g.ow;
    let out_stride = spec.out_channels * plane;
    let ksize = g.cg * spec.kernel_h * spec.kernel_w;
    let mut out = vec![T::zero(); g.n * out_stride];
    let (x, wt) = (input.data(), weight.data());
    exec.for_each_chunk(&mut out, out_stride, |b, out_img| {
        let img = &x[b * in_stride..(b + 1) * in_stride];
        for group in 0..spec.groups {
            let col = patches(img, spec, &g, group);
            let w_g = &wt[group * g.ocg * ksize..(group + 1) * g.ocg * ksize];
            let o_g = &mut out_img[group * g.ocg * plane..(group + 1) * g.ocg * plane];
            gemm_acc(w_g, &col, o_g, g.ocg, ksize, plane);
        }
        if let Some(bias) = bias {
            for (oc, chunk) in out_img.chunks_mut(plane).enumerate() {
                let bv = bias.data()[oc];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
    });
    Tensor::new([g.n, spec.out_channels, g.oh, g.ow], out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Gradients of a convolution with respect to its input, weight and bias.
///
/// Per-image weight contributions are reduced in batch order, so the
/// result is independent of the execution policy.
pub fn conv2d_backward<T: Scalar>(
    exec: Exec,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<ConvGrads<T>> {
    let g = check("conv2d_backward", input, weight, None, spec)?;
    let expect = [g.n, spec.out_channels, g.oh, g.ow];
    if grad_out.dims() != expect {
        return Err(Error::ShapeMsg {
            op: "conv2d_backward",
            msg: format!("grad_out dims {:?}, expected {expect:?}", grad_out.dims()),
        });
    }
    let in_stride = spec.in_channels * g.h * g.w;
    let plane = g.oh * g.ow;
    let out_stride = spec.out_channels * plane;
    let ksize = g.cg * spec.kernel_h * spec.kernel_w;
    let (x, wt, dy) = (input.data(), weight.data(), grad_out.data());

    let mut dx = vec![T::zero(); input.len()];
    exec.for_each_chunk(&mut dx, in_stride, |b, dx_img| {
        let dy_img = &dy[b * out_stride..(b + 1) * out_stride];
        for group in 0..spec.groups {
            let w_g = &wt[group * g.ocg * ksize..(group + 1) * g.ocg * ksize];
            let dy_g = &dy_img[group * g.ocg * plane..(group + 1) * g.ocg * plane];
            if spec.is_pointwise() {
                let dx_g = &mut dx_img[group * g.cg * plane..(group + 1) * g.cg * plane];
                gemm_at_b_acc(w_g, dy_g, dx_g, g.ocg, ksize, plane);
            } else {
                let mut dcol = vec![T::zero(); ksize * plane];
                gemm_at_b_acc(w_g, dy_g, &mut dcol, g.ocg, ksize, plane);
                col2im(&dcol, spec, &g, group, dx_img);
            }
        }
    });

    let partials: Vec<Vec<T>> = exec.map_indexed(g.n, |b| {
        let img = &x[b * in_stride..(b + 1) * in_stride];
        let dy_img = &dy[b * out_stride..(b + 1) * out_stride];
        let mut dw = vec![T::zero(); weight.len()];
        for group in 0..spec.groups {
            let col = patches(img, spec, &g, group);
            let dy_g = &dy_img[group * g.ocg * plane..(group + 1) * g.ocg * plane];
            let dw_g = &mut dw[group * g.ocg * ksize..(group + 1) * g.ocg * ksize];
            gemm_a_bt_acc(dy_g, &col, dw_g, g.ocg, plane, ksize);
        }
        dw
    });
    let mut dw = vec![T::zero(); weight.len()];
    for part in &partials {
        for (a, &v) in dw.iter_mut().zip(part) {
            *a += v;
        }
    }

    let mut db = vec![T::zero(); spec.out_channels];
    for b in 0..g.n {
        for (oc, acc) in db.iter_mut().enumerate() {
            for &v in &dy[b * out_stride + oc * plane..][..plane] {
                *acc += v;
            }
        }
    }

    Ok(ConvGrads {
        input: Tensor::new(input.dims().to_vec(), dx)?,
        weight: Tensor::new(weight.dims().to_vec(), dw)?,
        bias: Tensor::new([spec.out_channels], db)?,
    })
}
