use super::Tensor;
use crate::{Error, Result, Scalar};

/// Source sample positions for one axis under half-pixel centers:
/// `src = (dst + 0.5) * in/out - 0.5`, clamped to `[0, in - 1]`.
fn axis_taps(len_in: usize, len_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = len_in as f64 / len_out as f64;
    (0..len_out)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (len_in - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(len_in - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Bilinear resize of every `H×W` plane to `out_h × out_w`.
pub fn bilinear_resize<T: Scalar>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4("bilinear_resize")?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::Config(format!(
            "resize target {out_h}x{out_w} must be at least 1x1"
        )));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(input.clone());
    }
    let rows = axis_taps(h, out_h);
    let cols = axis_taps(w, out_w);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    for plane in x.chunks(h * w) {
        for &(y0, y1, fy) in &rows {
            let fy = T::from_f64_lossy(fy);
            for &(x0, x1, fx) in &cols {
                let fx = T::from_f64_lossy(fx);
                let top = plane[y0 * w + x0] * (T::one() - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (T::one() - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (T::one() - fy) + bot * fy);
            }
        }
    }
    Tensor::new([n, c, out_h, out_w], out)
}
