use rand::Rng;

use crate::layers::{join, Conv2d, Conv2dCtx, Layer, Mode, Param};
use crate::tensor::{sigmoid_scalar, ConvSpec};
use crate::{Error, Result, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SASpec {
    pub kernel: usize,
}

impl Default for SASpec {
    fn default() -> Self {
        SASpec { kernel: 7 }
    }
}

impl SASpec {
    pub fn validate(&self) -> Result<()> {
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "spatial attention kernel {} must be odd",
                self.kernel
            )));
        }
        Ok(())
    }

    pub fn padding(&self) -> usize {
        (self.kernel - 1) / 2
    }

    /// `2 * k * k` weights plus one bias.
    pub fn param_count(&self) -> usize {
        2 * self.kernel * self.kernel + 1
    }
}

/// Spatial attention: the channel-wise mean and max maps are stacked,
/// convolved to one channel and squashed by a sigmoid into a map
/// `M ∈ (0,1)^{H×W}` that scales every channel of the input.
#[derive(Debug, Clone)]
pub struct SpatialAttention<T> {
    pub spec: SASpec,
    pub conv: Conv2d<T>,
    map_override: Option<T>,
}

pub struct SpatialAttentionCtx<T> {
    input: Tensor<T>,
    map: Tensor<T>,
    argmax: Vec<usize>,
    conv: Option<Conv2dCtx<T>>,
}

impl<T> SpatialAttentionCtx<T> {
    /// The attention map, `N×1×H×W`.
    pub fn map(&self) -> &Tensor<T> {
        &self.map
    }
}

impl<T: Scalar> SpatialAttention<T> {
    pub fn new<R: Rng + ?Sized>(spec: SASpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let conv = Conv2d::new(ConvSpec::new(2, 1, spec.kernel, 1, spec.padding()), true, rng)?;
        Ok(SpatialAttention {
            spec,
            conv,
            map_override: None,
        })
    }

    /// Replace the learned map with a constant. The map is then treated
    /// as fixed: no gradient reaches the convolution. Used for ablations.
    pub fn set_map_override(&mut self, value: Option<T>) {
        self.map_override = value;
    }
}

impl<T: Scalar> Layer<T> for SpatialAttention<T> {
    type Ctx = SpatialAttentionCtx<T>;

    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, SpatialAttentionCtx<T>)> {
        let (n, c, h, w) = input.dims4("spatial_attention")?;
        let hw = h * w;
        let x = input.data();

        let (map, argmax, conv) = if let Some(v) = self.map_override {
            (Tensor::full([n, 1, h, w], v), Vec::new(), None)
        } else {
            let cf = T::from_usize(c).unwrap();
            let mut stats = vec![T::zero(); n * 2 * hw];
            let mut argmax = vec![0usize; n * hw];
            for b in 0..n {
                for p in 0..hw {
                    let mut sum = T::zero();
                    let mut best = x[b * c * hw + p];
                    let mut best_c = 0;
                    for ch in 0..c {
                        let v = x[(b * c + ch) * hw + p];
                        sum += v;
                        if v > best {
                            best = v;
                            best_c = ch;
                        }
                    }
                    stats[b * 2 * hw + p] = sum / cf;
                    stats[(b * 2 + 1) * hw + p] = best;
                    argmax[b * hw + p] = best_c;
                }
            }
            crate::layers::branch::record(&argmax);
            let stats = Tensor::new([n, 2, h, w], stats)?;
            let (z, conv) = self.conv.forward(&stats, mode)?;
            (z.map(sigmoid_scalar), argmax, Some(conv))
        };

        let m = map.data();
        let mut out = Vec::with_capacity(x.len());
        for b in 0..n {
            for ch in 0..c {
                let src = &x[(b * c + ch) * hw..][..hw];
                out.extend(src.iter().zip(&m[b * hw..(b + 1) * hw]).map(|(&v, &mv)| v * mv));
            }
        }
        let ctx = SpatialAttentionCtx {
            input: input.clone(),
            map,
            argmax,
            conv,
        };
        Ok((Tensor::new(input.dims().to_vec(), out)?, ctx))
    }

    fn backward(&mut self, ctx: SpatialAttentionCtx<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        ctx.input.expect_same_dims("spatial_attention_backward", grad_out)?;
        let (n, c, h, w) = grad_out.dims4("spatial_attention_backward")?;
        let hw = h * w;
        let (x, m, dy) = (ctx.input.data(), ctx.map.data(), grad_out.data());
        let mut dx = vec![T::zero(); x.len()];
        let mut dmap = vec![T::zero(); n * hw];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * hw;
                for p in 0..hw {
                    dx[base + p] = dy[base + p] * m[b * hw + p];
                    dmap[b * hw + p] += dy[base + p] * x[base + p];
                }
            }
        }
        if let Some(conv_ctx) = ctx.conv {
            let dz: Vec<T> = dmap.iter().zip(m).map(|(&g, &mv)| g * mv * (T::one() - mv)).collect();
            let dstats = self.conv.backward(conv_ctx, &Tensor::new([n, 1, h, w], dz)?)?;
            let ds = dstats.data();
            let cf = T::from_usize(c).unwrap();
            for b in 0..n {
                for p in 0..hw {
                    let dmean = ds[b * 2 * hw + p] / cf;
                    for ch in 0..c {
                        dx[(b * c + ch) * hw + p] += dmean;
                    }
                    dx[(b * c + ctx.argmax[b * hw + p]) * hw + p] += ds[(b * 2 + 1) * hw + p];
                }
            }
        }
        Tensor::new(grad_out.dims().to_vec(), dx)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.conv.visit(&join(prefix, "conv"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_conv_halves_the_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        let mut sa = SpatialAttention::<f64>::new(SASpec::default(), &mut rng).unwrap();
        sa.conv.weight.value.fill(0.0);
        let x = Tensor::randn([2, 3, 6, 6], 1.0, &mut rng);
        let (y, ctx) = sa.forward(&x, Mode::Eval).unwrap();
        assert!(ctx.map().data().iter().all(|&m| m == 0.5));
        assert_eq!(y, x.scale(0.5));
    }

    #[test]
    fn constant_input_gives_spatially_constant_output_in_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(82);
        let mut sa = SpatialAttention::<f64>::new(SASpec { kernel: 3 }, &mut rng).unwrap();
        let x = Tensor::full([1, 4, 7, 7], 0.8);
        let (y, ctx) = sa.forward(&x, Mode::Eval).unwrap();
        // zero padding breaks symmetry at the border only
        let centre = ctx.map().get(&[0, 0, 3, 3]);
        for i in 1..6 {
            for j in 1..6 {
                assert!((ctx.map().get(&[0, 0, i, j]) - centre).abs() < 1e-15);
                assert!((y.get(&[0, 2, i, j]) - 0.8 * centre).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn one_output_per_sa_module_has_99_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        let sa = SpatialAttention::<f32>::new(SASpec::default(), &mut rng).unwrap();
        assert_eq!(sa.param_count(), (99, 0));
        assert_eq!(SASpec::default().param_count(), 99);
        assert!(SASpec { kernel: 4 }.validate().is_err());
    }

    #[test]
    fn frozen_map_backward_is_map_weighted() {
        let mut rng = ChaCha8Rng::seed_from_u64(84);
        let mut sa = SpatialAttention::<f64>::new(SASpec::default(), &mut rng).unwrap();
        sa.set_map_override(Some(0.25));
        let x = Tensor::randn([1, 2, 4, 4], 1.0, &mut rng);
        let dy = Tensor::randn([1, 2, 4, 4], 1.0, &mut rng);
        let (_, ctx) = sa.forward(&x, Mode::Train).unwrap();
        let dx = sa.backward(ctx, &dy).unwrap();
        assert_eq!(dx, dy.scale(0.25));
        assert!(sa.conv.weight.grad.data().iter().all(|&g| g == 0.0));
    }
}
