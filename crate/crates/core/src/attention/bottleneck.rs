use rand::{Rng, SeedableRng};

use super::{SASpec, SpatialAttention, SpatialAttentionCtx, SplAtSpec, SplitAttention, SplitAttentionCtx};
use crate::layers::{
    join, BatchNorm2d, BatchNormCtx, Conv2d, Conv2dCtx, Layer, Mode, Param, Pool2d, Pool2dCtx, Relu, ReluCtx,
};
use crate::tensor::{add, ConvSpec, PoolKind};
use crate::{Error, Result, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BottleneckSpec {
    pub in_channels: usize,
    pub width: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub radix: usize,
    pub cardinality: usize,
    pub reduction: usize,
    pub sa: SASpec,
    pub sa_enabled: bool,
}

impl BottleneckSpec {
    pub fn new(in_channels: usize, width: usize, out_channels: usize, stride: usize) -> Self {
        BottleneckSpec {
            in_channels,
            width,
            out_channels,
            stride,
            radix: 2,
            cardinality: 1,
            reduction: 4,
            sa: SASpec::default(),
            sa_enabled: true,
        }
    }

    /// Projection shortcut whenever the identity would not line up.
    pub fn has_shortcut(&self) -> bool {
        self.stride != 1 || self.in_channels != self.out_channels
    }

    pub fn splat_spec(&self) -> SplAtSpec {
        SplAtSpec {
            radix: self.radix,
            cardinality: self.cardinality,
            reduction: self.reduction,
            ..SplAtSpec::new(self.width, self.width)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.in_channels == 0 || self.width == 0 || self.out_channels == 0 {
            return Err(Error::Config(format!(
                "bottleneck {self:?}: sizes and stride must be >= 1"
            )));
        }
        self.splat_spec().validate()?;
        self.sa.validate()
    }
}

#[derive(Debug, Clone)]
pub struct Shortcut<T> {
    pub pool: Option<Pool2d>,
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
}

/// Residual block:
///
/// ```text
/// main:     1×1 conv → BN → ReLU → [3×3/2 avg pool] → split-attention
///           → 1×1 conv → BN → spatial attention
/// shortcut: identity, or [2×2/2 avg pool] → 1×1 conv → BN
/// output:   ReLU(main + shortcut)
/// ```
#[derive(Debug, Clone)]
pub struct Bottleneck<T> {
    pub spec: BottleneckSpec,
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm2d<T>,
    relu1: Relu,
    avd: Option<Pool2d>,
    pub splat: SplitAttention<T>,
    pub conv3: Conv2d<T>,
    pub bn3: BatchNorm2d<T>,
    pub sa: Option<SpatialAttention<T>>,
    pub shortcut: Option<Shortcut<T>>,
    relu_out: Relu,
}

struct ShortcutCtx<T> {
    pool: Option<Pool2dCtx>,
    conv: Conv2dCtx<T>,
    bn: BatchNormCtx<T>,
}

pub struct BottleneckCtx<T> {
    conv1: Conv2dCtx<T>,
    bn1: BatchNormCtx<T>,
    relu1: ReluCtx,
    avd: Option<Pool2dCtx>,
    splat: SplitAttentionCtx<T>,
    conv3: Conv2dCtx<T>,
    bn3: BatchNormCtx<T>,
    sa: Option<SpatialAttentionCtx<T>>,
    shortcut: Option<ShortcutCtx<T>>,
    relu_out: ReluCtx,
}

impl<T> BottleneckCtx<T> {
    pub fn splat(&self) -> &SplitAttentionCtx<T> {
        &self.splat
    }

    pub fn spatial(&self) -> Option<&SpatialAttentionCtx<T>> {
        self.sa.as_ref()
    }
}

impl<T: Scalar> Bottleneck<T> {
    pub fn new<R: Rng + ?Sized>(spec: BottleneckSpec, rng: &mut R) -> Result<Self> {
        let mut sa_rng = rand_chacha::ChaCha8Rng::seed_from_u64(rng.next_u64());
        Self::with_sa_rng(spec, rng, &mut sa_rng)
    }

    /// Spatial-attention weights are drawn from `sa_rng`, so toggling SA
    /// leaves every other initial weight unchanged.
    pub fn with_sa_rng<R: Rng + ?Sized, S: Rng + ?Sized>(
        spec: BottleneckSpec,
        rng: &mut R,
        sa_rng: &mut S,
    ) -> Result<Self> {
        spec.validate()?;
        let downsample = spec.stride > 1;
        let conv1 = Conv2d::new(ConvSpec::new(spec.in_channels, spec.width, 1, 1, 0), false, rng)?;
        let splat = SplitAttention::new(spec.splat_spec(), rng)?;
        let conv3 = Conv2d::new(ConvSpec::new(spec.width, spec.out_channels, 1, 1, 0), false, rng)?;
        let shortcut = if spec.has_shortcut() {
            Some(Shortcut {
                pool: downsample.then(|| Pool2d::new(PoolKind::Avg, spec.stride, spec.stride, 0)),
                conv: Conv2d::new(ConvSpec::new(spec.in_channels, spec.out_channels, 1, 1, 0), false, rng)?,
                bn: BatchNorm2d::new(spec.out_channels),
            })
        } else {
            None
        };
        let sa = if spec.sa_enabled {
            Some(SpatialAttention::new(spec.sa, sa_rng)?)
        } else {
            None
        };
        Ok(Bottleneck {
            spec,
            conv1,
            bn1: BatchNorm2d::new(spec.width),
            relu1: Relu::new(),
            avd: downsample.then(|| Pool2d::new(PoolKind::Avg, 3, spec.stride, 1)),
            splat,
            conv3,
            bn3: BatchNorm2d::new(spec.out_channels),
            sa,
            shortcut,
            relu_out: Relu::new(),
        })
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        if self.spec.stride > 1 {
            let s = self.spec.stride;
            ((h + 2 - 3) / s + 1, (w + 2 - 3) / s + 1)
        } else {
            (h, w)
        }
    }
}

impl<T: Scalar> Layer<T> for Bottleneck<T> {
    type Ctx = BottleneckCtx<T>;

    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, BottleneckCtx<T>)> {
        let (_, c, _, _) = input.dims4("bottleneck")?;
        if c != self.spec.in_channels {
            return Err(Error::shape("bottleneck", "input.channel", self.spec.in_channels, c));
        }
        let (x, conv1) = self.conv1.forward(input, mode)?;
        let (x, bn1) = self.bn1.forward(&x, mode)?;
        let (mut x, relu1) = self.relu1.forward(&x, mode)?;
        let avd = match &mut self.avd {
            Some(pool) => {
                let (y, ctx) = pool.forward(&x, mode)?;
                x = y;
                Some(ctx)
            }
            None => None,
        };
        let (x, splat) = self.splat.forward(&x, mode)?;
        let (x, conv3) = self.conv3.forward(&x, mode)?;
        let (mut main, bn3) = self.bn3.forward(&x, mode)?;
        let sa = match &mut self.sa {
            Some(sa) => {
                let (y, ctx) = sa.forward(&main, mode)?;
                main = y;
                Some(ctx)
            }
            None => None,
        };
        let (residual, shortcut) = match &mut self.shortcut {
            Some(sc) => {
                let (mut r, pool) = (input.clone(), None);
                let pool = match &mut sc.pool {
                    Some(p) => {
                        let (y, ctx) = p.forward(&r, mode)?;
                        r = y;
                        Some(ctx)
                    }
                    None => pool,
                };
                let (r, conv) = sc.conv.forward(&r, mode)?;
                let (r, bn) = sc.bn.forward(&r, mode)?;
                (r, Some(ShortcutCtx { pool, conv, bn }))
            }
            None => (input.clone(), None),
        };
        let sum = add(&main, &residual)?;
        let (out, relu_out) = self.relu_out.forward(&sum, mode)?;
        let ctx = BottleneckCtx {
            conv1,
            bn1,
            relu1,
            avd,
            splat,
            conv3,
            bn3,
            sa,
            shortcut,
            relu_out,
        };
        Ok((out, ctx))
    }

    fn backward(&mut self, ctx: BottleneckCtx<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let d_sum = self.relu_out.backward(ctx.relu_out, grad_out)?;

        let mut d_main = d_sum.clone();
        if let (Some(sa), Some(sa_ctx)) = (&mut self.sa, ctx.sa) {
            d_main = sa.backward(sa_ctx, &d_main)?;
        }
        let d = self.bn3.backward(ctx.bn3, &d_main)?;
        let d = self.conv3.backward(ctx.conv3, &d)?;
        let mut d = self.splat.backward(ctx.splat, &d)?;
        if let (Some(pool), Some(pool_ctx)) = (&mut self.avd, ctx.avd) {
            d = pool.backward(pool_ctx, &d)?;
        }
        let d = self.relu1.backward(ctx.relu1, &d)?;
        let d = self.bn1.backward(ctx.bn1, &d)?;
        let mut d_input = self.conv1.backward(ctx.conv1, &d)?;

        let d_res = match (&mut self.shortcut, ctx.shortcut) {
            (Some(sc), Some(sc_ctx)) => {
                let d = sc.bn.backward(sc_ctx.bn, &d_sum)?;
                let d = sc.conv.backward(sc_ctx.conv, &d)?;
                match (&mut sc.pool, sc_ctx.pool) {
                    (Some(p), Some(pc)) => p.backward(pc, &d)?,
                    _ => d,
                }
            }
            (None, None) => d_sum,
            _ => return Err(Error::StaleContext("bottleneck shortcut")),
        };
        d_input.add_assign(&d_res)?;
        Ok(d_input)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.bn1.visit(&join(prefix, "bn1"), f);
        self.splat.visit(&join(prefix, "splat"), f);
        self.conv3.visit(&join(prefix, "conv3"), f);
        self.bn3.visit(&join(prefix, "bn3"), f);
        if let Some(sa) = &self.sa {
            sa.visit(&join(prefix, "sa"), f);
        }
        if let Some(sc) = &self.shortcut {
            sc.conv.visit(&join(prefix, "shortcut.conv"), f);
            sc.bn.visit(&join(prefix, "shortcut.bn"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.bn1.visit_mut(&join(prefix, "bn1"), f);
        self.splat.visit_mut(&join(prefix, "splat"), f);
        self.conv3.visit_mut(&join(prefix, "conv3"), f);
        self.bn3.visit_mut(&join(prefix, "bn3"), f);
        if let Some(sa) = &mut self.sa {
            sa.visit_mut(&join(prefix, "sa"), f);
        }
        if let Some(sc) = &mut self.shortcut {
            sc.conv.visit_mut(&join(prefix, "shortcut.conv"), f);
            sc.bn.visit_mut(&join(prefix, "shortcut.bn"), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shortcut_rule() {
        assert!(!BottleneckSpec::new(16, 4, 16, 1).has_shortcut());
        assert!(BottleneckSpec::new(8, 4, 16, 1).has_shortcut());
        assert!(BottleneckSpec::new(16, 8, 16, 2).has_shortcut());
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        let mut b = Bottleneck::<f64>::new(BottleneckSpec::new(8, 4, 16, 2), &mut rng).unwrap();
        let x = Tensor::zeros([2, 8, 8, 8]);
        let (y, _) = b.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.dims(), &[2, 16, 4, 4]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sa_ablation_identity() {
        let spec = BottleneckSpec::new(8, 4, 16, 2);
        let mut with_sa = Bottleneck::<f64>::new(spec, &mut ChaCha8Rng::seed_from_u64(92)).unwrap();
        let mut without = Bottleneck::<f64>::new(
            BottleneckSpec {
                sa_enabled: false,
                ..spec
            },
            &mut ChaCha8Rng::seed_from_u64(92),
        )
        .unwrap();
        with_sa.sa.as_mut().unwrap().set_map_override(Some(1.0));
        let x = Tensor::randn([2, 8, 8, 8], 1.0, &mut ChaCha8Rng::seed_from_u64(93));
        for mode in [Mode::Train, Mode::Eval] {
            let (a, _) = with_sa.forward(&x, mode).unwrap();
            let (b, _) = without.forward(&x, mode).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(94);
        let mut b = Bottleneck::<f64>::new(BottleneckSpec::new(8, 4, 8, 1), &mut rng).unwrap();
        let x = Tensor::randn([2, 8, 6, 6], 1.0, &mut rng);
        let (y, ctx) = b.forward(&x, Mode::Train).unwrap();
        let dx = b.backward(ctx, &Tensor::zeros_like(&y)).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        let mut all_zero = true;
        b.visit("", &mut |_, p| all_zero &= p.grad.data().iter().all(|&g| g == 0.0));
        assert!(all_zero);
    }
}
