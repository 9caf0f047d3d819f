use rand::Rng;

use crate::layers::{join, BatchNorm2d, BatchNormCtx, Conv2d, Conv2dCtx, Layer, Mode, Param, Relu, ReluCtx};
use crate::tensor::{global_avg_pool, global_avg_pool_backward, sigmoid_scalar, ConvSpec};
use crate::{Error, Result, Scalar, Tensor};

/// Floor on the width of the attention bottleneck between the two dense
/// layers.
pub const MIN_INTER_CHANNELS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplAtSpec {
    pub channels_in: usize,
    pub channels_out: usize,
    pub radix: usize,
    pub cardinality: usize,
    pub reduction: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl SplAtSpec {
    /// 3×3 split-attention conv with radix 2, cardinality 1, reduction 4.
    pub fn new(channels_in: usize, channels_out: usize) -> Self {
        SplAtSpec {
            channels_in,
            channels_out,
            radix: 2,
            cardinality: 1,
            reduction: 4,
            kernel: 3,
            stride: 1,
            padding: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("split attention {self:?}: {m}")));
        if self.radix == 0 || self.cardinality == 0 || self.reduction == 0 {
            return bad("radix, cardinality and reduction must be >= 1");
        }
        if !self.channels_out.is_multiple_of(self.cardinality) {
            return bad("channels_out must be divisible by cardinality");
        }
        if !self.channels_in.is_multiple_of(self.radix * self.cardinality) {
            return bad("channels_in must be divisible by radix * cardinality");
        }
        Ok(())
    }

    /// Width between the two attention dense layers:
    /// `max(channels_out * radix / reduction, 32)` rounded up to a multiple
    /// of the cardinality.
    pub fn inter_channels(&self) -> usize {
        let raw = (self.channels_out * self.radix / self.reduction).max(MIN_INTER_CHANNELS);
        raw.div_ceil(self.cardinality) * self.cardinality
    }

    fn conv_spec(&self) -> ConvSpec {
        ConvSpec::new(
            self.channels_in,
            self.channels_out * self.radix,
            self.kernel,
            self.stride,
            self.padding,
        )
        .with_groups(self.radix * self.cardinality)
    }

    /// Flat index of the attention logit feeding branch `r`, output channel `j`.
    ///
    /// Logits are laid out `(cardinality, radix, channels_out / cardinality)`.
    pub fn logit_index(&self, r: usize, j: usize) -> usize {
        let per_group = self.channels_out / self.cardinality;
        let (k, i) = (j / per_group, j % per_group);
        (k * self.radix + r) * per_group + i
    }
}

/// Grouped convolution split into `radix` branches that are fused by
/// per-channel softmax attention (sigmoid when `radix == 1`).
#[derive(Debug, Clone)]
pub struct SplitAttention<T> {
    pub spec: SplAtSpec,
    pub conv: Conv2d<T>,
    pub bn0: BatchNorm2d<T>,
    relu0: Relu,
    pub fc1: Conv2d<T>,
    pub bn1: BatchNorm2d<T>,
    relu1: Relu,
    pub fc2: Conv2d<T>,
}

pub struct SplitAttentionCtx<T> {
    conv: Conv2dCtx<T>,
    bn0: BatchNormCtx<T>,
    relu0: ReluCtx,
    branches: Tensor<T>,
    fc1: Conv2dCtx<T>,
    bn1: BatchNormCtx<T>,
    relu1: ReluCtx,
    fc2: Conv2dCtx<T>,
    attention: Tensor<T>,
}

impl<T> SplitAttentionCtx<T> {
    /// Attention weights as `N × radix × channels_out`.
    pub fn attention(&self) -> &Tensor<T> {
        &self.attention
    }
}

impl<T: Scalar> SplitAttention<T> {
    pub fn new<R: Rng + ?Sized>(spec: SplAtSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let inter = spec.inter_channels();
        let c = spec.channels_out;
        let k = spec.cardinality;
        Ok(SplitAttention {
            spec,
            conv: Conv2d::new(spec.conv_spec(), false, rng)?,
            bn0: BatchNorm2d::new(c * spec.radix),
            relu0: Relu::new(),
            fc1: Conv2d::new(ConvSpec::new(c, inter, 1, 1, 0).with_groups(k), true, rng)?,
            bn1: BatchNorm2d::new(inter),
            relu1: Relu::new(),
            fc2: Conv2d::new(ConvSpec::new(inter, c * spec.radix, 1, 1, 0).with_groups(k), true, rng)?,
        })
    }

    /// Softmax across the radix axis per output channel, or sigmoid for a
    /// single branch. Returns weights laid out `N × radix × C`.
    fn r_softmax(&self, logits: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, rc, _, _) = logits.dims4("r_softmax")?;
        let (radix, c) = (self.spec.radix, self.spec.channels_out);
        let z = logits.data();
        let mut a = vec![T::zero(); n * radix * c];
        for b in 0..n {
            let row = &z[b * rc..(b + 1) * rc];
            for j in 0..c {
                if radix == 1 {
                    a[b * c + j] = sigmoid_scalar(row[self.spec.logit_index(0, j)]);
                    continue;
                }
                let max = (0..radix)
                    .map(|r| row[self.spec.logit_index(r, j)])
                    .fold(T::neg_infinity(), T::max);
                let mut denom = T::zero();
                for r in 0..radix {
                    denom += (row[self.spec.logit_index(r, j)] - max).exp();
                }
                for r in 0..radix {
                    a[(b * radix + r) * c + j] = (row[self.spec.logit_index(r, j)] - max).exp() / denom;
                }
            }
        }
        Tensor::new([n, radix, c], a)
    }
}

/// Sum of the radix branches of an `N × (R·C) × H × W` tensor.
fn branch_sum<T: Scalar>(u: &Tensor<T>, radix: usize) -> Result<Tensor<T>> {
    let (n, rc, h, w) = u.dims4("branch_sum")?;
    let c = rc / radix;
    let hw = h * w;
    let mut out = vec![T::zero(); n * c * hw];
    for b in 0..n {
        for r in 0..radix {
            let src = &u.data()[(b * rc + r * c) * hw..][..c * hw];
            for (o, &v) in out[b * c * hw..(b + 1) * c * hw].iter_mut().zip(src) {
                *o += v;
            }
        }
    }
    Tensor::new([n, c, h, w], out)
}

impl<T: Scalar> Layer<T> for SplitAttention<T> {
    type Ctx = SplitAttentionCtx<T>;

    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, SplitAttentionCtx<T>)> {
        let (_, cin, _, _) = input.dims4("split_attention")?;
        if cin != self.spec.channels_in {
            return Err(Error::shape(
                "split_attention",
                "input.channel",
                self.spec.channels_in,
                cin,
            ));
        }
        let (radix, c) = (self.spec.radix, self.spec.channels_out);
        let (x, conv) = self.conv.forward(input, mode)?;
        let (x, bn0) = self.bn0.forward(&x, mode)?;
        let (u, relu0) = self.relu0.forward(&x, mode)?;
        let gap = global_avg_pool(&branch_sum(&u, radix)?)?;
        let (z, fc1) = self.fc1.forward(&gap, mode)?;
        let (z, bn1) = self.bn1.forward(&z, mode)?;
        let (z, relu1) = self.relu1.forward(&z, mode)?;
        let (logits, fc2) = self.fc2.forward(&z, mode)?;
        let attention = self.r_softmax(&logits)?;

        let (n, rc, h, w) = u.dims4("split_attention")?;
        let hw = h * w;
        let mut out = vec![T::zero(); n * c * hw];
        for b in 0..n {
            for r in 0..radix {
                for j in 0..c {
                    let a = attention.data()[(b * radix + r) * c + j];
                    let src = &u.data()[(b * rc + r * c + j) * hw..][..hw];
                    for (o, &v) in out[(b * c + j) * hw..][..hw].iter_mut().zip(src) {
                        *o += a * v;
                    }
                }
            }
        }
        let ctx = SplitAttentionCtx {
            conv,
            bn0,
            relu0,
            branches: u,
            fc1,
            bn1,
            relu1,
            fc2,
            attention,
        };
        Ok((Tensor::new([n, c, h, w], out)?, ctx))
    }

    fn backward(&mut self, ctx: SplitAttentionCtx<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (radix, c) = (self.spec.radix, self.spec.channels_out);
        let u = &ctx.branches;
        let (n, rc, h, w) = u.dims4("split_attention_backward")?;
        if grad_out.dims() != [n, c, h, w] {
            return Err(Error::ShapeMsg {
                op: "split_attention_backward",
                msg: format!("grad_out dims {:?}, expected {:?}", grad_out.dims(), [n, c, h, w]),
            });
        }
        let hw = h * w;
        let a = ctx.attention.data();
        let dy = grad_out.data();

        // Direct path into the branches and the attention-weight gradient.
        let mut du = vec![T::zero(); u.len()];
        let mut da = vec![T::zero(); n * radix * c];
        for b in 0..n {
            for r in 0..radix {
                for j in 0..c {
                    let ai = (b * radix + r) * c + j;
                    let g = &dy[(b * c + j) * hw..][..hw];
                    let src = &u.data()[(b * rc + r * c + j) * hw..][..hw];
                    let mut acc = T::zero();
                    for ((d, &gv), &uv) in du[(b * rc + r * c + j) * hw..][..hw].iter_mut().zip(g).zip(src) {
                        *d = a[ai] * gv;
                        acc += gv * uv;
                    }
                    da[ai] = acc;
                }
            }
        }

        // Through r-softmax back to logits in their native layout.
        let mut dlogits = vec![T::zero(); n * rc];
        for b in 0..n {
            for j in 0..c {
                if radix == 1 {
                    let av = a[b * c + j];
                    dlogits[b * rc + self.spec.logit_index(0, j)] = da[b * c + j] * av * (T::one() - av);
                    continue;
                }
                let mut dot = T::zero();
                for r in 0..radix {
                    let i = (b * radix + r) * c + j;
                    dot += a[i] * da[i];
                }
                for r in 0..radix {
                    let i = (b * radix + r) * c + j;
                    dlogits[b * rc + self.spec.logit_index(r, j)] = a[i] * (da[i] - dot);
                }
            }
        }
        let dlogits = Tensor::new([n, rc, 1, 1], dlogits)?;
        let dz = self.fc2.backward(ctx.fc2, &dlogits)?;
        let dz = self.relu1.backward(ctx.relu1, &dz)?;
        let dz = self.bn1.backward(ctx.bn1, &dz)?;
        let dgap = self.fc1.backward(ctx.fc1, &dz)?;
        let dsum = global_avg_pool_backward(&[n, c, h, w], &dgap)?;
        for b in 0..n {
            for r in 0..radix {
                let dst = &mut du[(b * rc + r * c) * hw..][..c * hw];
                for (d, &g) in dst.iter_mut().zip(&dsum.data()[b * c * hw..(b + 1) * c * hw]) {
                    *d += g;
                }
            }
        }
        let du = Tensor::new(u.dims().to_vec(), du)?;
        let dx = self.relu0.backward(ctx.relu0, &du)?;
        let dx = self.bn0.backward(ctx.bn0, &dx)?;
        self.conv.backward(ctx.conv, &dx)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.bn0.visit(&join(prefix, "bn0"), f);
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.bn1.visit(&join(prefix, "bn1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
        self.bn0.visit_mut(&join(prefix, "bn0"), f);
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.bn1.visit_mut(&join(prefix, "bn1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn silence_attention(sa: &mut SplitAttention<f64>, bias: f64) {
        sa.fc2.weight.value.fill(0.0);
        sa.fc2.bias.as_mut().unwrap().value.fill(bias);
    }

    #[test]
    fn equal_logits_average_the_branches() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let mut sa = SplitAttention::<f64>::new(SplAtSpec::new(4, 4), &mut rng).unwrap();
        silence_attention(&mut sa, 0.3);
        let x = Tensor::randn([2, 4, 5, 5], 1.0, &mut rng);
        let (y, ctx) = sa.forward(&x, Mode::Train).unwrap();
        assert!(ctx.attention().data().iter().all(|&a| a == 0.5));
        let u = &ctx.branches;
        for b in 0..2 {
            for j in 0..4 {
                for i in 0..25 {
                    let mean = 0.5 * u.data()[(b * 8 + j) * 25 + i] + 0.5 * u.data()[(b * 8 + 4 + j) * 25 + i];
                    assert!((y.data()[(b * 4 + j) * 25 + i] - mean).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn saturated_single_branch_passes_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        let mut spec = SplAtSpec::new(4, 4);
        spec.radix = 1;
        let mut sa = SplitAttention::<f64>::new(spec, &mut rng).unwrap();
        silence_attention(&mut sa, 50.0);
        let x = Tensor::randn([2, 4, 5, 5], 1.0, &mut rng);
        let (y, ctx) = sa.forward(&x, Mode::Train).unwrap();
        assert!(ctx.attention().data().iter().all(|&a| a == 1.0));
        assert_eq!(&y, &ctx.branches);
    }

    #[test]
    fn attention_sums_to_one_across_radix() {
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        let mut spec = SplAtSpec::new(8, 8);
        spec.radix = 4;
        spec.cardinality = 2;
        let mut sa = SplitAttention::<f32>::new(spec, &mut rng).unwrap();
        let x = Tensor::randn([3, 8, 4, 4], 1.0, &mut rng);
        let (_, ctx) = sa.forward(&x, Mode::Train).unwrap();
        let a = ctx.attention();
        for b in 0..3 {
            for j in 0..8 {
                let s: f32 = (0..4).map(|r| a.get(&[b, r, j])).sum();
                assert!((s - 1.0).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn inter_width_has_floor_and_respects_cardinality() {
        assert_eq!(SplAtSpec::new(64, 64).inter_channels(), 32);
        assert_eq!(SplAtSpec::new(256, 256).inter_channels(), 128);
        let mut s = SplAtSpec::new(12, 12);
        s.cardinality = 3;
        s.radix = 2;
        assert_eq!(s.inter_channels(), 33);
        s.channels_out = 10;
        assert!(s.validate().is_err());
    }
}
