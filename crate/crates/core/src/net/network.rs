use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::NetworkConfig;
use crate::attention::{Bottleneck, BottleneckCtx, BottleneckSpec, SASpec};
use crate::exec::Exec;
use crate::layers::{
    join, softmax, BatchNorm2d, BatchNormCtx, Conv2d, Conv2dCtx, GlobalAvgPool, GlobalAvgPoolCtx, Layer, Linear,
    LinearCtx, Mode, Param, Pool2d, Pool2dCtx, Relu, ReluCtx,
};
use crate::tensor::{ConvSpec, PoolKind};
use crate::{Error, Result, Scalar, Tensor};

/// 3×3 convolution followed by batch norm and ReLU.
#[derive(Debug, Clone)]
pub struct ConvBnRelu<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
    relu: Relu,
}

pub struct ConvBnReluCtx<T> {
    conv: Conv2dCtx<T>,
    bn: BatchNormCtx<T>,
    relu: ReluCtx,
}

impl<T: Scalar> ConvBnRelu<T> {
    pub fn new<R: rand::Rng + ?Sized>(spec: ConvSpec, rng: &mut R) -> Result<Self> {
        Ok(ConvBnRelu {
            conv: Conv2d::new(spec, false, rng)?,
            bn: BatchNorm2d::new(spec.out_channels),
            relu: Relu::new(),
        })
    }
}

impl<T: Scalar> Layer<T> for ConvBnRelu<T> {
    type Ctx = ConvBnReluCtx<T>;

    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, ConvBnReluCtx<T>)> {
        let (x, conv) = self.conv.forward(input, mode)?;
        let (x, bn) = self.bn.forward(&x, mode)?;
        let (x, relu) = self.relu.forward(&x, mode)?;
        Ok((x, ConvBnReluCtx { conv, bn, relu }))
    }

    fn backward(&mut self, ctx: ConvBnReluCtx<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let d = self.relu.backward(ctx.relu, grad_out)?;
        let d = self.bn.backward(ctx.bn, &d)?;
        self.conv.backward(ctx.conv, &d)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.bn.visit(&join(prefix, "bn"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
        self.bn.visit_mut(&join(prefix, "bn"), f);
    }
}

/// The full classifier: deep stem, four bottleneck stages, global average
/// pool and a fully connected head.
#[derive(Debug, Clone)]
pub struct Network<T> {
    pub config: NetworkConfig,
    pub stem: Vec<ConvBnRelu<T>>,
    stem_pool: Pool2d,
    pub stages: Vec<Vec<Bottleneck<T>>>,
    gap: GlobalAvgPool,
    pub fc: Linear<T>,
}

pub struct NetworkCtx<T> {
    stem: Vec<ConvBnReluCtx<T>>,
    stem_pool: Pool2dCtx,
    stages: Vec<Vec<BottleneckCtx<T>>>,
    gap: GlobalAvgPoolCtx,
    fc: LinearCtx<T>,
    trace: Vec<(&'static str, Vec<usize>)>,
}

impl<T> NetworkCtx<T> {
    /// Output dims at each stage boundary of the forward pass that produced
    /// this context.
    pub fn trace(&self) -> &[(&'static str, Vec<usize>)] {
        &self.trace
    }

    pub fn bottlenecks(&self) -> impl Iterator<Item = &BottleneckCtx<T>> {
        self.stages.iter().flatten()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub trainable: usize,
    /// Batch-norm running statistics.
    pub buffers: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.trainable + self.buffers
    }

    /// Size of all stored values at 4 bytes each.
    pub fn bytes_f32(&self) -> usize {
        4 * self.total()
    }

    pub fn mebibytes(&self) -> f64 {
        self.bytes_f32() as f64 / (1024.0 * 1024.0)
    }
}

const BOUNDARIES: [&str; 10] = [
    "input",
    "init_conv1.a",
    "init_conv1.b",
    "init_conv2",
    "layer1",
    "layer2",
    "layer3",
    "layer4",
    "global_avg_pool",
    "fc",
];

impl<T: Scalar> Network<T> {
    /// Build with deterministic seeded initialisation. Spatial-attention
    /// weights come from a separate stream so that toggling SA leaves all
    /// shared weights identical.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sa_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5A5A_5A5A_5A5A_5A5A);
        let [s0, s1, s2] = config.stem_widths;
        let stem = vec![
            ConvBnRelu::new(ConvSpec::new(config.in_channels, s0, 3, 2, 1), &mut rng)?,
            ConvBnRelu::new(ConvSpec::new(s0, s1, 3, 1, 1), &mut rng)?,
            ConvBnRelu::new(ConvSpec::new(s1, s2, 3, 1, 1), &mut rng)?,
        ];
        let mut stages = Vec::with_capacity(4);
        let mut in_channels = s2;
        for stage in 0..4 {
            let out = config.stage_widths[stage];
            let width = config.bottleneck_width(stage);
            let mut blocks = Vec::with_capacity(config.repeats[stage]);
            for i in 0..config.repeats[stage] {
                let stride = if stage > 0 && i == 0 { 2 } else { 1 };
                let spec = BottleneckSpec {
                    radix: config.radix,
                    cardinality: config.cardinality,
                    reduction: config.reduction,
                    sa: SASpec {
                        kernel: config.sa_kernel,
                    },
                    sa_enabled: config.sa_enabled,
                    ..BottleneckSpec::new(in_channels, width, out, stride)
                };
                blocks.push(Bottleneck::with_sa_rng(spec, &mut rng, &mut sa_rng)?);
                in_channels = out;
            }
            stages.push(blocks);
        }
        let fc = Linear::new(in_channels, config.num_classes, &mut rng);
        Ok(Network {
            config,
            stem,
            stem_pool: Pool2d::new(PoolKind::Max, 3, 2, 1),
            stages,
            gap: GlobalAvgPool::new(),
            fc,
        })
    }

    /// Execution policy for every convolution in the network.
    pub fn set_exec(&mut self, exec: Exec) {
        for l in &mut self.stem {
            l.conv.exec = exec;
        }
        for b in self.stages.iter_mut().flatten() {
            b.conv1.exec = exec;
            b.splat.conv.exec = exec;
            b.splat.fc1.exec = exec;
            b.splat.fc2.exec = exec;
            b.conv3.exec = exec;
            if let Some(sa) = &mut b.sa {
                sa.conv.exec = exec;
            }
            if let Some(sc) = &mut b.shortcut {
                sc.conv.exec = exec;
            }
        }
    }

    pub fn param_count(&self) -> ParamCount {
        let (trainable, buffers) = Layer::param_count(self);
        ParamCount { trainable, buffers }
    }

    /// Class probabilities in eval mode.
    pub fn predict_proba(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (logits, _) = self.forward(input, Mode::Eval)?;
        softmax(&logits)
    }

    /// Every parameter and buffer by name, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, p| out.push((name.to_string(), p.value.clone())));
        out
    }
}

impl<T: Scalar> Layer<T> for Network<T> {
    type Ctx = NetworkCtx<T>;

    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, NetworkCtx<T>)> {
        let (_, c, h, w) = input.dims4("network")?;
        if c != self.config.in_channels {
            return Err(Error::shape("network", "input.channel", self.config.in_channels, c));
        }
        let mut trace = vec![(BOUNDARIES[0], input.dims().to_vec())];
        if h < 2 || w < 2 {
            return Err(Error::ShapeMsg {
                op: "network",
                msg: format!("input {h}x{w} too small"),
            });
        }
        let mut x = input.clone();
        let mut stem = Vec::with_capacity(3);
        for (i, layer) in self.stem.iter_mut().enumerate() {
            let (y, ctx) = layer.forward(&x, mode)?;
            x = y;
            stem.push(ctx);
            if i < 2 {
                trace.push((BOUNDARIES[1 + i], x.dims().to_vec()));
            }
        }
        let (y, stem_pool) = self.stem_pool.forward(&x, mode)?;
        x = y;
        trace.push((BOUNDARIES[3], x.dims().to_vec()));
        let mut stages = Vec::with_capacity(4);
        for (s, blocks) in self.stages.iter_mut().enumerate() {
            let mut ctxs = Vec::with_capacity(blocks.len());
            for block in blocks.iter_mut() {
                let (y, ctx) = block.forward(&x, mode)?;
                x = y;
                ctxs.push(ctx);
            }
            stages.push(ctxs);
            trace.push((BOUNDARIES[4 + s], x.dims().to_vec()));
        }
        let (pooled, gap) = self.gap.forward(&x, mode)?;
        trace.push((BOUNDARIES[8], pooled.dims().to_vec()));
        let (logits, fc) = self.fc.forward(&pooled, mode)?;
        trace.push((BOUNDARIES[9], logits.dims().to_vec()));
        Ok((
            logits,
            NetworkCtx {
                stem,
                stem_pool,
                stages,
                gap,
                fc,
                trace,
            },
        ))
    }

    fn backward(&mut self, ctx: NetworkCtx<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let d = self.fc.backward(ctx.fc, grad_out)?;
        let mut d = self.gap.backward(ctx.gap, &d)?;
        for (blocks, ctxs) in self.stages.iter_mut().zip(ctx.stages).rev() {
            for (block, c) in blocks.iter_mut().zip(ctxs).rev() {
                d = block.backward(c, &d)?;
            }
        }
        d = self.stem_pool.backward(ctx.stem_pool, &d)?;
        for (layer, c) in self.stem.iter_mut().zip(ctx.stem).rev() {
            d = layer.backward(c, &d)?;
        }
        Ok(d)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        for (i, l) in self.stem.iter().enumerate() {
            l.visit(&join(prefix, &format!("stem.{i}")), f);
        }
        for (s, blocks) in self.stages.iter().enumerate() {
            for (i, b) in blocks.iter().enumerate() {
                b.visit(&join(prefix, &format!("layer{}.{i}", s + 1)), f);
            }
        }
        self.fc.visit(&join(prefix, "fc"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, l) in self.stem.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("stem.{i}")), f);
        }
        for (s, blocks) in self.stages.iter_mut().enumerate() {
            for (i, b) in blocks.iter_mut().enumerate() {
                b.visit_mut(&join(prefix, &format!("layer{}.{i}", s + 1)), f);
            }
        }
        self.fc.visit_mut(&join(prefix, "fc"), f);
    }
}

/// One row of the architecture table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRow {
    pub name: String,
    pub details: String,
    /// `[C, H, W]`, or `[classes]` for the head.
    pub output: Vec<usize>,
    pub params: usize,
}

fn halve(s: usize) -> usize {
    (s - 1) / 2 + 1
}

/// Layer-by-layer shape trace computed from the configuration alone, for
/// a single input sample.
pub fn shape_trace(cfg: &NetworkConfig) -> Result<Vec<TraceRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let mut s = cfg.input_size;
    rows.push(TraceRow {
        name: "Input".into(),
        details: String::new(),
        output: vec![cfg.in_channels, s, s],
        params: 0,
    });
    let bn = |c: usize| 4 * c;
    let [s0, s1, s2] = cfg.stem_widths;
    s = halve(s);
    rows.push(TraceRow {
        name: "InitConv 1".into(),
        details: "Conv3/2, BN, ReLU".into(),
        output: vec![s0, s, s],
        params: cfg.in_channels * s0 * 9 + bn(s0),
    });
    rows.push(TraceRow {
        name: "InitConv 1".into(),
        details: "Conv3, BN, ReLU".into(),
        output: vec![s1, s, s],
        params: s0 * s1 * 9 + bn(s1),
    });
    s = halve(s);
    rows.push(TraceRow {
        name: "InitConv 2".into(),
        details: "Conv3, BN, ReLU, MaxPool".into(),
        output: vec![s2, s, s],
        params: s1 * s2 * 9 + bn(s2),
    });
    let mut cin = s2;
    let mut index = 0;
    for stage in 0..4 {
        let out = cfg.stage_widths[stage];
        let width = cfg.bottleneck_width(stage);
        for i in 0..cfg.repeats[stage] {
            let stride = if stage > 0 && i == 0 { 2 } else { 1 };
            if stride == 2 {
                s = halve(s);
            }
            let spec = BottleneckSpec {
                radix: cfg.radix,
                cardinality: cfg.cardinality,
                reduction: cfg.reduction,
                sa: SASpec { kernel: cfg.sa_kernel },
                sa_enabled: cfg.sa_enabled,
                ..BottleneckSpec::new(cin, width, out, stride)
            };
            let splat = spec.splat_spec();
            let inter = splat.inter_channels();
            let r = cfg.radix;
            let k = cfg.cardinality;
            let mut params = cin * width + bn(width);
            params += (width / (r * k)) * width * r * 9 + bn(width * r);
            params += (width / k) * inter + inter + bn(inter);
            params += (inter / k) * width * r + width * r;
            params += width * out + bn(out);
            let mut details = String::from("Conv1, BN");
            if stride > 1 {
                details.push_str(", AvgPool");
            }
            details.push_str(", SplAtConv, Conv1, BN");
            if cfg.sa_enabled {
                params += spec.sa.param_count();
                details.push_str(", SA");
            }
            details.push_str(", ReLU");
            if spec.has_shortcut() {
                params += cin * out + bn(out);
                details.push_str(if stride > 1 {
                    " | AvgPool, Conv1, BN"
                } else {
                    " | Conv1, BN"
                });
            }
            index += 1;
            rows.push(TraceRow {
                name: format!("Layer {} / Bottleneck {}", stage + 1, index),
                details,
                output: vec![out, s, s],
                params,
            });
            cin = out;
        }
    }
    rows.push(TraceRow {
        name: "Classifier".into(),
        details: "GlobalAvgPool".into(),
        output: vec![cin, 1, 1],
        params: 0,
    });
    rows.push(TraceRow {
        name: "Classifier".into(),
        details: format!("FC({})", cfg.num_classes),
        output: vec![cfg.num_classes],
        params: cin * cfg.num_classes + cfg.num_classes,
    });
    Ok(rows)
}
