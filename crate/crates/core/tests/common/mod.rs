#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use resnesat::attention::{Bottleneck, BottleneckSpec, SASpec, SpatialAttention, SplAtSpec, SplitAttention};
use resnesat::data::{render_phantoms, ImageSet, PhantomConfig, PreprocessConfig, Task};
use resnesat::layers::{
    gradient_check, BatchNorm2d, Conv2d, GlobalAvgPool, GradCheckConfig, GradCheckReport, Layer, Linear, Mode, Pool2d,
    Relu,
};
use resnesat::net::{Network, NetworkConfig};
use resnesat::tensor::{ConvSpec, PoolKind};
use resnesat::Tensor;

pub struct GradCase {
    pub name: String,
    pub report: GradCheckReport,
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn check<L: Layer<f64>>(name: impl Into<String>, mut layer: L, input: Tensor<f64>, cfg: &GradCheckConfig) -> GradCase {
    let name = name.into();
    let report = gradient_check(&mut layer, &input, cfg).unwrap_or_else(|e| panic!("{name}: {e}"));
    GradCase { name, report }
}

/// Sixteen convolution geometries covering kernel, stride, padding, groups
/// and bias.
pub fn conv_specs() -> Vec<(ConvSpec, bool)> {
    let mut out = Vec::new();
    for (i, &(cin, cout, k, s, p, g)) in [
        (1, 1, 1, 1, 0, 1),
        (2, 3, 1, 1, 0, 1),
        (2, 2, 3, 1, 1, 1),
        (3, 2, 3, 2, 1, 1),
        (2, 4, 3, 1, 0, 2),
        (4, 4, 3, 2, 1, 4),
        (2, 3, 5, 1, 2, 1),
        (3, 3, 5, 2, 2, 3),
        (1, 2, 2, 2, 0, 1),
        (4, 2, 1, 2, 0, 2),
        (2, 2, 7, 1, 3, 1),
        (3, 1, 3, 3, 1, 1),
        (4, 6, 3, 1, 1, 2),
        (6, 4, 1, 1, 0, 2),
        (2, 2, 4, 2, 1, 1),
        (1, 3, 3, 1, 2, 1),
    ]
    .iter()
    .enumerate()
    {
        out.push((ConvSpec::new(cin, cout, k, s, p).with_groups(g), i % 2 == 0));
    }
    out
}

/// Finite-difference checks over every layer type, both attention blocks,
/// every bottleneck variant and optionally the full tiny network.
pub fn gradient_suite(include_network: bool) -> Vec<GradCase> {
    let cfg = GradCheckConfig::default();
    let mut r = rng(1);
    let mut cases = Vec::new();

    for (i, (spec, bias)) in conv_specs().into_iter().enumerate() {
        let layer = Conv2d::<f64>::new(spec, bias, &mut r).unwrap();
        let x = Tensor::randn([2, spec.in_channels, 7, 6], 1.0, &mut r);
        cases.push(check(format!("conv2d[{i}]"), layer, x, &cfg));
    }
    for (i, c) in [1, 3].into_iter().enumerate() {
        let mut bn = BatchNorm2d::<f64>::new(c);
        bn.gamma.value = Tensor::randn([c], 1.0, &mut r);
        bn.beta.value = Tensor::randn([c], 1.0, &mut r);
        let x = Tensor::randn([3, c, 4, 5], 1.0, &mut r);
        cases.push(check(format!("batchnorm.train[{i}]"), bn.clone(), x.clone(), &cfg));
        let eval = GradCheckConfig {
            mode: Mode::Eval,
            ..cfg.clone()
        };
        bn.running_mean.value = Tensor::randn([c], 0.5, &mut r);
        bn.running_var.value = Tensor::uniform([c], 0.5, 2.0, &mut r);
        cases.push(check(format!("batchnorm.eval[{i}]"), bn, x, &eval));
    }
    cases.push(check(
        "relu",
        Relu::new(),
        Tensor::randn([2, 3, 4, 4], 1.0, &mut r),
        &cfg,
    ));
    for (i, (kind, k, s, p)) in [
        (PoolKind::Max, 3, 2, 1),
        (PoolKind::Max, 2, 2, 0),
        (PoolKind::Avg, 3, 2, 1),
        (PoolKind::Avg, 2, 2, 0),
    ]
    .into_iter()
    .enumerate()
    {
        let x = Tensor::randn([2, 2, 6, 7], 1.0, &mut r);
        cases.push(check(format!("pool2d[{i}]"), Pool2d::new(kind, k, s, p), x, &cfg));
    }
    cases.push(check(
        "global_avg_pool",
        GlobalAvgPool::new(),
        Tensor::randn([2, 3, 3, 4], 1.0, &mut r),
        &cfg,
    ));
    let linear = Linear::<f64>::new(5, 3, &mut r);
    cases.push(check("linear", linear, Tensor::randn([4, 5], 1.0, &mut r), &cfg));

    for (radix, card, cin, cout) in [(2, 1, 4, 8), (1, 1, 4, 4), (2, 2, 4, 8), (4, 1, 4, 8)] {
        let spec = SplAtSpec {
            radix,
            cardinality: card,
            ..SplAtSpec::new(cin, cout)
        };
        let layer = SplitAttention::<f64>::new(spec, &mut r).unwrap();
        let x = Tensor::randn([3, cin, 5, 5], 1.0, &mut r);
        cases.push(check(format!("splat[R={radix},K={card}]"), layer, x, &cfg));
    }
    for kernel in [3, 7] {
        let layer = SpatialAttention::<f64>::new(SASpec { kernel }, &mut r).unwrap();
        let x = Tensor::randn([2, 3, 6, 6], 1.0, &mut r);
        cases.push(check(format!("spatial_attention[k={kernel}]"), layer, x, &cfg));
    }
    for stride in [1, 2] {
        for expand in [false, true] {
            for sa in [false, true] {
                let (cin, cout) = if expand { (4, 8) } else { (8, 8) };
                let spec = BottleneckSpec {
                    sa_enabled: sa,
                    ..BottleneckSpec::new(cin, 2, cout, stride)
                };
                let layer = Bottleneck::<f64>::new(spec, &mut r).unwrap();
                let x = Tensor::randn([2, cin, 6, 6], 1.0, &mut r);
                cases.push(check(
                    format!("bottleneck[s={stride},shortcut={},sa={sa}]", spec.has_shortcut()),
                    layer,
                    x,
                    &cfg,
                ));
            }
        }
    }
    if include_network {
        cases.push(network_case());
    }
    cases
}

/// Tiny preset at 32×32 with a 1% sample of every tensor.
pub fn network_case() -> GradCase {
    let net = Network::<f64>::new(NetworkConfig::tiny(), 3).unwrap();
    let x = Tensor::randn([4, 1, 32, 32], 1.0, &mut rng(4));
    let cfg = GradCheckConfig {
        sample_fraction: 0.01,
        ..GradCheckConfig::default()
    };
    check("network[tiny]", net, x, &cfg)
}

/// Pass threshold for a case: linear layers are held to a tighter bound.
pub fn tolerance_for(name: &str) -> f64 {
    if name == "linear" {
        1e-6
    } else {
        1e-4
    }
}

/// The default phantom set loaded for `task` at its native size.
pub fn phantom_set(task: Task, cfg: &PhantomConfig) -> ImageSet {
    let rendered = render_phantoms(cfg).unwrap();
    let kept: Vec<_> = rendered.iter().filter(|(r, _)| task.includes(r)).collect();
    let images = kept.iter().map(|(_, g)| g.to_tensor()).collect();
    let labels = kept.iter().map(|(r, _)| task.label(r)).collect();
    ImageSet::new(
        images,
        labels,
        PreprocessConfig {
            size: cfg.size,
            channels: 1,
        },
    )
    .unwrap()
}

pub struct ConvCase {
    pub spec: ConvSpec,
    pub input: Tensor<f32>,
    pub weight: Tensor<f32>,
    pub bias: Option<Tensor<f32>>,
}

/// A random valid convolution: grouped or not, padded, strided, with or
/// without bias.
pub fn random_conv_case(r: &mut ChaCha8Rng) -> ConvCase {
    use rand::Rng;
    loop {
        let groups = [1, 1, 2, 3, 4][r.random_range(0..5)];
        let cin = groups * r.random_range(1..4);
        let cout = groups * r.random_range(1..4);
        let k = r.random_range(1..6);
        let stride = r.random_range(1..4);
        let padding = r.random_range(0..k.min(3));
        let (h, w) = (r.random_range(1..13), r.random_range(1..13));
        let spec = ConvSpec::new(cin, cout, k, stride, padding).with_groups(groups);
        if spec.output_hw(h, w).is_none() {
            continue;
        }
        let n = r.random_range(1..4);
        return ConvCase {
            spec,
            input: Tensor::randn([n, cin, h, w], 1.0, r),
            weight: Tensor::randn(spec.weight_dims().to_vec(), 1.0, r),
            bias: r.random_bool(0.5).then(|| Tensor::randn([cout], 1.0, r)),
        };
    }
}

/// `max|a - b| / max|b|`, or the absolute difference when `b` is all zero.
pub fn rel_diff(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let scale = b.data().iter().fold(0.0f32, |m, v| m.max(v.abs())) as f64;
    let diff = a.max_abs_diff(b) as f64;
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Worst relative difference between the im2col and direct convolutions
/// over `count` random configurations, under both execution policies.
pub fn kernel_equivalence(count: usize, seed: u64) -> f64 {
    use resnesat::exec::Exec;
    use resnesat::tensor::{conv2d_fast_with, conv2d_naive};
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..count {
        let c = random_conv_case(&mut r);
        let naive = conv2d_naive(&c.input, &c.weight, c.bias.as_ref(), &c.spec).unwrap();
        for exec in [Exec::Sequential, Exec::Parallel] {
            let fast = conv2d_fast_with(exec, &c.input, &c.weight, c.bias.as_ref(), &c.spec).unwrap();
            assert_eq!(fast.dims(), naive.dims());
            worst = worst.max(rel_diff(&fast, &naive));
        }
    }
    worst
}

/// Check a split against every fold invariant; `Err` describes the first
/// violation.
pub fn check_split(split: &resnesat::data::FoldSplit, labels: &[usize], patients: &[String]) -> Result<(), String> {
    use resnesat::data::SplitMode;
    use std::collections::HashMap;
    let n = labels.len();
    let mut seen = vec![0usize; n];
    for fold in &split.folds {
        for &i in fold {
            seen[i] += 1;
        }
    }
    if let Some(i) = seen.iter().position(|&c| c != 1) {
        return Err(format!("index {i} appears {} times", seen[i]));
    }
    match split.mode {
        SplitMode::ImageStratified => {
            let mut totals: HashMap<usize, usize> = HashMap::new();
            for &l in labels {
                *totals.entry(l).or_default() += 1;
            }
            for (f, fold) in split.folds.iter().enumerate() {
                for (&class, &total) in &totals {
                    let got = fold.iter().filter(|&&i| labels[i] == class).count() as f64;
                    let ideal = total as f64 / split.k as f64;
                    if (got - ideal).abs() > 1.0 {
                        return Err(format!("fold {f} class {class}: {got} vs ideal {ideal:.2}"));
                    }
                }
            }
        }
        SplitMode::PatientGrouped => {
            let mut home: HashMap<&str, usize> = HashMap::new();
            for (f, fold) in split.folds.iter().enumerate() {
                for &i in fold {
                    if let Some(prev) = home.insert(&patients[i], f) {
                        if prev != f {
                            return Err(format!("patient {} in folds {prev} and {f}", patients[i]));
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

/// Fold integrity over `seeds` seeds, for both split modes, on a dataset
/// shaped like the phantom set with uneven class sizes.
pub fn fold_integrity(seeds: u64) -> Result<usize, String> {
    use resnesat::data::{make_folds, SplitMode};
    let mut checked = 0;
    for seed in 0..seeds {
        let n = 200 + (seed as usize * 7) % 100;
        let labels: Vec<usize> = (0..n).map(|i| usize::from(i % 7 < 3)).collect();
        let patients: Vec<String> = (0..n).map(|i| format!("p{}", (i * 31 + seed as usize) % 40)).collect();
        for mode in [SplitMode::ImageStratified, SplitMode::PatientGrouped] {
            let split = make_folds(&labels, &patients, 10, mode, seed).map_err(|e| e.to_string())?;
            check_split(&split, &labels, &patients).map_err(|e| format!("seed {seed} {mode}: {e}"))?;
            checked += 1;
        }
    }
    Ok(checked)
}

/// Compare the metric suite with a hand-written counter on `n` seeded
/// label/prediction pairs; returns the largest f1 identity gap.
pub fn metric_oracle(n: usize, seed: u64) -> Result<f64, String> {
    use rand::Rng;
    use resnesat::train::{f1_from_counts, ConfusionMatrix, MetricsReport};
    let mut r = rng(seed);
    let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..2)).collect();
    let preds: Vec<usize> = (0..n).map(|_| r.random_range(0..2)).collect();
    let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..n {
        if labels[i] == 1 && preds[i] == 1 {
            tp += 1;
        } else if labels[i] == 0 && preds[i] == 1 {
            fp += 1;
        } else if labels[i] == 1 {
            fn_ += 1;
        } else {
            tn += 1;
        }
    }
    let cm = ConfusionMatrix::from_pairs(&labels, &preds).map_err(|e| e.to_string())?;
    if (cm.tp, cm.fp, cm.fn_, cm.tn) != (tp, fp, fn_, tn) {
        return Err(format!("counts {cm:?} vs {tp} {fp} {fn_} {tn}"));
    }
    let m = MetricsReport::from_confusion(&cm);
    let recall = tp as f64 / (tp + fn_) as f64;
    let precision = tp as f64 / (tp + fp) as f64;
    let expected = [
        recall,
        tn as f64 / (tn + fp) as f64,
        precision,
        2.0 * recall * precision / (recall + precision),
        (tp + tn) as f64 / n as f64,
    ];
    let got = [m.recall, m.specificity, m.precision, m.f1, m.accuracy];
    for (e, g) in expected.iter().zip(got) {
        if g != Some(*e) {
            return Err(format!("metric {g:?} vs {e}"));
        }
    }
    let identity = (m.f1.unwrap() - f1_from_counts(&cm).unwrap()).abs();
    let acc_from_counts = (cm.tp + cm.tn) as f64 / cm.total() as f64;
    if (acc_from_counts - m.accuracy.unwrap()).abs() > 1e-12 || cm.total() != n as u64 {
        return Err("accuracy or total does not match counts".into());
    }
    Ok(identity)
}
