mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use resnesat::attention::{Bottleneck, BottleneckSpec};
use resnesat::layers::{Layer, Mode};
use resnesat::Tensor;

#[test]
fn every_layer_and_block_matches_finite_differences() {
    let cases = common::gradient_suite(false);
    assert!(cases.iter().filter(|c| c.name.starts_with("conv2d")).count() >= 16);
    assert_eq!(cases.iter().filter(|c| c.name.starts_with("bottleneck")).count(), 8);
    let mut failed = Vec::new();
    for c in &cases {
        let tol = common::tolerance_for(&c.name);
        if c.report.max_rel_error() >= tol {
            failed.push(format!("{}: {:.3e}\n{}", c.name, c.report.max_rel_error(), c.report));
        }
    }
    assert!(failed.is_empty(), "{}", failed.join("\n"));
}

#[test]
fn tiny_network_matches_finite_differences() {
    let case = common::network_case();
    assert!(case.report.checked() > 100);
    assert!(
        case.report.kinks() * 20 < case.report.checked(),
        "{} kinks",
        case.report.kinks()
    );
    assert!(case.report.max_rel_error() < 1e-4, "{}", case.report);
}

#[test]
fn eval_mode_parameter_gradients_add_over_the_batch() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let spec = BottleneckSpec::new(4, 2, 8, 2);
    let mut block = Bottleneck::<f64>::new(spec, &mut rng).unwrap();
    let x = Tensor::randn([2, 4, 6, 6], 1.0, &mut rng);
    let grads = |block: &mut Bottleneck<f64>, input: &Tensor<f64>| {
        block.zero_grad();
        let (y, ctx) = block.forward(input, Mode::Eval).unwrap();
        block.backward(ctx, &Tensor::full(y.dims().to_vec(), 1.0)).unwrap();
        let mut out = Vec::new();
        block.visit("", &mut |_, p| out.extend_from_slice(p.grad.data()));
        out
    };
    let joint = grads(&mut block, &x);
    let a = grads(&mut block, &x.sample(0).unwrap());
    let b = grads(&mut block, &x.sample(1).unwrap());
    for ((j, a), b) in joint.iter().zip(&a).zip(&b) {
        assert!((j - (a + b)).abs() <= 1e-10 * (1.0 + j.abs()), "{j} vs {}", a + b);
    }
}
