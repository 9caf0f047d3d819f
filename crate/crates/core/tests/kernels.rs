mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use resnesat::exec::Exec;
use resnesat::tensor::{bilinear_resize, conv2d_backward, conv2d_fast_with, conv2d_naive, matmul, ConvSpec};
use resnesat::Tensor;

#[test]
fn im2col_matches_direct_convolution_on_random_configs() {
    let worst = common::kernel_equivalence(128, 17);
    assert!(worst < 1e-5, "worst relative difference {worst:e}");
}

#[test]
fn policies_agree_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..32 {
        let c = common::random_conv_case(&mut rng);
        let a = conv2d_fast_with(Exec::Sequential, &c.input, &c.weight, c.bias.as_ref(), &c.spec).unwrap();
        let b = conv2d_fast_with(Exec::Parallel, &c.input, &c.weight, c.bias.as_ref(), &c.spec).unwrap();
        assert_eq!(a, b);
        let go = Tensor::randn(a.dims().to_vec(), 1.0, &mut rng);
        let ga = conv2d_backward(Exec::Sequential, &c.input, &c.weight, &go, &c.spec).unwrap();
        let gb = conv2d_backward(Exec::Parallel, &c.input, &c.weight, &go, &c.spec).unwrap();
        assert_eq!(ga.input, gb.input);
        assert_eq!(ga.weight, gb.weight);
    }
}

#[test]
fn convolution_is_linear_in_the_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let spec = ConvSpec::new(3, 4, 3, 2, 1);
    let w = Tensor::<f64>::randn(spec.weight_dims().to_vec(), 1.0, &mut rng);
    let x = Tensor::<f64>::randn([2, 3, 7, 7], 1.0, &mut rng);
    let y = Tensor::<f64>::randn([2, 3, 7, 7], 1.0, &mut rng);
    let mut sum = x.clone();
    sum.add_assign(&y).unwrap();
    let lhs = conv2d_naive(&sum, &w, None, &spec).unwrap();
    let mut rhs = conv2d_naive(&x, &w, None, &spec).unwrap();
    rhs.add_assign(&conv2d_naive(&y, &w, None, &spec).unwrap()).unwrap();
    assert!(lhs.max_abs_diff(&rhs) < 1e-12);
}

#[test]
fn pointwise_convolution_is_a_channel_matmul() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let spec = ConvSpec::new(5, 3, 1, 1, 0);
    let w = Tensor::<f64>::randn([3, 5, 1, 1], 1.0, &mut rng);
    let x = Tensor::<f64>::randn([1, 5, 4, 2], 1.0, &mut rng);
    let y = conv2d_fast_with(Exec::Parallel, &x, &w, None, &spec).unwrap();
    let expected = matmul(&w.clone().reshape([3, 5]).unwrap(), &x.clone().reshape([5, 8]).unwrap()).unwrap();
    assert!(y.reshape([3, 8]).unwrap().max_abs_diff(&expected) < 1e-12);
}

#[test]
fn resize_round_trip_of_constant_image() {
    let x = Tensor::<f32>::full([1, 2, 5, 7], 0.25);
    let y = bilinear_resize(&bilinear_resize(&x, 64, 64).unwrap(), 5, 7).unwrap();
    assert!(y.max_abs_diff(&x) < 1e-7);
}
