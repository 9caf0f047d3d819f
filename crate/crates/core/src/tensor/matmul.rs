use super::Tensor;
use crate::exec::Exec;
use crate::{Error, Result, Scalar};

/// `c[m×n] += a[m×k] · b[k×n]`, row-major slices.
///
/// Every output element accumulates its inner products left to right over
/// `k`, so the result does not depend on how rows are distributed.
pub(crate) fn gemm_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[k×n] += aᵀ · b` where `a` is `m×k` and `b` is `m×n`.
pub(crate) fn gemm_at_b_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let c_row = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m×k] += a · bᵀ` where `a` is `m×n` and `b` is `k×n`.
pub(crate) fn gemm_a_bt_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let mut acc = T::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            c[i * k + p] += acc;
        }
    }
}

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    matmul_with(Exec::default(), a, b)
}

pub fn matmul_with<T: Scalar>(exec: Exec, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(Error::shape("matmul", "inner", k, k2));
    }
    let mut out = vec![T::zero(); m * n];
    let (ad, bd) = (a.data(), b.data());
    exec.for_each_chunk(&mut out, n, |i, row| {
        gemm_acc(&ad[i * k..(i + 1) * k], bd, row, 1, k, n);
    });
    Tensor::new([m, n], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn transpose(t: &Tensor<f64>) -> Tensor<f64> {
        let (r, c) = t.dims2("t").unwrap();
        Tensor::from_fn([c, r], |o| t.data()[(o % r) * c + o / r])
    }

    #[test]
    fn hand_accumulated_product() {
        let a = Tensor::<f64>::new([2, 3], (1..=6).map(f64::from).collect()).unwrap();
        let b = Tensor::<f64>::new([3, 2], (1..=6).map(f64::from).collect()).unwrap();
        // row 0: 1*1+2*3+3*5 = 22, 1*2+2*4+3*6 = 28; row 1: 4+15+30 = 49, 8+20+36 = 64
        assert_eq!(matmul(&a, &b).unwrap().data(), &[22.0, 28.0, 49.0, 64.0]);
    }

    #[test]
    fn identity_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Tensor::<f64>::randn([4, 5], 1.0, &mut rng);
        let eye = Tensor::from_fn([4, 4], |o| if o / 4 == o % 4 { 1.0 } else { 0.0 });
        assert_eq!(matmul(&eye, &a).unwrap(), a);
        let z = Tensor::zeros([5, 3]);
        assert!(matmul(&a, &z).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn transpose_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Tensor::<f64>::randn([3, 7], 1.0, &mut rng);
        let b = Tensor::<f64>::randn([7, 5], 1.0, &mut rng);
        let ab_t = transpose(&matmul(&a, &b).unwrap());
        let bt_at = matmul(&transpose(&b), &transpose(&a)).unwrap();
        assert!(ab_t.max_abs_diff(&bt_at) < 1e-12);
    }

    #[test]
    fn inner_mismatch_is_an_error() {
        let a = Tensor::<f32>::zeros([2, 3]);
        assert!(matches!(matmul(&a, &a), Err(Error::Shape { .. })));
    }

    #[test]
    fn transposed_kernels_agree_with_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (m, k, n) = (3, 4, 5);
        let a = Tensor::<f64>::randn([m, k], 1.0, &mut rng);
        let b = Tensor::<f64>::randn([k, n], 1.0, &mut rng);
        let plain = matmul(&a, &b).unwrap();
        // aᵀ stored as k×m, so aᵀᵀ·b through gemm_at_b
        let at = transpose(&a);
        let mut c = vec![0.0; m * n];
        gemm_at_b_acc(at.data(), b.data(), &mut c, k, m, n);
        assert!(plain.data().iter().zip(&c).all(|(x, y)| (x - y).abs() < 1e-12));
        let bt = transpose(&b);
        let mut c2 = vec![0.0; m * n];
        gemm_a_bt_acc(a.data(), bt.data(), &mut c2, m, k, n);
        assert!(plain.data().iter().zip(&c2).all(|(x, y)| (x - y).abs() < 1e-12));
    }
}
