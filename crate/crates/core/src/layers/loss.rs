use crate::{Error, Result, Scalar, Tensor};

/// Mean softmax cross-entropy over the batch and its gradient with respect
/// to the logits, `(softmax - onehot) / batch`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let (n, classes) = logits.dims2("softmax_cross_entropy")?;
    if labels.len() != n {
        return Err(Error::shape("softmax_cross_entropy", "labels", n, labels.len()));
    }
    let batch = T::from_usize(n).unwrap();
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(n * classes);
    for (row, &label) in logits.data().chunks(classes).zip(labels) {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
        let mut denom = T::zero();
        for &z in row {
            denom += (z - max).exp();
        }
        let log_denom = denom.ln();
        loss += log_denom - (row[label] - max);
        for (j, &z) in row.iter().enumerate() {
            let p = (z - max).exp() / denom;
            let target = if j == label { T::one() } else { T::zero() };
            grad.push((p - target) / batch);
        }
    }
    Ok((loss / batch, Tensor::new([n, classes], grad)?))
}

/// Row-wise softmax probabilities.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, classes) = logits.dims2("softmax")?;
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks(classes) {
        let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&z| (z - max).exp()).collect();
        let mut denom = T::zero();
        for &e in &exps {
            denom += e;
        }
        out.extend(exps.into_iter().map(|e| e / denom));
    }
    Tensor::new(logits.dims().to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_cost_ln_c() {
        for c in [2usize, 3, 7] {
            let z = Tensor::<f64>::full([4, c], 0.3);
            let (loss, _) = softmax_cross_entropy(&z, &[0, 1, 0, c - 1]).unwrap();
            assert!((loss - (c as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_correct_prediction() {
        let z = Tensor::<f64>::new([1, 2], vec![20.0, -20.0]).unwrap();
        let (loss, g) = softmax_cross_entropy(&z, &[0]).unwrap();
        assert!(loss < 1e-15);
        assert!(g.data().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn label_out_of_range() {
        let z = Tensor::<f64>::zeros([1, 2]);
        assert!(matches!(
            softmax_cross_entropy(&z, &[2]),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn gradient_matches_finite_differences_and_rows_sum_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let (n, c) = (5, 4);
        let z = Tensor::<f64>::randn([n, c], 2.0, &mut rng);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let (_, g) = softmax_cross_entropy(&z, &labels).unwrap();
        for row in g.data().chunks(c) {
            assert!(row.iter().sum::<f64>().abs() < 1e-9);
        }
        let h = 1e-5;
        for i in 0..z.len() {
            let mut zp = z.clone();
            zp.data_mut()[i] += h;
            let mut zm = z.clone();
            zm.data_mut()[i] -= h;
            let num = (softmax_cross_entropy(&zp, &labels).unwrap().0 - softmax_cross_entropy(&zm, &labels).unwrap().0)
                / (2.0 * h);
            let a = g.data()[i];
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-12);
            assert!(rel < 1e-6, "elem {i}: analytic {a} numeric {num} rel {rel}");
        }
    }
}
