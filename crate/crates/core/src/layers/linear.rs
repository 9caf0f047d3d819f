use rand::Rng;

use super::{join, Layer, Mode, Param, Ticket, TicketBox};
use crate::tensor::{gemm_a_bt_acc, gemm_acc};
use crate::{Error, Result, Scalar, Tensor};

/// Fully connected layer on `N×in` inputs: `y = x·Wᵀ + b` with `W` stored
/// as `out×in`. `N×in×1×1` inputs are flattened.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    ticket: TicketBox,
}

pub struct LinearCtx<T> {
    ticket: Ticket,
    input: Tensor<T>,
    input_dims: Vec<usize>,
}

impl<T: Scalar> Linear<T> {
    /// Uniform `±1/sqrt(in)` initialisation for weight and bias.
    pub fn new<R: Rng + ?Sized>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        let weight = Tensor::uniform([out_features, in_features], -bound, bound, rng);
        let bias = Tensor::uniform([out_features], -bound, bound, rng);
        Self::from_params(weight, bias)
    }

    pub fn from_params(weight: Tensor<T>, bias: Tensor<T>) -> Self {
        Linear {
            weight: Param::new(weight),
            bias: Param::new(bias),
            ticket: TicketBox::default(),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.dims()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.dims()[0]
    }

    fn flatten(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let n = input.dims()[0];
        let features = input.len() / n;
        if features != self.in_features() {
            return Err(Error::shape("linear", "input.features", self.in_features(), features));
        }
        input.clone().reshape([n, features])
    }
}

impl<T: Scalar> Layer<T> for Linear<T> {
    type Ctx = LinearCtx<T>;

    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<(Tensor<T>, LinearCtx<T>)> {
        let x = self.flatten(input)?;
        let (n, k) = x.dims2("linear")?;
        let m = self.out_features();
        let mut out = Vec::with_capacity(n * m);
        for _ in 0..n {
            out.extend_from_slice(self.bias.value.data());
        }
        // x (n×k) · Wᵀ (k×m)
        gemm_a_bt_acc(x.data(), self.weight.value.data(), &mut out, n, k, m);
        let ctx = LinearCtx {
            ticket: self.ticket.issue(),
            input: x,
            input_dims: input.dims().to_vec(),
        };
        Ok((Tensor::new([n, m], out)?, ctx))
    }

    fn backward(&mut self, ctx: LinearCtx<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        self.ticket.check(ctx.ticket, "linear")?;
        let (n, m) = grad_out.dims2("linear_backward")?;
        let k = self.in_features();
        if m != self.out_features() || n != ctx.input.dims()[0] {
            return Err(Error::shape("linear_backward", "grad_out", self.out_features(), m));
        }
        let dy = grad_out.data();
        // dx = dy (n×m) · W (m×k)
        let mut dx = vec![T::zero(); n * k];
        gemm_acc(dy, self.weight.value.data(), &mut dx, n, m, k);
        // dW = dyᵀ · x, accumulated over the batch in order
        let mut dw = vec![T::zero(); m * k];
        for b in 0..n {
            let x_row = &ctx.input.data()[b * k..(b + 1) * k];
            for (o, &g) in dy[b * m..(b + 1) * m].iter().enumerate() {
                for (w, &xv) in dw[o * k..(o + 1) * k].iter_mut().zip(x_row) {
                    *w += g * xv;
                }
            }
        }
        let mut db = vec![T::zero(); m];
        for b in 0..n {
            for (acc, &g) in db.iter_mut().zip(&dy[b * m..(b + 1) * m]) {
                *acc += g;
            }
        }
        self.weight.accumulate(&Tensor::new([m, k], dw)?)?;
        self.bias.accumulate(&Tensor::new([m], db)?)?;
        Tensor::new(ctx.input_dims, dx)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fc_2048_to_2_has_4098_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let fc = Linear::<f32>::new(2048, 2, &mut rng);
        assert_eq!(fc.param_count(), (4098, 0));
    }

    #[test]
    fn forward_is_affine_map() {
        let w = Tensor::<f64>::new([2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]).unwrap();
        let b = Tensor::new([2], vec![0.5, -0.5]).unwrap();
        let mut fc = Linear::from_params(w, b);
        let x = Tensor::new([1, 3, 1, 1], vec![1.0, 1.0, 2.0]).unwrap();
        let (y, _) = fc.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.dims(), &[1, 2]);
        assert_eq!(y.data(), &[9.5, 0.5]);
    }
}
