use rand::Rng;

use super::{join, Layer, Mode, Param, Ticket, TicketBox};
use crate::exec::Exec;
use crate::tensor::{conv2d_backward, conv2d_fast_with, ConvSpec};
use crate::{Result, Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub spec: ConvSpec,
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub exec: Exec,
    ticket: TicketBox,
}

pub struct Conv2dCtx<T> {
    ticket: Ticket,
    input: Tensor<T>,
}

impl<T: Scalar> Conv2d<T> {
    /// Kaiming-normal weights scaled by fan-out; zero bias.
    pub fn new<R: Rng + ?Sized>(spec: ConvSpec, bias: bool, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let fan_out = spec.out_channels * spec.kernel_h * spec.kernel_w;
        let std = (2.0 / fan_out as f64).sqrt();
        let weight = Tensor::randn(spec.weight_dims(), std, rng);
        Ok(Self::from_params(
            spec,
            weight,
            bias.then(|| Tensor::zeros([spec.out_channels])),
        ))
    }

    pub fn from_params(spec: ConvSpec, weight: Tensor<T>, bias: Option<Tensor<T>>) -> Self {
        Conv2d {
            spec,
            weight: Param::new(weight),
            bias: bias.map(Param::new),
            exec: Exec::default(),
            ticket: TicketBox::default(),
        }
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    type Ctx = Conv2dCtx<T>;

    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<(Tensor<T>, Conv2dCtx<T>)> {
        let out = conv2d_fast_with(
            self.exec,
            input,
            &self.weight.value,
            self.bias.as_ref().map(|b| &b.value),
            &self.spec,
        )?;
        let ctx = Conv2dCtx {
            ticket: self.ticket.issue(),
            input: input.clone(),
        };
        Ok((out, ctx))
    }

    fn backward(&mut self, ctx: Conv2dCtx<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        self.ticket.check(ctx.ticket, "conv2d")?;
        let g = conv2d_backward(self.exec, &ctx.input, &self.weight.value, grad_out, &self.spec)?;
        self.weight.accumulate(&g.weight)?;
        if let Some(b) = &mut self.bias {
            b.accumulate(&g.bias)?;
        }
        Ok(g.input)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::conv2d_naive;
    use crate::Error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forward_matches_naive_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let spec = ConvSpec::new(3, 4, 3, 1, 1);
        let mut conv = Conv2d::<f64>::new(spec, true, &mut rng).unwrap();
        conv.bias.as_mut().unwrap().value = Tensor::randn([4], 1.0, &mut rng);
        let x = Tensor::randn([2, 3, 5, 5], 1.0, &mut rng);
        let (y, _) = conv.forward(&x, Mode::Train).unwrap();
        let expect = conv2d_naive(&x, &conv.weight.value, Some(&conv.bias.as_ref().unwrap().value), &spec).unwrap();
        assert!(y.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let mut conv = Conv2d::<f64>::new(ConvSpec::new(2, 3, 3, 2, 1), true, &mut rng).unwrap();
        let x = Tensor::randn([2, 2, 6, 6], 1.0, &mut rng);
        let (y, ctx) = conv.forward(&x, Mode::Train).unwrap();
        let dx = conv.backward(ctx, &Tensor::zeros_like(&y)).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        assert!(conv.weight.grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_context_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut conv = Conv2d::<f64>::new(ConvSpec::new(1, 1, 1, 1, 0), false, &mut rng).unwrap();
        let x = Tensor::randn([1, 1, 2, 2], 1.0, &mut rng);
        let (_, old) = conv.forward(&x, Mode::Train).unwrap();
        let (y, _) = conv.forward(&x, Mode::Train).unwrap();
        assert!(matches!(conv.backward(old, &y), Err(Error::StaleContext(_))));
    }

    #[test]
    fn gradients_accumulate_across_backward_calls() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let mut conv = Conv2d::<f64>::new(ConvSpec::new(2, 2, 3, 1, 1), true, &mut rng).unwrap();
        let x = Tensor::randn([1, 2, 4, 4], 1.0, &mut rng);
        let dy = Tensor::randn([1, 2, 4, 4], 1.0, &mut rng);
        let (_, ctx) = conv.forward(&x, Mode::Train).unwrap();
        conv.backward(ctx, &dy).unwrap();
        let once = conv.weight.grad.clone();
        let (_, ctx) = conv.forward(&x, Mode::Train).unwrap();
        conv.backward(ctx, &dy).unwrap();
        assert!(conv.weight.grad.max_abs_diff(&once.scale(2.0)) < 1e-12);
    }
}
