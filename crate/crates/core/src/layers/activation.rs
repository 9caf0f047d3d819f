use super::{Layer, Mode, Param, Ticket, TicketBox};
use crate::{Result, Scalar, Tensor};

/// `max(0, x)`; the backward pass uses subgradient 0 at exactly 0.
#[derive(Debug, Clone, Default)]
pub struct Relu {
    ticket: TicketBox,
}

pub struct ReluCtx {
    ticket: Ticket,
    active: Vec<bool>,
}

impl Relu {
    pub fn new() -> Self {
        Relu::default()
    }
}

impl<T: Scalar> Layer<T> for Relu {
    type Ctx = ReluCtx;

    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<(Tensor<T>, ReluCtx)> {
        let active: Vec<bool> = input.data().iter().map(|&v| v > T::zero()).collect();
        super::branch::record(&active);
        let out = crate::tensor::relu(input);
        Ok((
            out,
            ReluCtx {
                ticket: self.ticket.issue(),
                active,
            },
        ))
    }

    fn backward(&mut self, ctx: ReluCtx, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        self.ticket.check(ctx.ticket, "relu")?;
        let data = grad_out
            .data()
            .iter()
            .zip(&ctx.active)
            .map(|(&g, &a)| if a { g } else { T::zero() })
            .collect();
        Tensor::new(grad_out.dims().to_vec(), data)
    }

    fn visit(&self, _prefix: &str, _f: &mut dyn FnMut(&str, &Param<T>)) {}

    fn visit_mut(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut Param<T>)) {}
}
