use super::{Layer, Mode, Param, Ticket, TicketBox};
use crate::tensor::{global_avg_pool, global_avg_pool_backward, pool2d, pool2d_backward, PoolKind};
use crate::{Result, Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct Pool2d {
    pub kind: PoolKind,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    ticket: TicketBox,
}

pub struct Pool2dCtx {
    ticket: Ticket,
    input_dims: Vec<usize>,
    argmax: Option<Vec<usize>>,
}

impl Pool2d {
    pub fn new(kind: PoolKind, kernel: usize, stride: usize, padding: usize) -> Self {
        Pool2d {
            kind,
            kernel,
            stride,
            padding,
            ticket: TicketBox::default(),
        }
    }
}

impl<T: Scalar> Layer<T> for Pool2d {
    type Ctx = Pool2dCtx;

    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<(Tensor<T>, Pool2dCtx)> {
        let p = pool2d(input, self.kind, self.kernel, self.stride, self.padding)?;
        if let Some(a) = &p.argmax {
            super::branch::record(a);
        }
        Ok((
            p.output,
            Pool2dCtx {
                ticket: self.ticket.issue(),
                input_dims: input.dims().to_vec(),
                argmax: p.argmax,
            },
        ))
    }

    fn backward(&mut self, ctx: Pool2dCtx, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        self.ticket.check(ctx.ticket, "pool2d")?;
        pool2d_backward(
            &ctx.input_dims,
            grad_out,
            self.kind,
            ctx.argmax.as_deref(),
            self.kernel,
            self.stride,
            self.padding,
        )
    }

    fn visit(&self, _prefix: &str, _f: &mut dyn FnMut(&str, &Param<T>)) {}

    fn visit_mut(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut Param<T>)) {}
}

/// Global average pool producing `N×C×1×1`.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    ticket: TicketBox,
}

pub struct GlobalAvgPoolCtx {
    ticket: Ticket,
    input_dims: Vec<usize>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        GlobalAvgPool::default()
    }
}

impl<T: Scalar> Layer<T> for GlobalAvgPool {
    type Ctx = GlobalAvgPoolCtx;

    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<(Tensor<T>, GlobalAvgPoolCtx)> {
        Ok((
            global_avg_pool(input)?,
            GlobalAvgPoolCtx {
                ticket: self.ticket.issue(),
                input_dims: input.dims().to_vec(),
            },
        ))
    }

    fn backward(&mut self, ctx: GlobalAvgPoolCtx, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        self.ticket.check(ctx.ticket, "global_avg_pool")?;
        global_avg_pool_backward(&ctx.input_dims, grad_out)
    }

    fn visit(&self, _prefix: &str, _f: &mut dyn FnMut(&str, &Param<T>)) {}

    fn visit_mut(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut Param<T>)) {}
}
