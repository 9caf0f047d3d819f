//! Trainable layers with explicit forward and backward passes.
//!
//! Each [`Layer::forward`] returns the output together with a typed context
//! holding whatever backward needs. The context carries a ticket that must
//! match the layer's most recent forward; anything else is rejected as
//! stale. Parameter gradients accumulate additively until cleared.

mod activation;
mod batchnorm;
pub(crate) mod branch;
mod conv;
pub mod gradcheck;
mod linear;
mod loss;
mod pool;

use std::sync::atomic::{AtomicU64, Ordering};

use crate::{Error, Result, Scalar, Tensor};

pub use activation::{Relu, ReluCtx};
pub use batchnorm::{BatchNorm2d, BatchNormCtx, BN_EPSILON, BN_MOMENTUM};
pub use conv::{Conv2d, Conv2dCtx};
pub use gradcheck::{gradient_check, GradCheckConfig, GradCheckReport};
pub use linear::{Linear, LinearCtx};
pub use loss::{softmax, softmax_cross_entropy};
pub use pool::{GlobalAvgPool, GlobalAvgPoolCtx, Pool2d, Pool2dCtx};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A named tensor owned by a layer, with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub trainable: bool,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros_like(&value);
        Param {
            value,
            grad,
            trainable: true,
        }
    }

    /// A buffer such as a batch-norm running statistic.
    pub fn buffer(value: Tensor<T>) -> Self {
        Param {
            trainable: false,
            ..Param::new(value)
        }
    }

    pub fn accumulate(&mut self, g: &Tensor<T>) -> Result<()> {
        self.grad.add_assign(g)
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Identifies one forward invocation across all layers of a process.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ticket(u64);

static NEXT_TICKET: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Default, Clone)]
pub(crate) struct TicketBox(Option<Ticket>);

impl TicketBox {
    pub(crate) fn issue(&mut self) -> Ticket {
        let t = Ticket(NEXT_TICKET.fetch_add(1, Ordering::Relaxed));
        self.0 = Some(t);
        t
    }

    pub(crate) fn check(&self, t: Ticket, layer: &'static str) -> Result<()> {
        if self.0 == Some(t) {
            Ok(())
        } else {
            Err(Error::StaleContext(layer))
        }
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub trait Layer<T: Scalar> {
    type Ctx;

    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Self::Ctx)>;

    /// Returns the input gradient and adds parameter gradients into each
    /// [`Param::grad`].
    fn backward(&mut self, ctx: Self::Ctx, grad_out: &Tensor<T>) -> Result<Tensor<T>>;

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>));

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>));

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, p| p.zero_grad());
    }

    /// Number of scalars in trainable parameters and buffers.
    fn param_count(&self) -> (usize, usize) {
        let (mut trainable, mut buffers) = (0, 0);
        self.visit("", &mut |_, p| {
            if p.trainable {
                trainable += p.value.len();
            } else {
                buffers += p.value.len();
            }
        });
        (trainable, buffers)
    }
}
