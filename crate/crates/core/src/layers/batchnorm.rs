use super::{join, Layer, Mode, Param, Ticket, TicketBox};
use crate::scalar::c;
use crate::{Error, Result, Scalar, Tensor};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over `N×C×H×W` inputs:
/// `y = gamma * (x - mean) / sqrt(var + eps) + beta`.
///
/// Train mode normalizes with batch statistics (biased variance) and folds
/// them into the running estimates (unbiased variance) with `momentum`.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub momentum: f64,
    pub eps: f64,
    ticket: TicketBox,
}

pub struct BatchNormCtx<T> {
    ticket: Ticket,
    mode: Mode,
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(Tensor::full([channels], T::one())),
            beta: Param::new(Tensor::zeros([channels])),
            running_mean: Param::buffer(Tensor::zeros([channels])),
            running_var: Param::buffer(Tensor::full([channels], T::one())),
            momentum: BN_MOMENTUM,
            eps: BN_EPSILON,
            ticket: TicketBox::default(),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }
}

impl<T: Scalar> Layer<T> for BatchNorm2d<T> {
    type Ctx = BatchNormCtx<T>;

    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, BatchNormCtx<T>)> {
        let (n, ch, h, w) = input.dims4("batch_norm")?;
        if ch != self.channels() {
            return Err(Error::shape("batch_norm", "input.channel", self.channels(), ch));
        }
        let hw = h * w;
        let x = input.data();
        let (mean, var) = match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(Error::BatchTooSmall(n));
                }
                let count = T::from_usize(n * hw).unwrap();
                let mut mean = vec![T::zero(); ch];
                let mut var = vec![T::zero(); ch];
                for (k, (m, v)) in mean.iter_mut().zip(var.iter_mut()).enumerate() {
                    let mut s = T::zero();
                    for b in 0..n {
                        for &xv in &x[(b * ch + k) * hw..][..hw] {
                            s += xv;
                        }
                    }
                    *m = s / count;
                    let mut sq = T::zero();
                    for b in 0..n {
                        for &xv in &x[(b * ch + k) * hw..][..hw] {
                            let d = xv - *m;
                            sq += d * d;
                        }
                    }
                    *v = sq / count;
                }
                let mom: T = c(self.momentum);
                let unbias = count / (count - T::one());
                let rm = self.running_mean.value.data_mut();
                for (r, &m) in rm.iter_mut().zip(&mean) {
                    *r = (T::one() - mom) * *r + mom * m;
                }
                let rv = self.running_var.value.data_mut();
                for (r, &v) in rv.iter_mut().zip(&var) {
                    *r = (T::one() - mom) * *r + mom * v * unbias;
                }
                (mean, var)
            }
            Mode::Eval => (
                self.running_mean.value.data().to_vec(),
                self.running_var.value.data().to_vec(),
            ),
        };
        let eps: T = c(self.eps);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gamma = self.gamma.value.data();
        let beta = self.beta.value.data();
        let mut xhat = Vec::with_capacity(x.len());
        let mut out = Vec::with_capacity(x.len());
        for b in 0..n {
            for k in 0..ch {
                for &xv in &x[(b * ch + k) * hw..][..hw] {
                    let xh = (xv - mean[k]) * inv_std[k];
                    xhat.push(xh);
                    out.push(gamma[k] * xh + beta[k]);
                }
            }
        }
        let ctx = BatchNormCtx {
            ticket: self.ticket.issue(),
            mode,
            xhat: Tensor::new(input.dims().to_vec(), xhat)?,
            inv_std,
        };
        Ok((Tensor::new(input.dims().to_vec(), out)?, ctx))
    }

    fn backward(&mut self, ctx: BatchNormCtx<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        self.ticket.check(ctx.ticket, "batch_norm")?;
        ctx.xhat.expect_same_dims("batch_norm_backward", grad_out)?;
        let (n, ch, h, w) = grad_out.dims4("batch_norm_backward")?;
        let hw = h * w;
        let dy = grad_out.data();
        let xh = ctx.xhat.data();
        let mut dgamma = vec![T::zero(); ch];
        let mut dbeta = vec![T::zero(); ch];
        for b in 0..n {
            for k in 0..ch {
                let base = (b * ch + k) * hw;
                for i in base..base + hw {
                    dbeta[k] += dy[i];
                    dgamma[k] += dy[i] * xh[i];
                }
            }
        }
        let gamma = self.gamma.value.data();
        let count = T::from_usize(n * hw).unwrap();
        let mut dx = vec![T::zero(); dy.len()];
        for b in 0..n {
            for k in 0..ch {
                let base = (b * ch + k) * hw;
                let scale = gamma[k] * ctx.inv_std[k];
                for i in base..base + hw {
                    dx[i] = match ctx.mode {
                        Mode::Eval => scale * dy[i],
                        Mode::Train => scale * (dy[i] - (dbeta[k] + xh[i] * dgamma[k]) / count),
                    };
                }
            }
        }
        self.gamma.accumulate(&Tensor::new([ch], dgamma)?)?;
        self.beta.accumulate(&Tensor::new([ch], dbeta)?)?;
        Tensor::new(grad_out.dims().to_vec(), dx)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
        f(&join(prefix, "running_mean"), &self.running_mean);
        f(&join(prefix, "running_var"), &self.running_var);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}
