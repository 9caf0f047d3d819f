use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{cosine_lr, ConfusionMatrix, Sgd, TrainingConfig};
use crate::data::{image_rng, preprocess, ImageSet, NormStats};
use crate::layers::{softmax, softmax_cross_entropy, Layer, Mode};
use crate::net::Network;
use crate::{Error, Result, Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

/// Index of the largest logit; ties go to the lower (negative) class.
pub fn predict_label<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Consecutive chunks of `batch` items; a trailing chunk of one is merged
/// into the previous one because batch norm cannot train on it.
fn batches(order: &[usize], batch: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(batch).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * batch;
        *out.last_mut().unwrap() = &order[start..];
    }
    out
}

fn assemble<T: Scalar>(
    data: &ImageSet,
    indices: &[usize],
    stats: &NormStats,
    flip_seed: Option<u64>,
) -> Result<Tensor<T>> {
    let samples = indices
        .iter()
        .map(|&i| {
            let mut rng = image_rng(flip_seed.unwrap_or(0), i);
            preprocess(&data.images[i], data.config, stats, flip_seed.is_some(), &mut rng).map(|t| t.cast::<T>())
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack(&samples.iter().collect::<Vec<_>>())
}

/// Run `cfg.epochs` epochs of shuffled mini-batch SGD over `train`.
///
/// The learning rate follows the cosine schedule, updated once per epoch.
/// `on_epoch` sees each log entry as it is produced.
pub fn train_network<T: Scalar>(
    net: &mut Network<T>,
    sgd: &mut Sgd<T>,
    data: &ImageSet,
    train: &[usize],
    stats: &NormStats,
    cfg: &TrainingConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    if train.len() < 2 {
        return Err(Error::BatchTooSmall(train.len()));
    }
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut order = train.to_vec();
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr)?;
        let seed = epoch_seed(cfg.seed, epoch);
        order.copy_from_slice(train);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, idx) in batches(&order, cfg.batch_size).into_iter().enumerate() {
            let x = assemble::<T>(data, idx, stats, Some(seed))?;
            let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
            let (logits, ctx) = net.forward(&x, Mode::Train)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &labels)?;
            let loss = loss.to_f64_lossy();
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch: b });
            }
            net.backward(ctx, &grad)?;
            sgd.step(net, lr);
            loss_sum += loss * idx.len() as f64;
            let classes = logits.dims()[1];
            correct += logits
                .data()
                .chunks(classes)
                .zip(&labels)
                .filter(|(row, &y)| predict_label(row) == y)
                .count();
        }
        let entry = EpochLog {
            epoch,
            lr,
            mean_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
        };
        log::info!(
            "epoch {epoch}: lr {lr:.3e} loss {:.4} train acc {:.4}",
            entry.mean_loss,
            entry.train_accuracy
        );
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(log)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub predictions: Vec<usize>,
    /// Softmax probability of the positive class per sample.
    pub positive_prob: Vec<f64>,
}

/// Eval-mode predictions over `indices` without augmentation.
pub fn evaluate<T: Scalar>(
    net: &mut Network<T>,
    data: &ImageSet,
    indices: &[usize],
    stats: &NormStats,
    batch_size: usize,
) -> Result<Evaluation> {
    let mut predictions = Vec::with_capacity(indices.len());
    let mut positive_prob = Vec::with_capacity(indices.len());
    for idx in indices.chunks(batch_size.max(1)) {
        let x = assemble::<T>(data, idx, stats, None)?;
        let (logits, _) = net.forward(&x, Mode::Eval)?;
        let probs = softmax(&logits)?;
        let classes = logits.dims()[1];
        for (row, p) in logits.data().chunks(classes).zip(probs.data().chunks(classes)) {
            predictions.push(predict_label(row));
            positive_prob.push(p[1.min(classes - 1)].to_f64_lossy());
        }
    }
    let labels: Vec<usize> = indices.iter().map(|&i| data.labels[i]).collect();
    Ok(Evaluation {
        confusion: ConfusionMatrix::from_pairs(&labels, &predictions)?,
        predictions,
        positive_prob,
    })
}
