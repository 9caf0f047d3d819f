use std::collections::BTreeMap;

use super::{
    evaluate, train_network, ConfusionMatrix, EpochLog, MetricsReport, Precision, Sgd, Summary, TrainingConfig,
};
use crate::data::{FoldSplit, ImageSet, NormStats};
use crate::exec::Exec;
use crate::net::{Checkpoint, Network, NetworkConfig};
use crate::{Error, Result, Scalar};

/// Seed for fold `fold` derived from the run seed.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    let mut z = seed.wrapping_add((fold as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn join_f64(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

/// Normalization statistics as checkpoint metadata entries.
pub fn stats_to_metadata(stats: &NormStats, meta: &mut BTreeMap<String, String>) {
    meta.insert("norm.mean".into(), join_f64(&stats.mean));
    meta.insert("norm.std".into(), join_f64(&stats.std));
    let prov: Vec<String> = stats.provenance().iter().map(usize::to_string).collect();
    meta.insert("norm.provenance".into(), prov.join(","));
}

pub fn stats_from_metadata(meta: &BTreeMap<String, String>) -> Result<NormStats> {
    let get = |k: &str| {
        meta.get(k)
            .ok_or_else(|| Error::Format(format!("checkpoint metadata lacks '{k}'")))
    };
    let floats = |k: &str| -> Result<Vec<f64>> {
        get(k)?
            .split(',')
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::Format(format!("bad number '{t}' in '{k}'")))
            })
            .collect()
    };
    let prov = get("norm.provenance")?;
    let provenance = if prov.is_empty() {
        Vec::new()
    } else {
        prov.split(',')
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::Format(format!("bad index '{t}' in norm.provenance")))
            })
            .collect::<Result<_>>()?
    };
    NormStats::from_parts(floats("norm.mean")?, floats("norm.std")?, provenance)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CvOptions {
    /// Folds trained concurrently; 1 runs them one after another.
    pub parallel_folds: usize,
    pub exec: Exec,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions {
            parallel_folds: 1,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: usize,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricsReport,
    pub log: Vec<EpochLog>,
    /// Final-epoch weights, normalization statistics and optimizer state.
    pub checkpoint: Checkpoint,
}

#[derive(Debug, Clone)]
pub struct CvReport {
    pub folds: Vec<FoldOutcome>,
    pub summary: Summary,
}

fn fit<T: Scalar>(
    net_cfg: &NetworkConfig,
    data: &ImageSet,
    train: &[usize],
    test: &[usize],
    fold: usize,
    cfg: &TrainingConfig,
    exec: Exec,
) -> Result<FoldOutcome> {
    let stats = NormStats::compute(&data.images, train)?;
    stats.check_disjoint(test)?;
    let mut net = Network::<T>::new(net_cfg.clone(), cfg.seed)?;
    net.set_exec(exec);
    let mut sgd = Sgd::new(cfg.momentum, cfg.weight_decay);
    let log = train_network(&mut net, &mut sgd, data, train, &stats, cfg, |e| {
        log::debug!("fold {fold} epoch {} loss {:.4}", e.epoch, e.mean_loss)
    })?;
    let eval = evaluate(&mut net, data, test, &stats, cfg.batch_size)?;
    let mut checkpoint = Checkpoint::from_network(&net);
    checkpoint.epoch = cfg.epochs as u32;
    checkpoint.velocities = sgd.velocities().map(|(n, v)| (n.to_string(), v.cast())).collect();
    checkpoint.metadata.insert("fold".into(), fold.to_string());
    checkpoint.metadata.insert("seed".into(), cfg.seed.to_string());
    stats_to_metadata(&stats, &mut checkpoint.metadata);
    let metrics = MetricsReport::from_confusion(&eval.confusion);
    log::info!("fold {fold}: {metrics}");
    Ok(FoldOutcome {
        fold,
        confusion: eval.confusion,
        metrics,
        log,
        checkpoint,
    })
}

/// Train a fresh network seeded with `cfg.seed` on `train`, then evaluate
/// it on `test`. Normalization statistics come from `train` only and are
/// stored in the checkpoint metadata; `fold` only labels the outcome.
pub fn fit_and_evaluate(
    net_cfg: &NetworkConfig,
    data: &ImageSet,
    train: &[usize],
    test: &[usize],
    fold: usize,
    cfg: &TrainingConfig,
    exec: Exec,
) -> Result<FoldOutcome> {
    cfg.validate()?;
    net_cfg.validate()?;
    match cfg.precision {
        Precision::F32 => fit::<f32>(net_cfg, data, train, test, fold, cfg, exec),
        Precision::F64 => fit::<f64>(net_cfg, data, train, test, fold, cfg, exec),
    }
}

fn run_fold_dyn(
    net_cfg: &NetworkConfig,
    data: &ImageSet,
    split: &FoldSplit,
    fold: usize,
    cfg: &TrainingConfig,
    exec: Exec,
) -> Result<FoldOutcome> {
    let fold_cfg = TrainingConfig {
        seed: fold_seed(cfg.seed, fold),
        ..cfg.clone()
    };
    let train = split.train_indices(fold);
    fit_and_evaluate(net_cfg, data, &train, split.test_indices(fold), fold, &fold_cfg, exec).map_err(|e| {
        Error::InFold {
            fold,
            source: Box::new(e),
        }
    })
}

/// Train one model per fold, evaluate it on the held-out fold and summarize.
///
/// Each fold derives its own seed from `cfg.seed`, so results do not depend
/// on how many folds run at once.
pub fn cross_validate(
    net_cfg: &NetworkConfig,
    data: &ImageSet,
    split: &FoldSplit,
    cfg: &TrainingConfig,
    opts: CvOptions,
) -> Result<CvReport> {
    cfg.validate()?;
    net_cfg.validate()?;
    split.validate(data.len())?;
    let folds = run_folds(net_cfg, data, split, cfg, opts)?;
    let confusions: Vec<ConfusionMatrix> = folds.iter().map(|f| f.confusion).collect();
    Ok(CvReport {
        summary: Summary::new(&confusions),
        folds,
    })
}

#[cfg(feature = "parallel")]
fn run_folds(
    net_cfg: &NetworkConfig,
    data: &ImageSet,
    split: &FoldSplit,
    cfg: &TrainingConfig,
    opts: CvOptions,
) -> Result<Vec<FoldOutcome>> {
    use rayon::prelude::*;
    if opts.parallel_folds <= 1 {
        return (0..split.k)
            .map(|f| run_fold_dyn(net_cfg, data, split, f, cfg, opts.exec))
            .collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.parallel_folds)
        .build()
        .map_err(|e| Error::Config(format!("fold thread pool: {e}")))?;
    pool.install(|| {
        (0..split.k)
            .into_par_iter()
            .map(|f| run_fold_dyn(net_cfg, data, split, f, cfg, opts.exec))
            .collect()
    })
}

#[cfg(not(feature = "parallel"))]
fn run_folds(
    net_cfg: &NetworkConfig,
    data: &ImageSet,
    split: &FoldSplit,
    cfg: &TrainingConfig,
    opts: CvOptions,
) -> Result<Vec<FoldOutcome>> {
    if opts.parallel_folds > 1 {
        log::warn!("built without the parallel feature; running folds sequentially");
    }
    (0..split.k)
        .map(|f| run_fold_dyn(net_cfg, data, split, f, cfg, opts.exec))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_seeds_differ() {
        let seeds: std::collections::HashSet<u64> = (0..10).map(|f| fold_seed(42, f)).collect();
        assert_eq!(seeds.len(), 10);
    }

    #[test]
    fn stats_metadata_round_trip() {
        let stats = NormStats::from_parts(vec![0.1, 1.0 / 3.0], vec![0.25, 2.0], vec![5, 1, 3]).unwrap();
        let mut meta = BTreeMap::new();
        stats_to_metadata(&stats, &mut meta);
        assert_eq!(stats_from_metadata(&meta).unwrap(), stats);
    }
}
