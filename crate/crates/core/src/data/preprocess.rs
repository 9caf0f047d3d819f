use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::bilinear_resize;
use crate::{Error, Result, Tensor};

/// Channel variances below this are clamped before normalizing.
pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreprocessConfig {
    pub size: usize,
    pub channels: usize,
}

/// Resize to `size × size` and replicate grayscale to `channels`.
/// Accepts `C×H×W` or `1×C×H×W`; returns `1×channels×size×size`.
pub fn prepare(image: &Tensor<f32>, cfg: PreprocessConfig) -> Result<Tensor<f32>> {
    let image = match *image.dims() {
        [c, h, w] => image.clone().reshape([1, c, h, w])?,
        [1, _, _, _] => image.clone(),
        _ => {
            return Err(Error::ShapeMsg {
                op: "prepare",
                msg: format!("expected one C×H×W image, got dims {:?}", image.dims()),
            })
        }
    };
    let c = image.dims()[1];
    let resized = bilinear_resize(&image, cfg.size, cfg.size)?;
    if c == cfg.channels {
        Ok(resized)
    } else if c == 1 {
        Tensor::concat_channels(&vec![&resized; cfg.channels])
    } else {
        Err(Error::shape("prepare", "channel", cfg.channels, c))
    }
}

/// Mirror every row of a 4-D tensor.
pub fn hflip(t: &Tensor<f32>) -> Tensor<f32> {
    let w = *t.dims().last().expect("non-empty dims");
    let mut data = t.data().to_vec();
    for row in data.chunks_mut(w) {
        row.reverse();
    }
    Tensor::new(t.dims().to_vec(), data).expect("same length")
}

/// Per-image generator for augmentation draws, independent of scheduling.
pub fn image_rng(epoch_seed: u64, image_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
    rng.set_stream(image_index as u64);
    rng
}

/// Per-channel z-score statistics tagged with the dataset indices they were
/// computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    provenance: Vec<usize>,
}

impl NormStats {
    /// Statistics over `images[i]` for each `i` in `indices`. Images must be
    /// prepared (equal `1×C×H×W` dims).
    pub fn compute(images: &[Tensor<f32>], indices: &[usize]) -> Result<Self> {
        let first = indices
            .first()
            .map(|&i| &images[i])
            .ok_or_else(|| Error::Config("normalization statistics need at least one image".into()))?;
        let (_, c, h, w) = first.dims4("NormStats")?;
        let hw = h * w;
        let mut sum = vec![0.0f64; c];
        for &i in indices {
            images[i].expect_same_dims("NormStats", first)?;
            for (ch, plane) in images[i].data().chunks(hw).enumerate() {
                sum[ch] += plane.iter().map(|&v| v as f64).sum::<f64>();
            }
        }
        let count = (indices.len() * hw) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let mut sq = vec![0.0f64; c];
        for &i in indices {
            for (ch, plane) in images[i].data().chunks(hw).enumerate() {
                sq[ch] += plane.iter().map(|&v| (v as f64 - mean[ch]).powi(2)).sum::<f64>();
            }
        }
        let std = sq
            .iter()
            .enumerate()
            .map(|(ch, s)| {
                let var = s / count;
                if var < VARIANCE_FLOOR {
                    log::warn!("channel {ch} variance {var:e} below floor; normalizing with {VARIANCE_FLOOR:e}");
                    VARIANCE_FLOOR.sqrt()
                } else {
                    var.sqrt()
                }
            })
            .collect();
        let mut provenance = indices.to_vec();
        provenance.sort_unstable();
        Ok(NormStats { mean, std, provenance })
    }

    /// Rebuild saved statistics.
    pub fn from_parts(mean: Vec<f64>, std: Vec<f64>, mut provenance: Vec<usize>) -> Result<Self> {
        if mean.len() != std.len() || mean.is_empty() {
            return Err(Error::Config(format!(
                "normalization needs matching non-empty mean/std, got {} and {}",
                mean.len(),
                std.len()
            )));
        }
        if std.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Config("normalization std must be positive".into()));
        }
        provenance.sort_unstable();
        Ok(NormStats { mean, std, provenance })
    }

    /// Sorted indices of the images the statistics came from.
    pub fn provenance(&self) -> &[usize] {
        &self.provenance
    }

    /// Fails if any of `indices` contributed to these statistics.
    pub fn check_disjoint(&self, indices: &[usize]) -> Result<()> {
        match indices.iter().find(|i| self.provenance.binary_search(i).is_ok()) {
            Some(i) => Err(Error::Config(format!(
                "normalization statistics include evaluation image {i}"
            ))),
            None => Ok(()),
        }
    }

    pub fn normalize(&self, t: &Tensor<f32>) -> Result<Tensor<f32>> {
        let (_, c, h, w) = t.dims4("normalize")?;
        if c != self.mean.len() {
            return Err(Error::shape("normalize", "channel", self.mean.len(), c));
        }
        let hw = h * w;
        let mut data = t.data().to_vec();
        for (plane_idx, plane) in data.chunks_mut(hw).enumerate() {
            let ch = plane_idx % c;
            let (m, s) = (self.mean[ch], self.std[ch]);
            for v in plane {
                *v = ((*v as f64 - m) / s) as f32;
            }
        }
        Tensor::new(t.dims().to_vec(), data)
    }
}

/// Full preprocessing of one image: resize, channel replication, optional
/// 50% horizontal flip in train mode, then normalization.
pub fn preprocess<R: Rng + ?Sized>(
    image: &Tensor<f32>,
    cfg: PreprocessConfig,
    stats: &NormStats,
    train: bool,
    rng: &mut R,
) -> Result<Tensor<f32>> {
    let mut t = prepare(image, cfg)?;
    if train && rng.random_bool(0.5) {
        t = hflip(&t);
    }
    stats.normalize(&t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert_eq, proptest};

    fn cfg(size: usize, channels: usize) -> PreprocessConfig {
        PreprocessConfig { size, channels }
    }

    #[test]
    fn same_size_is_identity_apart_from_normalization() {
        let img = Tensor::from_fn([1, 1, 4, 4], |i| i as f32);
        let stats = NormStats {
            mean: vec![0.0],
            std: vec![1.0],
            provenance: vec![],
        };
        let out = preprocess(&img, cfg(4, 1), &stats, false, &mut image_rng(0, 0)).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn normalized_training_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let images: Vec<Tensor<f32>> = (0..6)
            .map(|_| prepare(&Tensor::uniform([1, 12, 9], 0.0, 1.0, &mut rng), cfg(8, 3)).unwrap())
            .collect();
        let train = [0, 2, 3, 5];
        let stats = NormStats::compute(&images, &train).unwrap();
        let normed: Vec<Tensor<f32>> = images.iter().map(|t| stats.normalize(t).unwrap()).collect();
        let recomputed = NormStats::compute(&normed, &train).unwrap();
        for ch in 0..3 {
            assert!(recomputed.mean[ch].abs() < 1e-6);
            assert!((recomputed.std[ch] - 1.0).abs() < 1e-4);
        }
        assert_eq!(stats.provenance(), &train);
        assert!(stats.check_disjoint(&[1, 4]).is_ok());
        assert!(stats.check_disjoint(&[1, 2]).is_err());
    }

    #[test]
    fn constant_channel_uses_floor() {
        let images = vec![Tensor::full([1, 1, 2, 2], 0.5f32)];
        let stats = NormStats::compute(&images, &[0]).unwrap();
        assert_eq!(stats.std[0], VARIANCE_FLOOR.sqrt());
        assert!(stats.normalize(&images[0]).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn flip_frequency() {
        let mut hits = 0;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            hits += rng.random_bool(0.5) as usize;
        }
        assert!((hits as f64 / 1e4 - 0.5).abs() < 0.02, "{hits}");
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let img = Tensor::<f32>::zeros([2, 4, 4]);
        assert!(prepare(&img, cfg(4, 3)).is_err());
    }

    proptest! {
        #[test]
        fn flip_is_an_involution(h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = Tensor::<f32>::uniform([1, 2, h, w], -1.0, 1.0, &mut rng);
            prop_assert_eq!(hflip(&hflip(&t)), t);
        }
    }
}
