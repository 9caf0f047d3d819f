use super::{prepare, read_pgm, DatasetManifest, PreprocessConfig};
use crate::{Error, Result, Tensor};

/// Decoded, resized images with their labels, held in memory.
#[derive(Debug, Clone)]
pub struct ImageSet {
    /// Each `1×C×S×S`, not yet normalized.
    pub images: Vec<Tensor<f32>>,
    pub labels: Vec<usize>,
    pub config: PreprocessConfig,
}

impl ImageSet {
    pub fn new(images: Vec<Tensor<f32>>, labels: Vec<usize>, config: PreprocessConfig) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Config(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        let images = images.iter().map(|t| prepare(t, config)).collect::<Result<_>>()?;
        Ok(ImageSet { images, labels, config })
    }

    pub fn load(manifest: &DatasetManifest, config: PreprocessConfig) -> Result<Self> {
        let images = (0..manifest.len())
            .map(|i| read_pgm(manifest.image_path(i)).map(|img| img.to_tensor()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(images, manifest.labels(), config)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}
