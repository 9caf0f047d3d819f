//! Dataset manifests, PGM images, synthetic phantoms, preprocessing and
//! cross-validation splits.

mod dataset;
mod folds;
mod manifest;
mod pgm;
mod phantom;
mod preprocess;

pub use dataset::ImageSet;
pub use folds::{holdout_split, make_folds, FoldSplit, SplitMode};
pub use manifest::{load_manifest, write_manifest, DatasetManifest, SampleRecord, SourceType, Task, MANIFEST_HEADER};
pub use pgm::{read_pgm, write_pgm, GrayImage};
pub use phantom::{generate_phantoms, render_phantom, render_phantoms, PhantomClass, PhantomConfig};
pub use preprocess::{hflip, image_rng, prepare, preprocess, NormStats, PreprocessConfig, VARIANCE_FLOOR};
