mod common;

use proptest::prelude::*;
use resnesat::data::{
    generate_phantoms, load_manifest, make_folds, read_pgm, ImageSet, NormStats, PhantomConfig, PreprocessConfig,
    SplitMode, Task,
};

#[test]
fn ten_fold_integrity_over_a_hundred_seeds() {
    assert_eq!(common::fold_integrity(100), Ok(200));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn folds_partition_any_dataset(
        labels in prop::collection::vec(0usize..3, 30..120),
        k in 2usize..8,
        patients_mod in 8usize..40,
        seed in any::<u64>(),
    ) {
        let patients: Vec<String> = (0..labels.len()).map(|i| format!("p{}", i % patients_mod)).collect();
        let counts = (0..3).map(|c| labels.iter().filter(|&&l| l == c).count());
        let stratifiable = counts.filter(|&c| c > 0).all(|c| c >= k);
        match make_folds(&labels, &patients, k, SplitMode::ImageStratified, seed) {
            Ok(split) => prop_assert_eq!(common::check_split(&split, &labels, &patients), Ok(())),
            Err(_) => prop_assert!(!stratifiable),
        }
        let split = make_folds(&labels, &patients, k, SplitMode::PatientGrouped, seed).unwrap();
        prop_assert_eq!(common::check_split(&split, &labels, &patients), Ok(()));
        prop_assert!(split.folds.iter().all(|f| !f.is_empty()));
    }
}

#[test]
fn generated_dataset_counts_and_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = PhantomConfig {
        size: 32,
        ..PhantomConfig::default()
    };
    generate_phantoms(&cfg, a.path()).unwrap();
    generate_phantoms(&cfg, b.path()).unwrap();
    let manifest = a.path().join("manifest.csv");
    assert_eq!(std::fs::read_to_string(&manifest).unwrap().lines().count(), 301);
    assert_eq!(load_manifest(&manifest, Task::Presence).unwrap().len(), 300);
    let source = load_manifest(&manifest, Task::Source).unwrap();
    assert_eq!(source.len(), 200);
    let mut names: Vec<_> = std::fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len(), 301);
    for name in names {
        assert_eq!(
            std::fs::read(a.path().join(&name)).unwrap(),
            std::fs::read(b.path().join(&name)).unwrap(),
            "{name:?}"
        );
    }
    let img = read_pgm(source.image_path(0)).unwrap();
    assert_eq!((img.width, img.height), (32, 32));
}

#[test]
fn training_fold_statistics_do_not_see_the_test_fold() {
    let cfg = PhantomConfig {
        none: 20,
        primary: 20,
        secondary: 20,
        size: 24,
        ..PhantomConfig::default()
    };
    let data: ImageSet = common::phantom_set(Task::Presence, &cfg);
    let patients = vec![String::new(); data.len()];
    let split = make_folds(&data.labels, &patients, 5, SplitMode::ImageStratified, 3).unwrap();
    for fold in 0..5 {
        let train = split.train_indices(fold);
        let stats = NormStats::compute(&data.images, &train).unwrap();
        assert_eq!(stats.provenance(), train.as_slice());
        stats.check_disjoint(split.test_indices(fold)).unwrap();
        assert!(stats.check_disjoint(&train[..1]).is_err());
    }
    assert_eq!(data.config, PreprocessConfig { size: 24, channels: 1 });
}
