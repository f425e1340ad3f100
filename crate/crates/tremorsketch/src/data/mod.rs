//! Dataset ingestion, preprocessing glue, and the desk-scale synthetic
//! sketch generator.
//!
//! The on-disk layout mirrors the source dataset:
//! `root/{spiral|wave}/{training|testing}/{healthy|parkinson}/*.png`
//! with healthy mapped to class 0 and parkinson to class 1. File ordering is
//! lexicographic, so two ingests of the same tree always agree.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::augment::{expand_dataset, AugmentError, AugmentParams};
use crate::imageproc::{decode_image, otsu_threshold, rescale, resize, GrayImage, ImageError, ResizeMethod};
use crate::train::{stratified_split_indices, Sample, TrainError};

pub mod config;
pub mod synth;

pub use config::{load_config, serialize_config, ConfigError, PipelineConfig};
pub use synth::generate_synthetic_dataset;

/// The two sketch modalities; each gets its own model branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DrawingType {
    Spiral,
    Wave,
}

impl DrawingType {
    pub fn dir_name(&self) -> &'static str {
        match self {
            DrawingType::Spiral => "spiral",
            DrawingType::Wave => "wave",
        }
    }

    pub fn parse(s: &str) -> Option<DrawingType> {
        match s {
            "spiral" => Some(DrawingType::Spiral),
            "wave" => Some(DrawingType::Wave),
            _ => None,
        }
    }

    /// Table-driven augmentation ranges for this drawing type.
    pub fn augment_params(&self) -> AugmentParams {
        match self {
            DrawingType::Spiral => AugmentParams::spiral(),
            DrawingType::Wave => AugmentParams::wave(),
        }
    }
}

impl fmt::Display for DrawingType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitKind {
    Training,
    Testing,
}

impl SplitKind {
    pub fn dir_name(&self) -> &'static str {
        match self {
            SplitKind::Training => "training",
            SplitKind::Testing => "testing",
        }
    }
}

pub const CLASS_DIRS: [&str; 2] = ["healthy", "parkinson"];

#[derive(Debug)]
pub enum DataError {
    MissingDirectory(PathBuf),
    EmptyClass(PathBuf),
    UnreadableImage { path: PathBuf, source: ImageError },
    InvalidParams(String),
    Io(std::io::Error),
    Augment(AugmentError),
    Train(TrainError),
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::MissingDirectory(p) => write!(f, "missing directory: {}", p.display()),
            DataError::EmptyClass(p) => write!(f, "no images found in {}", p.display()),
            DataError::UnreadableImage { path, source } => {
                write!(f, "cannot read image {}: {source}", path.display())
            }
            DataError::InvalidParams(msg) => write!(f, "invalid parameters: {msg}"),
            DataError::Io(e) => write!(f, "I/O failure: {e}"),
            DataError::Augment(e) => write!(f, "{e}"),
            DataError::Train(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for DataError {}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        DataError::Io(e)
    }
}

impl From<AugmentError> for DataError {
    fn from(e: AugmentError) -> Self {
        DataError::Augment(e)
    }
}

impl From<TrainError> for DataError {
    fn from(e: TrainError) -> Self {
        DataError::Train(e)
    }
}

/// One dataset file with its class label and per-class rank.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestItem {
    pub path: PathBuf,
    pub label: usize,
    pub subject_index: usize,
}

/// Index of one split of one drawing type.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub drawing_type: DrawingType,
    pub split: SplitKind,
    pub items: Vec<ManifestItem>,
    /// Per-class item counts, indexed by label.
    pub class_counts: [usize; 2],
}

fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase()),
        Some(ref e) if e == "png" || e == "jpg" || e == "jpeg"
    )
}

fn scan_split(
    root: &Path,
    drawing_type: DrawingType,
    split: SplitKind,
) -> Result<DatasetManifest, DataError> {
    let split_dir = root.join(drawing_type.dir_name()).join(split.dir_name());
    if !split_dir.is_dir() {
        return Err(DataError::MissingDirectory(split_dir));
    }
    let mut items = Vec::new();
    let mut class_counts = [0usize; 2];
    for (label, class_dir) in CLASS_DIRS.iter().enumerate() {
        let dir = split_dir.join(class_dir);
        if !dir.is_dir() {
            return Err(DataError::MissingDirectory(dir));
        }
        let mut names: Vec<PathBuf> = fs::read_dir(&dir)?
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| is_image_file(p))
            .collect();
        if names.is_empty() {
            return Err(DataError::EmptyClass(dir));
        }
        names.sort();
        for (subject_index, path) in names.into_iter().enumerate() {
            items.push(ManifestItem {
                path,
                label,
                subject_index,
            });
        }
        class_counts[label] = items.len() - class_counts[..label].iter().sum::<usize>();
    }
    Ok(DatasetManifest {
        drawing_type,
        split,
        items,
        class_counts,
    })
}

/// Index the training and testing splits of one drawing type.
pub fn ingest_dataset(
    root: &Path,
    drawing_type: DrawingType,
) -> Result<(DatasetManifest, DatasetManifest), DataError> {
    let train = scan_split(root, drawing_type, SplitKind::Training)?;
    let test = scan_split(root, drawing_type, SplitKind::Testing)?;
    Ok((train, test))
}

/// Decode + binarize + resize one image: the `GrayImage` stage of the
/// pipeline (before unit-range rescaling).
pub fn preprocess_bytes(bytes: &[u8], size: usize) -> Result<GrayImage, ImageError> {
    let gray = decode_image(bytes)?;
    let (_, binary) = otsu_threshold(&gray)?;
    resize(&binary, size, size, ResizeMethod::Nearest)
}

/// Preprocess every file of a manifest to the `GrayImage` stage.
pub fn load_gray_split(
    manifest: &DatasetManifest,
    size: usize,
) -> Result<Vec<(GrayImage, usize)>, DataError> {
    let mut out = Vec::with_capacity(manifest.items.len());
    for item in &manifest.items {
        let bytes = fs::read(&item.path)?;
        let gray = preprocess_bytes(&bytes, size).map_err(|source| DataError::UnreadableImage {
            path: item.path.clone(),
            source,
        })?;
        out.push((gray, item.label));
    }
    Ok(out)
}

fn to_samples(items: &[(GrayImage, usize)]) -> Vec<Sample> {
    items
        .iter()
        .map(|(img, label)| Sample {
            image: rescale(img),
            label: *label,
        })
        .collect()
}

/// Preprocess an evaluation split. No augmentation path exists for data
/// loaded through this function.
pub fn load_eval_split(manifest: &DatasetManifest, size: usize) -> Result<Vec<Sample>, DataError> {
    Ok(to_samples(&load_gray_split(manifest, size)?))
}

/// Training-side data after the stratified split and augmentation.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    /// Size of the training side before augmentation.
    pub train_base_len: usize,
}

/// Preprocess the training split, carve out a stratified validation set, and
/// expand only the training side with seeded augmentation. Validation samples
/// never pass through the augmenter.
pub fn prepare_training_data(
    manifest: &DatasetManifest,
    size: usize,
    params: &AugmentParams,
    copies_per_image: usize,
    validation_fraction: f64,
    seed: u64,
) -> Result<TrainingData, DataError> {
    let grays = load_gray_split(manifest, size)?;
    let labels: Vec<usize> = grays.iter().map(|(_, l)| *l).collect();
    let (train_idx, val_idx) = stratified_split_indices(&labels, validation_fraction, seed)?;
    let train_grays: Vec<(GrayImage, usize)> =
        train_idx.iter().map(|&i| grays[i].clone()).collect();
    let val_grays: Vec<(GrayImage, usize)> = val_idx.iter().map(|&i| grays[i].clone()).collect();
    let expanded = expand_dataset(&train_grays, params, copies_per_image, seed)?;
    let train: Vec<Sample> = expanded
        .iter()
        .map(|item| Sample {
            image: rescale(&item.image),
            label: item.label,
        })
        .collect();
    Ok(TrainingData {
        train,
        val: to_samples(&val_grays),
        train_base_len: train_grays.len(),
    })
}

/// In-memory dataset to samples (synthetic data path).
pub fn grays_to_samples(items: &[(GrayImage, usize)]) -> Vec<Sample> {
    to_samples(items)
}

/// Write an in-memory dataset into the standard on-disk layout.
pub fn write_dataset_tree(
    root: &Path,
    drawing_type: DrawingType,
    split: SplitKind,
    items: &[(GrayImage, usize)],
) -> Result<(), DataError> {
    use crate::imageproc::encode_png;
    let mut per_class = [0usize; 2];
    for (img, label) in items {
        let dir = root
            .join(drawing_type.dir_name())
            .join(split.dir_name())
            .join(CLASS_DIRS[*label]);
        fs::create_dir_all(&dir)?;
        let name = format!("{}_{:04}.png", CLASS_DIRS[*label], per_class[*label]);
        per_class[*label] += 1;
        fs::write(dir.join(name), encode_png(img))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageproc::encode_png;

    fn white_png() -> Vec<u8> {
        encode_png(&GrayImage::filled(8, 8, 255))
    }

    fn sketch_png(dark_at: usize) -> Vec<u8> {
        let mut img = GrayImage::filled(8, 8, 255);
        img.set(dark_at % 8, dark_at / 8, 10);
        img.set((dark_at + 1) % 8, dark_at / 8, 10);
        encode_png(&img)
    }

    fn build_tree(root: &Path, n_train: usize, n_test: usize) {
        for (split, n) in [("training", n_train), ("testing", n_test)] {
            for class in CLASS_DIRS {
                let dir = root.join("spiral").join(split).join(class);
                fs::create_dir_all(&dir).unwrap();
                for i in 0..n {
                    fs::write(dir.join(format!("img_{i:03}.png")), sketch_png(i + 9)).unwrap();
                }
            }
        }
    }

    #[test]
    fn ingest_counts_and_order() {
        let dir = tempfile::tempdir().unwrap();
        build_tree(dir.path(), 36, 15);
        let (train, test) = ingest_dataset(dir.path(), DrawingType::Spiral).unwrap();
        assert_eq!(train.class_counts, [36, 36]);
        assert_eq!(test.class_counts, [15, 15]);
        assert_eq!(train.items.len(), 72);
        assert_eq!(test.items.len(), 30);
        // healthy (label 0) precedes parkinson, each lexicographically sorted.
        assert_eq!(train.items[0].label, 0);
        assert_eq!(train.items[0].subject_index, 0);
        assert_eq!(train.items[36].label, 1);
        assert_eq!(train.items[36].subject_index, 0);
        assert!(train.items[0].path < train.items[1].path);

        let (train2, test2) = ingest_dataset(dir.path(), DrawingType::Spiral).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
    }

    #[test]
    fn missing_class_directory_is_named() {
        let dir = tempfile::tempdir().unwrap();
        build_tree(dir.path(), 2, 1);
        fs::remove_dir_all(dir.path().join("spiral/training/parkinson")).unwrap();
        let err = ingest_dataset(dir.path(), DrawingType::Spiral).unwrap_err();
        match err {
            DataError::MissingDirectory(p) => {
                assert!(p.ends_with("spiral/training/parkinson"), "{}", p.display())
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn empty_class_rejected() {
        let dir = tempfile::tempdir().unwrap();
        build_tree(dir.path(), 2, 1);
        let healthy = dir.path().join("spiral/testing/healthy");
        for entry in fs::read_dir(&healthy).unwrap() {
            fs::remove_file(entry.unwrap().path()).unwrap();
        }
        assert!(matches!(
            ingest_dataset(dir.path(), DrawingType::Spiral).unwrap_err(),
            DataError::EmptyClass(_)
        ));
    }

    #[test]
    fn unreadable_image_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        build_tree(dir.path(), 2, 1);
        let victim = dir.path().join("spiral/training/healthy/img_000.png");
        fs::write(&victim, b"not an image").unwrap();
        let (train, _) = ingest_dataset(dir.path(), DrawingType::Spiral).unwrap();
        let err = load_eval_split(&train, 8).unwrap_err();
        match err {
            DataError::UnreadableImage { path, .. } => assert_eq!(path, victim),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn preprocess_produces_binary_unit_range_tensor() {
        let sample_bytes = sketch_png(20);
        let gray = preprocess_bytes(&sample_bytes, 4).unwrap();
        assert_eq!((gray.width(), gray.height()), (4, 4));
        assert!(gray.pixels().iter().all(|&p| p == 0 || p == 255));
        let samples = grays_to_samples(&[(gray, 1)]);
        assert_eq!(samples[0].image.shape(), &[1, 4, 4]);
        assert!(samples[0]
            .image
            .data()
            .iter()
            .all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn training_data_augments_only_the_train_side() {
        let dir = tempfile::tempdir().unwrap();
        build_tree(dir.path(), 10, 3);
        let (train_manifest, test_manifest) =
            ingest_dataset(dir.path(), DrawingType::Spiral).unwrap();
        let prepared = prepare_training_data(
            &train_manifest,
            8,
            &AugmentParams::spiral(),
            4,
            0.2,
            99,
        )
        .unwrap();
        // 20 originals, 4 to validation, 16 * (1 + 4) to training.
        assert_eq!(prepared.val.len(), 4);
        assert_eq!(prepared.train_base_len, 16);
        assert_eq!(prepared.train.len(), 16 * 5);
        // The evaluation loader returns the testing split untouched.
        let test = load_eval_split(&test_manifest, 8).unwrap();
        assert_eq!(test.len(), 6);
        let again = load_eval_split(&test_manifest, 8).unwrap();
        for (a, b) in test.iter().zip(again.iter()) {
            assert_eq!(a.image, b.image);
        }
    }

    #[test]
    fn non_image_files_are_ignored() {
        let dir = tempfile::tempdir().unwrap();
        build_tree(dir.path(), 2, 1);
        fs::write(dir.path().join("spiral/training/healthy/notes.txt"), b"x").unwrap();
        fs::write(dir.path().join("spiral/training/healthy/img_000.png"), white_png()).unwrap();
        let (train, _) = ingest_dataset(dir.path(), DrawingType::Spiral).unwrap();
        assert_eq!(train.class_counts[0], 2);
    }

    #[test]
    fn dataset_tree_round_trips_through_ingest() {
        let dir = tempfile::tempdir().unwrap();
        let items: Vec<(GrayImage, usize)> = (0..6)
            .map(|i| {
                let mut img = GrayImage::filled(8, 8, 255);
                img.set(i % 8, i % 8, 0);
                (img, i % 2)
            })
            .collect();
        write_dataset_tree(dir.path(), DrawingType::Wave, SplitKind::Training, &items).unwrap();
        write_dataset_tree(dir.path(), DrawingType::Wave, SplitKind::Testing, &items[..2]).unwrap();
        let (train, test) = ingest_dataset(dir.path(), DrawingType::Wave).unwrap();
        assert_eq!(train.class_counts, [3, 3]);
        assert_eq!(test.class_counts, [1, 1]);
    }
}
