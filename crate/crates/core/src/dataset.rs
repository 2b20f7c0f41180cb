//! Labeled image loading, stratified splitting and batch ordering.
//!
//! Datasets live on disk as `root/<digit>/*.pgm|*.ppm`; the directory name
//! is the label.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::imaging::{decode_netpbm, preprocess, GrayImage32, HsvThreshold};
use crate::nn::NUM_CLASSES;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("directories not named after a digit: {}", .0.join(", "))]
    UnknownClassDirectory(Vec<String>),
    #[error("no readable images found under {0}")]
    EmptyDataset(PathBuf),
    #[error("class {class} has {count} image(s); at least 2 are needed to split")]
    ClassTooSmall { class: usize, count: usize },
    #[error("test fraction {0} outside (0, 1)")]
    InvalidFraction(f64),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: GrayImage32,
    pub label: usize,
    pub path: PathBuf,
}

/// A file that was found but could not be decoded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedFile {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<LabeledImage>,
    pub counts: [usize; NUM_CLASSES],
    pub skipped: Vec<SkippedFile>,
}

impl DatasetManifest {
    pub fn from_entries(entries: Vec<LabeledImage>) -> Self {
        let mut counts = [0; NUM_CLASSES];
        for e in &entries {
            counts[e.label] += 1;
        }
        Self {
            entries,
            counts,
            skipped: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Vec<LabeledImage> {
        indices.iter().map(|&i| self.entries[i].clone()).collect()
    }

    /// `path,label` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("path,label\n");
        for e in &self.entries {
            out.push_str(&format!("{},{}\n", e.path.display(), e.label));
        }
        out
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut paths = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(io_err(dir))?;
    paths.sort();
    Ok(paths)
}

fn is_netpbm(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm") || e.eq_ignore_ascii_case("ppm"))
}

pub fn load_dataset(root: &Path) -> Result<DatasetManifest, DatasetError> {
    load_dataset_with(root, &HsvThreshold::default())
}

/// Loads and preprocesses every netpbm file under `root/<digit>/`.
/// Undecodable files are recorded in [`DatasetManifest::skipped`].
pub fn load_dataset_with(root: &Path, th: &HsvThreshold) -> Result<DatasetManifest, DatasetError> {
    let mut class_dirs = Vec::new();
    let mut unknown = Vec::new();
    for path in sorted_entries(root)? {
        if !path.is_dir() {
            continue;
        }
        let name = path
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        match name.parse::<usize>() {
            Ok(label) if label < NUM_CLASSES && name.len() == 1 => class_dirs.push((label, path)),
            _ => unknown.push(name),
        }
    }
    if !unknown.is_empty() {
        return Err(DatasetError::UnknownClassDirectory(unknown));
    }

    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for (label, dir) in class_dirs {
        for path in sorted_entries(&dir)? {
            if !path.is_file() || !is_netpbm(&path) {
                continue;
            }
            let decoded = fs::read(&path)
                .map_err(|e| e.to_string())
                .and_then(|bytes| decode_netpbm(&bytes).map_err(|e| e.to_string()));
            match decoded {
                Ok(raster) => entries.push(LabeledImage {
                    image: preprocess(&raster, th),
                    label,
                    path,
                }),
                Err(reason) => skipped.push(SkippedFile { path, reason }),
            }
        }
    }
    if entries.is_empty() {
        return Err(DatasetError::EmptyDataset(root.to_path_buf()));
    }
    let mut manifest = DatasetManifest::from_entries(entries);
    manifest.skipped = skipped;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
}

/// 70 of every 320 images per class go to the test set.
pub const DEFAULT_TEST_FRACTION: f64 = 70.0 / 320.0;

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_fraction: DEFAULT_TEST_FRACTION,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Number of test samples for a class of `n`: `⌈fraction·n⌉`, kept inside
/// `[1, n−1]`.
pub fn test_count(n: usize, fraction: f64) -> usize {
    // tolerate representation error such as 0.2·10 = 2.000…04
    let raw = (fraction * n as f64 - 1e-9).ceil().max(1.0) as usize;
    raw.min(n.saturating_sub(1))
}

/// Per-class seeded shuffle; the last `⌈fraction·n_c⌉` of each class become
/// test samples. Classes with no samples are skipped.
pub fn stratified_split(
    manifest: &DatasetManifest,
    spec: &SplitSpec,
) -> Result<Split, DatasetError> {
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(spec.test_fraction));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..NUM_CLASSES {
        let mut members: Vec<usize> = manifest
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.label == class)
            .map(|(i, _)| i)
            .collect();
        match members.len() {
            0 => continue,
            1 => return Err(DatasetError::ClassTooSmall { class, count: 1 }),
            _ => {}
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(class as u64);
        members.shuffle(&mut rng);
        let cut = members.len() - test_count(members.len(), spec.test_fraction);
        train.extend_from_slice(&members[..cut]);
        test.extend_from_slice(&members[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

/// Shuffles `indices` with a generator seeded by `seed ⊕ epoch` and cuts
/// them into batches; the last batch may be short.
pub fn batches(indices: &[usize], batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be positive");
    let mut order = indices.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch as u64);
    order.shuffle(&mut rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}
