//! Labelled image sets: IDX (MNIST) and CIFAR-10 binary readers.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::conv::Shape3;
use crate::error::{Result, SimError};

const IDX_IMAGES: u32 = 2051;
const IDX_LABELS: u32 = 2049;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Images flattened NHWC with intensities in `[0, 1]`, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Array2<f64>,
    pub labels: Vec<usize>,
    pub shape: Shape3,
    pub classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(images: Array2<f64>, labels: Vec<usize>, shape: Shape3, classes: usize, split: Split) -> Result<Self> {
        if images.nrows() != labels.len() {
            return Err(SimError::Ingestion(format!("{} images but {} labels", images.nrows(), labels.len())));
        }
        if images.ncols() != shape.len() {
            return Err(SimError::Ingestion(format!("{} pixels per image for shape {shape:?}", images.ncols())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(SimError::Ingestion(format!("label {bad} outside 0..{classes}")));
        }
        Ok(Self { images, labels, shape, classes, split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The first `n` samples (all of them if fewer).
    pub fn take(&self, n: usize) -> Self {
        self.select(&(0..n.min(self.len())).collect::<Vec<_>>(), self.split)
    }

    pub fn select(&self, idx: &[usize], split: Split) -> Self {
        Self {
            images: self.images.select(Axis(0), idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            shape: self.shape,
            classes: self.classes,
            split,
        }
    }

    /// Shuffle once and hold out `fraction` of the samples as a validation set.
    pub fn split_validation<R: Rng + ?Sized>(&self, fraction: f64, rng: &mut R) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(SimError::Parameter(format!("validation fraction must lie in [0, 1), got {fraction}")));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(rng);
        let n_val = (fraction * self.len() as f64).round() as usize;
        let (val, train) = idx.split_at(n_val);
        Ok((self.select(train, Split::Train), self.select(val, Split::Validation)))
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| SimError::Ingestion(format!("{}: {e}", path.display())))
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| SimError::Ingestion(format!("{}: truncated header", path.display())))
}

/// Parse an IDX image file into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_IMAGES {
        return Err(SimError::Ingestion(format!("{}: bad magic {magic}, expected {IDX_IMAGES}", path.display())));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let r = be_u32(bytes, 8, path)? as usize;
    let c = be_u32(bytes, 12, path)? as usize;
    let body = &bytes[16..];
    if body.len() != n * r * c {
        return Err(SimError::Ingestion(format!(
            "{}: {} pixel bytes for {n} images of {r}x{c}",
            path.display(),
            body.len()
        )));
    }
    Ok((n, r, c, body.to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_LABELS {
        return Err(SimError::Ingestion(format!("{}: bad magic {magic}, expected {IDX_LABELS}", path.display())));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(SimError::Ingestion(format!("{}: {} label bytes for {n} labels", path.display(), body.len())));
    }
    Ok(body.to_vec())
}

/// Load an IDX image/label pair, keeping at most `limit` samples.
pub fn load_idx(images: &Path, labels: &Path, classes: usize, split: Split, limit: Option<usize>) -> Result<Dataset> {
    let (n, r, c, pixels) = parse_idx_images(&read(images)?, images)?;
    let lab = parse_idx_labels(&read(labels)?, labels)?;
    if lab.len() != n {
        return Err(SimError::Ingestion(format!("{n} images but {} labels", lab.len())));
    }
    let keep = limit.map_or(n, |l| l.min(n));
    let px = r * c;
    let data: Vec<f64> = pixels[..keep * px].iter().map(|&p| f64::from(p) / 255.0).collect();
    let images = Array2::from_shape_vec((keep, px), data).expect("length checked");
    let labels = lab[..keep].iter().map(|&l| usize::from(l)).collect();
    Dataset::new(images, labels, Shape3::new(r, c, 1), classes, split)
}

/// MNIST directory: `$MNIST_DIR`, else `data/mnist` under the workspace root.
pub fn default_mnist_dir() -> PathBuf {
    std::env::var_os("MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

/// Standard MNIST file names inside `dir`.
pub fn load_mnist(dir: &Path, split: Split, limit: Option<usize>) -> Result<Dataset> {
    let prefix = match split {
        Split::Test => "t10k",
        Split::Train | Split::Validation => "train",
    };
    load_idx(
        &dir.join(format!("{prefix}-images-idx3-ubyte")),
        &dir.join(format!("{prefix}-labels-idx1-ubyte")),
        10,
        split,
        limit,
    )
}

/// CIFAR-10 binary batches: one label byte then 3072 channel-major pixel bytes per record.
pub fn load_cifar10(dir: &Path, split: Split, limit: Option<usize>) -> Result<Dataset> {
    let files: Vec<String> = match split {
        Split::Test => vec!["test_batch.bin".into()],
        Split::Train | Split::Validation => (1..=5).map(|k| format!("data_batch_{k}.bin")).collect(),
    };
    const REC: usize = 1 + 3072;
    let (mut labels, mut pixels) = (Vec::new(), Vec::new());
    for f in files {
        let path = dir.join(f);
        let bytes = read(&path)?;
        if bytes.len() % REC != 0 {
            return Err(SimError::Ingestion(format!("{}: truncated record", path.display())));
        }
        for rec in bytes.chunks_exact(REC) {
            if limit.is_some_and(|l| labels.len() >= l) {
                break;
            }
            labels.push(usize::from(rec[0]));
            // Channel-major to NHWC.
            for p in 0..1024 {
                for ch in 0..3 {
                    pixels.push(f64::from(rec[1 + ch * 1024 + p]) / 255.0);
                }
            }
        }
    }
    let n = labels.len();
    let images = Array2::from_shape_vec((n, 3072), pixels).expect("length checked");
    Dataset::new(images, labels, Shape3::new(32, 32, 3), 10, split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn idx_images(n: u32, r: u32, c: u32, extra: i64) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IDX_IMAGES, n, r, c] {
            b.extend(v.to_be_bytes());
        }
        let len = (i64::from(n * r * c) + extra) as usize;
        b.extend((0..len).map(|k| (k % 256) as u8));
        b
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend(IDX_LABELS.to_be_bytes());
        b.extend((labels.len() as u32).to_be_bytes());
        b.extend(labels);
        b
    }

    fn write_pair(dir: &Path, images: &[u8], labels: &[u8]) -> (PathBuf, PathBuf) {
        let (ip, lp) = (dir.join("img"), dir.join("lab"));
        fs::write(&ip, images).unwrap();
        fs::write(&lp, labels).unwrap();
        (ip, lp)
    }

    fn scratch(name: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("memsim-idx-{name}-{}", std::process::id()));
        fs::create_dir_all(&d).unwrap();
        d
    }

    #[test]
    fn parses_and_scales() {
        let d = scratch("ok");
        let (ip, lp) = write_pair(&d, &idx_images(3, 2, 2, 0), &idx_labels(&[0, 9, 4]));
        let ds = load_idx(&ip, &lp, 10, Split::Train, None).unwrap();
        assert_eq!(ds.images.dim(), (3, 4));
        assert_eq!(ds.labels, vec![0, 9, 4]);
        assert_eq!(ds.images[[0, 1]], 1.0 / 255.0);
        assert!(ds.images.iter().all(|&p| (0.0..=1.0).contains(&p)));
        assert_eq!(load_idx(&ip, &lp, 10, Split::Train, Some(2)).unwrap().len(), 2);
    }

    #[test]
    fn rejects_bad_inputs() {
        let d = scratch("bad");
        let (ip, lp) = write_pair(&d, &idx_images(3, 2, 2, 0), &idx_labels(&[0, 10, 4]));
        assert!(matches!(load_idx(&ip, &lp, 10, Split::Train, None), Err(SimError::Ingestion(_))));
        let (ip, lp) = write_pair(&d, &idx_images(3, 2, 2, 0), &idx_labels(&[0, 1]));
        assert!(matches!(load_idx(&ip, &lp, 10, Split::Train, None), Err(SimError::Ingestion(_))));
        let (ip, lp) = write_pair(&d, &idx_images(3, 2, 2, -1), &idx_labels(&[0, 1, 2]));
        assert!(matches!(load_idx(&ip, &lp, 10, Split::Train, None), Err(SimError::Ingestion(_))));
        let (ip, lp) = write_pair(&d, &idx_labels(&[0, 1, 2]), &idx_labels(&[0, 1, 2]));
        assert!(matches!(load_idx(&ip, &lp, 10, Split::Train, None), Err(SimError::Ingestion(_))));
        assert!(load_idx(&d.join("missing"), &lp, 10, Split::Train, None).is_err());
    }

    #[test]
    fn validation_split_is_disjoint() {
        let images = Array2::from_shape_fn((10, 1), |(i, _)| i as f64);
        let ds = Dataset::new(images, (0..10).map(|i| i % 2).collect(), Shape3::new(1, 1, 1), 2, Split::Train).unwrap();
        let (tr, va) = ds.split_validation(0.3, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!((tr.len(), va.len()), (7, 3));
        let mut all: Vec<f64> = tr.images.iter().chain(va.images.iter()).copied().collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..10).map(f64::from).collect::<Vec<_>>());
        assert_eq!(va.split, Split::Validation);
    }

    #[test]
    fn real_mnist_if_present() {
        let dir = default_mnist_dir();
        if !dir.join("train-images-idx3-ubyte").exists() {
            return;
        }
        let ds = load_mnist(&dir, Split::Train, None).unwrap();
        assert_eq!(ds.images.dim(), (60000, 784));
        assert!(ds.labels.iter().all(|&l| l < 10));
    }
}
