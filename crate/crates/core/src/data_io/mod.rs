//! Dataset ingestion: IDX files (MNIST), synthetic generators, batching.

mod idx;
mod synthetic;

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use idx::{
    denormalize_pixel, encode_idx_images, encode_idx_labels, normalize_pixel, parse_idx_images,
    parse_idx_labels, read_maybe_gz, IdxError, IdxImages, IMAGES_MAGIC, LABELS_MAGIC,
};
pub use synthetic::{generate_synthetic, SyntheticKind, SyntheticSpec};

use crate::{Error, RealTensor, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    Synthetic,
    Other,
}

impl Split {
    fn idx_prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            _ => "t10k",
        }
    }
}

/// Images as an `N × dim` matrix plus integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: RealTensor,
    pub labels: Vec<u32>,
    pub num_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(images: RealTensor, labels: Vec<u32>, num_classes: usize, split: Split) -> Result<Self> {
        if images.shape().len() != 2 {
            return Err(Error::shape("N × dim matrix", format!("{:?}", images.shape())));
        }
        if images.rows() != labels.len() {
            return Err(Error::shape(
                format!("{} labels", images.rows()),
                format!("{} labels", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::invalid(format!(
                "label {bad} outside 0..{num_classes}"
            )));
        }
        Ok(Self {
            images,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.images.cols()
    }

    /// Gather the rows at `indices` into a dense batch.
    pub fn batch(&self, indices: &[usize]) -> (Array2<f64>, Vec<u32>) {
        let dim = self.dim();
        let mut x = Array2::zeros((indices.len(), dim));
        for (mut row, &i) in x.rows_mut().into_iter().zip(indices) {
            row.as_slice_mut()
                .expect("standard layout")
                .copy_from_slice(self.images.row(i));
        }
        (x, indices.iter().map(|&i| self.labels[i]).collect())
    }

    /// First `n` samples.
    pub fn head(&self, n: usize) -> Result<Self> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        Self::new(
            self.images.select_rows(&idx)?,
            self.labels[..idx.len()].to_vec(),
            self.num_classes,
            self.split,
        )
    }
}

/// Load an IDX image/label pair, mapping bytes onto `[−1, 1]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = parse_idx_images(&read_maybe_gz(images_path)?)?;
    let labels = parse_idx_labels(&read_maybe_gz(labels_path)?)?;
    dataset_from_idx(&images, &labels, Split::Other)
}

pub fn dataset_from_idx(images: &IdxImages, labels: &[u8], split: Split) -> Result<Dataset> {
    if images.count != labels.len() {
        return Err(IdxError::CountMismatch {
            images: images.count,
            labels: labels.len(),
        }
        .into());
    }
    let dim = images.rows * images.cols;
    if images.count == 0 || dim == 0 {
        return Err(Error::Empty("IDX file holds no pixels".into()));
    }
    let data = images.pixels.iter().map(|&b| normalize_pixel(b)).collect();
    let num_classes = labels.iter().max().map_or(1, |&m| m as usize + 1);
    Dataset::new(
        RealTensor::matrix(images.count, dim, data)?,
        labels.iter().map(|&l| u32::from(l)).collect(),
        num_classes,
        split,
    )
}

fn find_idx_file(dir: &Path, prefix: &str, what: &str) -> Result<PathBuf> {
    let ext = if what == "images" { "idx3-ubyte" } else { "idx1-ubyte" };
    for name in [
        format!("{prefix}-{what}-{ext}"),
        format!("{prefix}-{what}.{ext}"),
    ] {
        for suffix in ["", ".gz"] {
            let p = dir.join(format!("{name}{suffix}"));
            if p.is_file() {
                return Ok(p);
            }
        }
    }
    Err(IdxError::Missing(format!("{prefix}-{what}"), dir.to_path_buf()).into())
}

/// Load the MNIST train or test split from a directory of (optionally gzipped) IDX files.
pub fn load_mnist_dir(dir: &Path, split: Split) -> Result<Dataset> {
    let prefix = split.idx_prefix();
    let images = find_idx_file(dir, prefix, "images")?;
    let labels = find_idx_file(dir, prefix, "labels")?;
    let mut ds = load_idx(&images, &labels)?;
    ds.split = split;
    ds.num_classes = ds.num_classes.max(10);
    Ok(ds)
}

/// Write a dataset back out as IDX. 784-wide images are stored as `28 × 28`,
/// anything else as `1 × dim`.
pub fn write_idx(dataset: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let dim = dataset.dim();
    let (rows, cols) = if dim == 784 { (28, 28) } else { (1, dim) };
    let images = IdxImages {
        count: dataset.len(),
        rows,
        cols,
        pixels: dataset.images.data().iter().map(|&x| denormalize_pixel(x)).collect(),
    };
    let labels: Vec<u8> = dataset
        .labels
        .iter()
        .map(|&l| u8::try_from(l).map_err(|_| Error::invalid("label does not fit in a byte")))
        .collect::<Result<_>>()?;
    std::fs::write(images_path, encode_idx_images(&images))?;
    std::fs::write(labels_path, encode_idx_labels(&labels))?;
    Ok(())
}

/// Seeded shuffled mini-batches of indices; the last batch may be short.
pub fn batches(len: usize, batch_size: usize, seed: u64) -> Result<impl Iterator<Item = Vec<usize>>> {
    if batch_size < 1 {
        return Err(Error::invalid("batch_size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let chunks: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    Ok(chunks.into_iter())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_sizes_and_coverage() {
        let b: Vec<Vec<usize>> = batches(10, 3, 1).unwrap().collect();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 3, 1]);
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        let again: Vec<Vec<usize>> = batches(10, 3, 1).unwrap().collect();
        assert_eq!(b, again);
        assert!(batches(10, 0, 1).is_err());
    }

    #[test]
    fn idx_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let images = IdxImages {
            count: 3,
            rows: 28,
            cols: 28,
            pixels: (0..3 * 784).map(|i| (i * 31 % 256) as u8).collect(),
        };
        let (ip, lp) = (dir.path().join("i.idx"), dir.path().join("l.idx"));
        std::fs::write(&ip, encode_idx_images(&images)).unwrap();
        std::fs::write(&lp, encode_idx_labels(&[0, 9, 4])).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.dim(), 784);
        assert_eq!(ds.num_classes, 10);
        let (ip2, lp2) = (dir.path().join("i2.idx"), dir.path().join("l2.idx"));
        write_idx(&ds, &ip2, &lp2).unwrap();
        let back = load_idx(&ip2, &lp2).unwrap();
        assert_eq!(back.images, ds.images);
        assert_eq!(back.labels, ds.labels);
    }

    #[test]
    fn gzip_is_transparent() {
        use flate2::{write::GzEncoder, Compression};
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let images = IdxImages {
            count: 2,
            rows: 1,
            cols: 4,
            pixels: vec![0, 255, 10, 20, 30, 40, 50, 60],
        };
        let ip = dir.path().join("i.idx.gz");
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&encode_idx_images(&images)).unwrap();
        std::fs::write(&ip, enc.finish().unwrap()).unwrap();
        let lp = dir.path().join("l.idx");
        std::fs::write(&lp, encode_idx_labels(&[1, 0])).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.images.row(0), &[-1.0, 1.0, normalize_pixel(10), normalize_pixel(20)]);
    }

    #[test]
    fn count_mismatch_and_swapped_files() {
        let dir = tempfile::tempdir().unwrap();
        let images = IdxImages {
            count: 2,
            rows: 1,
            cols: 2,
            pixels: vec![1, 2, 3, 4],
        };
        let ip = dir.path().join("i");
        let lp = dir.path().join("l");
        std::fs::write(&ip, encode_idx_images(&images)).unwrap();
        std::fs::write(&lp, encode_idx_labels(&[1, 2, 3])).unwrap();
        assert!(matches!(
            load_idx(&ip, &lp),
            Err(Error::Idx(IdxError::CountMismatch { images: 2, labels: 3 }))
        ));
        assert!(matches!(
            load_idx(&ip, &ip),
            Err(Error::Idx(IdxError::BadMagic { .. }))
        ));
    }
}
