//! MNIST-family datasets in the IDX container.
//!
//! Images: magic `0x00000803`, then big-endian `u32` count, rows, cols, then
//! `count·rows·cols` unsigned bytes. Labels: magic `0x00000801`, `u32` count,
//! then `count` bytes.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImages {
    pub n: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl RawImages {
    pub fn dim(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let d = self.dim();
        &self.pixels[i * d..(i + 1) * d]
    }

    /// Swap rows and columns of every image.
    pub fn transposed(&self) -> RawImages {
        let (r, c) = (self.rows, self.cols);
        let mut pixels = vec![0; self.pixels.len()];
        for i in 0..self.n {
            let src = self.image(i);
            let dst = &mut pixels[i * r * c..(i + 1) * r * c];
            for y in 0..r {
                for x in 0..c {
                    dst[x * r + y] = src[y * c + x];
                }
            }
        }
        RawImages {
            n: self.n,
            rows: c,
            cols: r,
            pixels,
        }
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Format {
            offset,
            message: format!("header truncated: need 4 bytes, file has {}", bytes.len()),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = read_u32(bytes, 0)?;
    if magic != expected {
        return Err(Error::Format {
            offset: 0,
            message: format!("magic {magic:#010x}, expected {expected:#010x}"),
        });
    }
    Ok(())
}

fn check_payload(bytes: &[u8], header: usize, expected: usize) -> Result<()> {
    let actual = bytes.len() - header;
    if actual != expected {
        return Err(Error::Format {
            offset: header + actual.min(expected),
            message: format!("payload length {actual}, expected {expected}"),
        });
    }
    Ok(())
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<RawImages> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let n = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    check_payload(bytes, 16, n * rows * cols)?;
    Ok(RawImages {
        n,
        rows,
        cols,
        pixels: bytes[16..].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABELS_MAGIC)?;
    let n = read_u32(bytes, 4)? as usize;
    check_payload(bytes, 8, n)?;
    Ok(bytes[8..].to_vec())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingData(path.to_path_buf()));
    }
    Ok(fs::read(path)?)
}

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<RawImages> {
    parse_idx_images(&read_file(path.as_ref())?)
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    parse_idx_labels(&read_file(path.as_ref())?)
}

pub fn encode_idx_images(images: &RawImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGES_MAGIC, images.n as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub fn write_idx_images(path: impl AsRef<Path>, images: &RawImages) -> Result<()> {
    Ok(fs::write(path, encode_idx_images(images))?)
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    Ok(fs::write(path, encode_idx_labels(labels))?)
}

/// Images with their labels. Pixels stay as bytes; [`rates`](Self::rates)
/// yields the `[0, 1]` values used as spike rates.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImageSet {
    dim: usize,
    pixels: Vec<u8>,
    labels: Vec<usize>,
    n_classes: usize,
    normalized: bool,
}

impl LabeledImageSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn pixel_bytes(&self, i: usize) -> &[u8] {
        &self.pixels[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rates(&self, i: usize) -> Vec<f64> {
        let px = self.pixel_bytes(i);
        if self.normalized {
            px.iter().map(|&b| b as f64 / 255.0).collect()
        } else {
            px.iter().map(|&b| b as f64).collect()
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        self.labels.iter().for_each(|&l| counts[l] += 1);
        counts
    }

    /// New set holding the given sample indices, in that order.
    pub fn select(&self, indices: &[usize]) -> LabeledImageSet {
        let mut pixels = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            pixels.extend_from_slice(self.pixel_bytes(i));
        }
        LabeledImageSet {
            dim: self.dim,
            pixels,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
            normalized: self.normalized,
        }
    }

    /// Back to IDX form (pixel bytes, label bytes).
    pub fn to_raw(&self, rows: usize, cols: usize) -> (RawImages, Vec<u8>) {
        assert_eq!(rows * cols, self.dim);
        (
            RawImages {
                n: self.len(),
                rows,
                cols,
                pixels: self.pixels.clone(),
            },
            self.labels.iter().map(|&l| l as u8).collect(),
        )
    }
}

/// Pair images with labels. With `normalize`, pixel byte `b` becomes `b/255`;
/// without it the bytes must already be binary (0 or 1) so that values stay
/// valid rates.
pub fn make_set(images: &RawImages, labels: &[u8], normalize: bool, n_classes: usize) -> Result<LabeledImageSet> {
    if images.n != labels.len() {
        return Err(Error::Pairing {
            images: images.n,
            labels: labels.len(),
        });
    }
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= n_classes) {
        return Err(Error::InputDomain(format!("label {l} outside {n_classes} classes")));
    }
    if !normalize && images.pixels.iter().any(|&b| b > 1) {
        return Err(Error::InputDomain(
            "unnormalized pixels must be binary to serve as rates".into(),
        ));
    }
    Ok(LabeledImageSet {
        dim: images.dim(),
        pixels: images.pixels.clone(),
        labels: labels.iter().map(|&l| l as usize).collect(),
        n_classes,
        normalized: normalize,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_count: usize,
    pub test_count: usize,
    pub seed: u64,
}

impl SplitSpec {
    pub fn apply(
        &self,
        train: &LabeledImageSet,
        test: &LabeledImageSet,
    ) -> Result<(LabeledImageSet, LabeledImageSet)> {
        Ok((
            subsample(train, self.train_count, &RngStream::new(self.seed, 0))?,
            subsample(test, self.test_count, &RngStream::new(self.seed, 1))?,
        ))
    }
}

/// Seeded stratified subset without replacement.
///
/// Class `c` with `m_c` of `N` samples receives `⌊count·m_c/N⌋` slots, and
/// the remaining slots go to the largest fractional parts (lowest class
/// first on ties), so every class is within one sample of proportional.
/// Selected indices are returned in their original order.
pub fn subsample(set: &LabeledImageSet, count: usize, rng: &RngStream) -> Result<LabeledImageSet> {
    let total = set.len();
    if count > total {
        return Err(Error::InputDomain(format!(
            "cannot draw {count} samples from a set of {total}"
        )));
    }
    if count == total {
        return Ok(set.clone());
    }
    let class_counts = set.class_counts();
    let mut quota: Vec<usize> = class_counts.iter().map(|&m| count * m / total).collect();
    let mut remaining = count - quota.iter().sum::<usize>();
    let mut by_fraction: Vec<usize> = (0..class_counts.len()).collect();
    by_fraction.sort_by_key(|&c| std::cmp::Reverse((count * class_counts[c]) % total));
    for &c in &by_fraction {
        if remaining == 0 {
            break;
        }
        if quota[c] < class_counts[c] {
            quota[c] += 1;
            remaining -= 1;
        }
    }

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); set.n_classes()];
    for (i, &l) in set.labels().iter().enumerate() {
        members[l].push(i);
    }
    let mut chosen = Vec::with_capacity(count);
    for (c, mut idx) in members.into_iter().enumerate() {
        let mut r = rng.sub(c as u64).rng();
        idx.shuffle(&mut r);
        chosen.extend_from_slice(&idx[..quota[c]]);
    }
    chosen.sort_unstable();
    Ok(set.select(&chosen))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Fmnist,
    Emnist,
}

impl DatasetKind {
    pub fn n_classes(&self) -> usize {
        match self {
            DatasetKind::Mnist | DatasetKind::Fmnist => 10,
            DatasetKind::Emnist => 47,
        }
    }

    pub fn subdir(&self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Fmnist => "fmnist",
            DatasetKind::Emnist => "emnist",
        }
    }

    /// Image and label file names for the train and test splits.
    pub fn file_names(&self) -> [&'static str; 4] {
        match self {
            DatasetKind::Mnist | DatasetKind::Fmnist => [
                "train-images-idx3-ubyte",
                "train-labels-idx1-ubyte",
                "t10k-images-idx3-ubyte",
                "t10k-labels-idx1-ubyte",
            ],
            DatasetKind::Emnist => [
                "emnist-balanced-train-images-idx3-ubyte",
                "emnist-balanced-train-labels-idx1-ubyte",
                "emnist-balanced-test-images-idx3-ubyte",
                "emnist-balanced-test-labels-idx1-ubyte",
            ],
        }
    }

    /// Published (train, test) sizes.
    pub fn published_sizes(&self) -> (usize, usize) {
        match self {
            DatasetKind::Mnist | DatasetKind::Fmnist => (60_000, 10_000),
            DatasetKind::Emnist => (112_800, 18_800),
        }
    }

    /// Compare loaded split sizes with the published ones.
    pub fn check_published_sizes(&self, train_len: usize, test_len: usize) -> Result<()> {
        let (tr, te) = self.published_sizes();
        if (train_len, test_len) != (tr, te) {
            return Err(Error::InputDomain(format!(
                "{:?} split sizes {train_len}/{test_len}, published {tr}/{te}",
                self
            )));
        }
        Ok(())
    }

    /// EMNIST stores images transposed relative to MNIST.
    pub fn default_transpose(&self) -> bool {
        matches!(self, DatasetKind::Emnist)
    }

    pub fn paths(&self, data_dir: &Path) -> [PathBuf; 4] {
        let dir = data_dir.join(self.subdir());
        self.file_names().map(|f| dir.join(f))
    }
}

/// Load the train and test splits from `<data_dir>/<kind>/`.
pub fn load_dataset(kind: DatasetKind, data_dir: &Path, transpose: bool) -> Result<(LabeledImageSet, LabeledImageSet)> {
    let [tr_img, tr_lbl, te_img, te_lbl] = kind.paths(data_dir);
    let load = |img: &Path, lbl: &Path| -> Result<LabeledImageSet> {
        let mut images = load_idx_images(img)?;
        if transpose {
            images = images.transposed();
        }
        make_set(&images, &load_idx_labels(lbl)?, true, kind.n_classes())
    };
    Ok((load(&tr_img, &tr_lbl)?, load(&te_img, &te_lbl)?))
}
