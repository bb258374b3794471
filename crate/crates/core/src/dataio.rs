//! IDX image/label files, normalization, subsetting and batching.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::{derive_seed, prng, shuffle};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const NUM_CLASSES: usize = 10;

/// Images exactly as stored in an IDX file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

/// Images with pixels in `[0, 1]`, shape `[count, rows, cols]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSet {
    rows: usize,
    cols: usize,
    pixels: Tensor,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSet {
    pub labels: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Labeled {
    pub images: ImageSet,
    pub labels: LabelSet,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetName {
    #[default]
    Mnist,
    Fmnist,
}

impl DatasetName {
    fn dir_candidates(self) -> &'static [&'static str] {
        match self {
            DatasetName::Mnist => &["mnist", "MNIST"],
            DatasetName::Fmnist => &["fmnist", "fashion-mnist", "FashionMNIST"],
        }
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetName::Mnist => "mnist",
            DatasetName::Fmnist => "fmnist",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub name: DatasetName,
    pub train: Labeled,
    pub test: Labeled,
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or(Error::TruncatedPayload {
            expected: offset + 4,
            found: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let found = read_u32(bytes, 0)?;
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

fn check_len(bytes: &[u8], expected: usize) -> Result<()> {
    match bytes.len() {
        n if n < expected => Err(Error::TruncatedPayload { expected, found: n }),
        n if n > expected => Err(Error::TrailingBytes { extra: n - expected }),
        _ => Ok(()),
    }
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<RawImages> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let payload = count
        .checked_mul(rows)
        .and_then(|n| n.checked_mul(cols))
        .ok_or_else(|| Error::Malformed("image dimensions overflow".into()))?;
    check_len(bytes, 16 + payload)?;
    Ok(RawImages {
        count,
        rows,
        cols,
        pixels: bytes[16..].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<LabelSet> {
    check_magic(bytes, LABEL_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    check_len(bytes, 8 + count)?;
    let labels = bytes[8..].to_vec();
    if let Some(&bad) = labels.iter().find(|&&l| usize::from(l) >= NUM_CLASSES) {
        return Err(Error::LabelOutOfRange {
            label: bad.into(),
            classes: NUM_CLASSES,
        });
    }
    Ok(LabelSet { labels })
}

impl RawImages {
    pub fn to_idx_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.pixels.len());
        for v in [IMAGE_MAGIC, self.count as u32, self.rows as u32, self.cols as u32] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(&self.pixels);
        out
    }
}

impl LabelSet {
    pub fn to_idx_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.labels.len());
        out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        out.extend_from_slice(&(self.labels.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.labels);
        out
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize) -> usize {
        self.labels[i].into()
    }

    pub fn select(&self, indices: &[usize]) -> LabelSet {
        LabelSet {
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// `pixel / 255`.
pub fn normalize(raw: &RawImages) -> ImageSet {
    let data = raw.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    ImageSet {
        rows: raw.rows,
        cols: raw.cols,
        pixels: Tensor::new(vec![raw.count, raw.rows, raw.cols], data).expect("dims checked at parse"),
    }
}

impl ImageSet {
    /// Builds a set from flat row-major images of `rows·cols` pixels each.
    pub fn from_images(images: &[Vec<f64>], rows: usize, cols: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(images.len() * rows * cols);
        for img in images {
            if img.len() != rows * cols {
                return Err(Error::ShapeMismatch(format!(
                    "image of {} pixels, expected {}",
                    img.len(),
                    rows * cols
                )));
            }
            data.extend_from_slice(img);
        }
        Ok(ImageSet {
            rows,
            cols,
            pixels: Tensor::new(vec![images.len(), rows, cols], data)?,
        })
    }

    pub fn from_tensor(pixels: Tensor) -> Result<Self> {
        let &[_, rows, cols] = pixels.shape() else {
            return Err(Error::ShapeMismatch(format!(
                "image tensor must be [count, rows, cols], got {:?}",
                pixels.shape()
            )));
        };
        Ok(ImageSet { rows, cols, pixels })
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        ImageSet {
            rows,
            cols,
            pixels: Tensor::zeros(&[0, rows, cols]),
        }
    }

    pub fn len(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pixels(&self) -> &Tensor {
        &self.pixels
    }

    pub fn image_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.image_len();
        &self.pixels.data()[i * n..(i + 1) * n]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.len()).map(move |i| self.image(i))
    }

    pub fn select(&self, indices: &[usize]) -> ImageSet {
        let mut data = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        ImageSet {
            rows: self.rows,
            cols: self.cols,
            pixels: Tensor::new(vec![indices.len(), self.rows, self.cols], data).unwrap(),
        }
    }

    /// Concatenates sets of equal image size.
    pub fn concat(parts: &[&ImageSet]) -> Result<ImageSet> {
        let Some(first) = parts.first() else {
            return Err(Error::ShapeMismatch("nothing to concatenate".into()));
        };
        let mut images = Vec::new();
        for p in parts {
            if (p.rows, p.cols) != (first.rows, first.cols) {
                return Err(Error::ShapeMismatch("image sizes differ".into()));
            }
            images.extend(p.iter().map(<[f64]>::to_vec));
        }
        ImageSet::from_images(&images, first.rows, first.cols)
    }
}

impl Labeled {
    pub fn new(images: ImageSet, labels: LabelSet) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        Ok(Labeled { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Labeled {
        Labeled {
            images: self.images.select(indices),
            labels: self.labels.select(indices),
        }
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for &l in &self.labels.labels {
            counts[usize::from(l)] += 1;
        }
        counts
    }

    /// Exactly `per_class` samples of every class, in a seed-determined order.
    pub fn subset(&self, per_class: usize, seed: u64) -> Result<Labeled> {
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
        for (i, &l) in self.labels.labels.iter().enumerate() {
            by_class[usize::from(l)].push(i);
        }
        let mut chosen = Vec::with_capacity(per_class * NUM_CLASSES);
        for (class, mut idx) in by_class.into_iter().enumerate() {
            if idx.len() < per_class {
                return Err(Error::InsufficientSamples {
                    class,
                    requested: per_class,
                    available: idx.len(),
                });
            }
            shuffle(&mut idx, &mut prng(derive_seed(seed, "subset-class", class as u64)));
            chosen.extend_from_slice(&idx[..per_class]);
        }
        shuffle(&mut chosen, &mut prng(derive_seed(seed, "subset-order", 0)));
        Ok(self.select(&chosen))
    }
}

/// Subsets both halves of a split; train and test draw from separate streams.
pub fn subset(split: &DatasetSplit, train_per_class: usize, test_per_class: usize, seed: u64) -> Result<DatasetSplit> {
    Ok(DatasetSplit {
        name: split.name,
        train: split.train.subset(train_per_class, derive_seed(seed, "train", 0))?,
        test: split.test.subset(test_per_class, derive_seed(seed, "test", 0))?,
    })
}

/// Index batches for one epoch: a seeded permutation cut into
/// `batch_size` chunks (the last may be short).
pub fn epoch_batches(count: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..count).collect();
    shuffle(&mut order, &mut prng(derive_seed(seed, "epoch", epoch)));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Iterates `(images, labels)` batches of one epoch.
pub struct BatchIter<'a> {
    data: &'a Labeled,
    plan: std::vec::IntoIter<Vec<usize>>,
}

pub fn batch_iter(data: &Labeled, batch_size: usize, seed: u64, epoch: u64) -> Result<BatchIter<'_>> {
    Ok(BatchIter {
        data,
        plan: epoch_batches(data.len(), batch_size, seed, epoch)?.into_iter(),
    })
}

impl Iterator for BatchIter<'_> {
    type Item = (ImageSet, LabelSet);

    fn next(&mut self) -> Option<Self::Item> {
        let idx = self.plan.next()?;
        Some((self.data.images.select(&idx), self.data.labels.select(&idx)))
    }
}

const FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

/// SHA-256 of the canonical uncompressed MNIST files.
const MNIST_SHA256: [&str; 4] = [
    "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db",
    "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5",
    "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7",
    "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2",
];

/// Locates the directory holding `name`'s four IDX files under `data_dir`.
pub fn dataset_dir(data_dir: &Path, name: DatasetName) -> Result<PathBuf> {
    let candidates = name
        .dir_candidates()
        .iter()
        .map(|d| data_dir.join(d))
        .chain(std::iter::once(data_dir.to_path_buf()));
    for dir in candidates {
        if dir.join(FILES[0]).is_file() {
            return Ok(dir);
        }
    }
    Err(Error::io(
        data_dir,
        std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no {name} IDX files ({}) found", FILES[0]),
        ),
    ))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads and normalizes both halves of a dataset from local files.
pub fn load_split(data_dir: &Path, name: DatasetName) -> Result<DatasetSplit> {
    let dir = dataset_dir(data_dir, name)?;
    let bytes = FILES
        .iter()
        .map(|f| read(&dir.join(f)))
        .collect::<Result<Vec<_>>>()?;
    if name == DatasetName::Mnist {
        for ((file, data), want) in FILES.iter().zip(&bytes).zip(MNIST_SHA256) {
            let got = hex(&Sha256::digest(data));
            if got != want {
                log::warn!("{file}: sha256 {got} differs from the canonical {want}");
            }
        }
    }
    let labeled = |img: &[u8], lab: &[u8]| -> Result<Labeled> {
        Labeled::new(normalize(&parse_idx_images(img)?), parse_idx_labels(lab)?)
    };
    Ok(DatasetSplit {
        name,
        train: labeled(&bytes[0], &bytes[1])?,
        test: labeled(&bytes[2], &bytes[3])?,
    })
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_file(count: u32, rows: u32, cols: u32, payload: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for x in [IMAGE_MAGIC, count, rows, cols] {
            v.extend_from_slice(&x.to_be_bytes());
        }
        v.extend_from_slice(payload);
        v
    }

    fn label_file(payload: &[u8]) -> Vec<u8> {
        LabelSet { labels: payload.to_vec() }.to_idx_bytes()
    }

    fn toy(n_per_class: usize) -> Labeled {
        let labels: Vec<u8> = (0..n_per_class * 10).map(|i| (i % 10) as u8).collect();
        let images: Vec<Vec<f64>> = (0..labels.len()).map(|i| vec![i as f64; 4]).collect();
        Labeled::new(ImageSet::from_images(&images, 2, 2).unwrap(), LabelSet { labels }).unwrap()
    }

    #[test]
    fn minimal_image_file() {
        let raw = parse_idx_images(&image_file(1, 1, 1, &[0x80])).unwrap();
        assert_eq!((raw.count, raw.rows, raw.cols), (1, 1, 1));
        assert_eq!(raw.pixels, vec![128]);
    }

    #[test]
    fn image_errors() {
        let mut wrong = image_file(1, 1, 1, &[0]);
        wrong[3] = 0x01;
        assert!(matches!(parse_idx_images(&wrong), Err(Error::BadMagic { found: 0x801, .. })));
        assert!(matches!(
            parse_idx_images(&image_file(2, 1, 1, &[0])),
            Err(Error::TruncatedPayload { .. })
        ));
        assert!(matches!(
            parse_idx_images(&image_file(1, 1, 1, &[0, 0])),
            Err(Error::TrailingBytes { extra: 1 })
        ));
        assert!(matches!(parse_idx_images(&[0, 0]), Err(Error::TruncatedPayload { .. })));
    }

    #[test]
    fn label_file_cases() {
        assert_eq!(parse_idx_labels(&label_file(&[0, 9])).unwrap().labels, vec![0, 9]);
        assert!(matches!(
            parse_idx_labels(&label_file(&[3, 10])),
            Err(Error::LabelOutOfRange { label: 10, .. })
        ));
        assert!(matches!(
            parse_idx_labels(&image_file(0, 0, 0, &[])),
            Err(Error::BadMagic { .. })
        ));
    }

    #[test]
    fn normalize_endpoints() {
        let set = normalize(&parse_idx_images(&image_file(1, 1, 3, &[0, 255, 128])).unwrap());
        assert_eq!(set.image(0), &[0.0, 1.0, 128.0 / 255.0]);
        assert!((set.image(0)[2] - 0.50196).abs() < 1e-5);
    }

    #[test]
    fn subset_counts_and_determinism() {
        let data = toy(30);
        let s = data.subset(7, 3).unwrap();
        assert_eq!(s.class_counts(), [7; 10]);
        assert_eq!(s, data.subset(7, 3).unwrap());
        assert_ne!(s, data.subset(7, 4).unwrap());
        assert!(data.subset(0, 1).unwrap().is_empty());
        assert!(matches!(data.subset(31, 1), Err(Error::InsufficientSamples { requested: 31, .. })));
    }

    #[test]
    fn batch_sizes() {
        let sizes: Vec<_> = epoch_batches(10, 4, 0, 0).unwrap().iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        assert_eq!(epoch_batches(10, 1, 0, 0).unwrap().len(), 10);
        assert!(epoch_batches(10, 0, 0, 0).is_err());
        assert_eq!(epoch_batches(10, 3, 5, 0).unwrap(), epoch_batches(10, 3, 5, 0).unwrap());
        assert_ne!(epoch_batches(50, 3, 5, 0).unwrap(), epoch_batches(50, 3, 5, 1).unwrap());
    }

    #[test]
    fn batch_iter_covers_dataset_once() {
        let data = toy(3);
        let mut seen: Vec<f64> = batch_iter(&data, 4, 9, 0)
            .unwrap()
            .flat_map(|(imgs, _)| imgs.iter().map(|im| im[0]).collect::<Vec<_>>())
            .collect();
        seen.sort_by(f64::total_cmp);
        assert_eq!(seen, (0..30).map(f64::from).collect::<Vec<_>>());
    }

    #[test]
    fn missing_directory_names_path() {
        let err = load_split(Path::new("/nonexistent/qshield"), DatasetName::Mnist).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/qshield"));
    }
}
