//! Dataset ingestion: MNIST IDX files and seeded Gaussian blobs.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use specens::{Error, LabeledSample, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub train: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
    pub num_classes: usize,
    pub input_dim: usize,
    /// How raw features were mapped into `[0,1]`.
    pub normalization: String,
}

impl DatasetBundle {
    /// Plain-text description persisted next to the run's artifacts.
    pub fn describe(&self) -> String {
        let mut per_class = vec![0usize; self.num_classes];
        for s in &self.train {
            per_class[s.label] += 1;
        }
        format!(
            "num_classes = {}\ninput_dim = {}\ntrain = {}\ntest = {}\ntrain_per_class = {:?}\nnormalization = {}\n",
            self.num_classes,
            self.input_dim,
            self.train.len(),
            self.test.len(),
            per_class,
            self.normalization
        )
    }
}

fn format_error(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

fn be_u32(buf: &[u8], offset: usize) -> Result<u32> {
    buf.get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| format_error(offset, "truncated header"))
}

/// Parses an IDX image/label pair. Pixels are scaled by `1/255`; class
/// indices are the digits `0..=9`. At most `limit` samples are decoded.
pub fn parse_idx(images: &[u8], labels: &[u8], limit: Option<usize>) -> Result<Vec<LabeledSample>> {
    let magic = be_u32(images, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(format_error(0, format!("image file magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")));
    }
    let n = be_u32(images, 4)? as usize;
    let rows = be_u32(images, 8)? as usize;
    let cols = be_u32(images, 12)? as usize;
    let dim = rows * cols;
    if images.len() != 16 + n * dim {
        return Err(format_error(
            images.len().min(16 + n * dim),
            format!("image payload is {} bytes, header announces {}", images.len() - 16, n * dim),
        ));
    }

    let magic = be_u32(labels, 0)?;
    if magic != LABELS_MAGIC {
        return Err(format_error(0, format!("label file magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")));
    }
    let n_labels = be_u32(labels, 4)? as usize;
    if n_labels != n {
        return Err(format_error(4, format!("label count {n_labels} does not match image count {n}")));
    }
    if labels.len() != 8 + n {
        return Err(format_error(
            labels.len().min(8 + n),
            format!("label payload is {} bytes, header announces {n}", labels.len() - 8),
        ));
    }

    let take = limit.map_or(n, |l| l.min(n));
    (0..take)
        .map(|i| {
            let label = labels[8 + i] as usize;
            if label > 9 {
                return Err(format_error(8 + i, format!("label {label} outside 0..=9")));
            }
            let px = &images[16 + i * dim..16 + (i + 1) * dim];
            Ok(LabeledSample::new(px.iter().map(|&b| b as f64 / 255.0).collect(), label))
        })
        .collect()
}

pub fn load_idx(images_path: &Path, labels_path: &Path, limit: Option<usize>) -> Result<Vec<LabeledSample>> {
    parse_idx(&fs::read(images_path)?, &fs::read(labels_path)?, limit)
}

/// Standard file names inside an MNIST directory.
pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

pub fn load_mnist(dir: &Path, train_limit: Option<usize>, test_limit: Option<usize>) -> Result<DatasetBundle> {
    let train = load_idx(&dir.join(MNIST_FILES[0]), &dir.join(MNIST_FILES[1]), train_limit)?;
    let test = load_idx(&dir.join(MNIST_FILES[2]), &dir.join(MNIST_FILES[3]), test_limit)?;
    Ok(DatasetBundle {
        train,
        test,
        num_classes: 10,
        input_dim: 784,
        normalization: "pixel / 255, no augmentation".into(),
    })
}

/// `K` Gaussian clusters with seeded means in `[0.2, 0.8]^dim`, clipped to
/// the unit box. Train and test samples are interleaved by class.
pub fn make_synthetic(
    num_classes: usize,
    dim: usize,
    train_per_class: usize,
    test_per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<DatasetBundle> {
    if num_classes < 2 || dim == 0 || train_per_class == 0 || test_per_class == 0 {
        return Err(Error::InvalidConfig("synthetic data needs K >= 2, dim >= 1 and samples per class".into()));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::InvalidConfig("spread must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| (0..dim).map(|_| rng.random_range(0.2..0.8)).collect())
        .collect();
    let noise = Normal::new(0.0, spread).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut draw = |n: usize| -> Vec<LabeledSample> {
        let mut out = Vec::with_capacity(n * num_classes);
        for _ in 0..n {
            for (c, m) in means.iter().enumerate() {
                let x = m.iter().map(|&mu| (mu + noise.sample(&mut rng)).clamp(0.0, 1.0)).collect();
                out.push(LabeledSample::new(x, c));
            }
        }
        out
    };
    let train = draw(train_per_class);
    let test = draw(test_per_class);
    Ok(DatasetBundle {
        train,
        test,
        num_classes,
        input_dim: dim,
        normalization: format!("gaussian blobs, spread {spread}, clipped to [0,1]"),
    })
}
