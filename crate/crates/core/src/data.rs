//! MNIST ingestion: IDX decoding, seeded subsampling and the 794-unit
//! augmented encoding used by the Boltzmann models.
//!
//! IDX layout (all integers big-endian):
//!
//! ```text
//! images: magic 0x00000803 (2051) | count | rows | cols | count*rows*cols u8
//! labels: magic 0x00000801 (2049) | count | count u8
//! ```

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rng::rng_from;

pub const IMAGE_SIDE: usize = 28;
pub const PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const CLASSES: usize = 10;
/// Pixel units followed by one-hot label units.
pub const AUGMENTED_LEN: usize = PIXELS + CLASSES;

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: bad magic number {found} at byte offset 0 (expected {expected})")]
    BadMagic {
        file: &'static str,
        found: u32,
        expected: u32,
    },
    #[error("{file}: truncated at byte offset {offset} (need {needed} bytes, file has {len})")]
    Truncated {
        file: &'static str,
        offset: usize,
        needed: usize,
        len: usize,
    },
    #[error("image dimensions {rows}x{cols} at byte offset 8 (expected 28x28)")]
    BadDimensions { rows: u32, cols: u32 },
    #[error("image/label count mismatch: {images} images vs {labels} labels (counts at byte offset 4)")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} at byte offset {offset} is outside 0..=9")]
    BadLabel { label: u8, offset: usize },
    #[error("subsample size {requested} outside 1..={available}")]
    SubsampleRange { requested: usize, available: usize },
    #[error("dataset is empty")]
    Empty,
    #[error("invalid image: {0}")]
    InvalidSample(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One 28x28 digit, pixels row-major in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    pixels: Vec<f64>,
    label: u8,
}

impl ImageSample {
    pub fn new(pixels: Vec<f64>, label: u8) -> Result<Self, DataError> {
        if pixels.len() != PIXELS {
            return Err(DataError::InvalidSample(format!(
                "expected {PIXELS} pixels, got {}",
                pixels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(DataError::InvalidSample(format!("pixel {p} outside [0,1]")));
        }
        if usize::from(label) >= CLASSES {
            return Err(DataError::InvalidSample(format!("label {label} outside 0..=9")));
        }
        Ok(Self { pixels, label })
    }

    pub fn from_bytes(bytes: &[u8], label: u8) -> Result<Self, DataError> {
        Self::new(bytes.iter().map(|&b| f64::from(b) / 255.0).collect(), label)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn label(&self) -> u8 {
        self.label
    }

    pub fn pixel(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * IMAGE_SIDE + col]
    }

    /// Stochastic binarization: each pixel is on with probability equal to
    /// its intensity.
    pub fn binarized<R: Rng + ?Sized>(&self, rng: &mut R) -> ImageSample {
        let pixels = self
            .pixels
            .iter()
            .map(|&p| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
            .collect();
        ImageSample {
            pixels,
            label: self.label,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    samples: Vec<ImageSample>,
    split: Split,
}

impl Dataset {
    pub fn new(samples: Vec<ImageSample>, split: Split) -> Result<Self, DataError> {
        if samples.is_empty() {
            return Err(DataError::Empty);
        }
        Ok(Self { samples, split })
    }

    pub fn samples(&self) -> &[ImageSample] {
        &self.samples
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn label_histogram(&self) -> [usize; CLASSES] {
        let mut h = [0; CLASSES];
        for s in &self.samples {
            h[usize::from(s.label)] += 1;
        }
        h
    }

    /// First `n` samples (or all of them when `n` exceeds the length).
    pub fn take(&self, n: usize) -> Dataset {
        Dataset {
            samples: self.samples[..n.min(self.len())].to_vec(),
            split: self.split,
        }
    }

    /// Splits into two disjoint datasets at `at`.
    pub fn split_at(&self, at: usize) -> Result<(Dataset, Dataset), DataError> {
        if at == 0 || at >= self.len() {
            return Err(DataError::SubsampleRange {
                requested: at,
                available: self.len().saturating_sub(1),
            });
        }
        let (a, b) = self.samples.split_at(at);
        Ok((
            Dataset {
                samples: a.to_vec(),
                split: self.split,
            },
            Dataset {
                samples: b.to_vec(),
                split: self.split,
            },
        ))
    }
}

fn read_u32(bytes: &[u8], offset: usize, file: &'static str) -> Result<u32, DataError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(DataError::Truncated {
            file,
            offset: bytes.len(),
            needed: offset + 4,
            len: bytes.len(),
        })
}

/// Decodes an IDX image/label pair already held in memory.
pub fn parse_idx(image_bytes: &[u8], label_bytes: &[u8], split: Split) -> Result<Dataset, DataError> {
    let magic = read_u32(image_bytes, 0, "images")?;
    if magic != IMAGE_MAGIC {
        return Err(DataError::BadMagic {
            file: "images",
            found: magic,
            expected: IMAGE_MAGIC,
        });
    }
    let magic = read_u32(label_bytes, 0, "labels")?;
    if magic != LABEL_MAGIC {
        return Err(DataError::BadMagic {
            file: "labels",
            found: magic,
            expected: LABEL_MAGIC,
        });
    }
    let n_images = read_u32(image_bytes, 4, "images")? as usize;
    let rows = read_u32(image_bytes, 8, "images")?;
    let cols = read_u32(image_bytes, 12, "images")?;
    if rows as usize != IMAGE_SIDE || cols as usize != IMAGE_SIDE {
        return Err(DataError::BadDimensions { rows, cols });
    }
    let n_labels = read_u32(label_bytes, 4, "labels")? as usize;
    if n_images != n_labels {
        return Err(DataError::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }
    let needed = 16 + n_images * PIXELS;
    if image_bytes.len() < needed {
        return Err(DataError::Truncated {
            file: "images",
            offset: image_bytes.len(),
            needed,
            len: image_bytes.len(),
        });
    }
    let needed = 8 + n_labels;
    if label_bytes.len() < needed {
        return Err(DataError::Truncated {
            file: "labels",
            offset: label_bytes.len(),
            needed,
            len: label_bytes.len(),
        });
    }
    let samples = image_bytes[16..16 + n_images * PIXELS]
        .chunks_exact(PIXELS)
        .zip(&label_bytes[8..8 + n_labels])
        .enumerate()
        .map(|(i, (px, &label))| {
            if usize::from(label) >= CLASSES {
                return Err(DataError::BadLabel { label, offset: 8 + i });
            }
            ImageSample::from_bytes(px, label)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Dataset::new(samples, split)
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Loads an MNIST image/label file pair, rescaling pixel bytes by 1/255.
pub fn load_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<Dataset, DataError> {
    parse_idx(&read_file(images_path)?, &read_file(labels_path)?, split)
}

/// Encodes samples back into IDX bytes; pixels are quantized with
/// `round(p * 255)`, which is exact for data that came from IDX.
pub fn encode_idx(samples: &[ImageSample]) -> (Vec<u8>, Vec<u8>) {
    let n = samples.len() as u32;
    let mut images = Vec::with_capacity(16 + samples.len() * PIXELS);
    images.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    images.extend_from_slice(&n.to_be_bytes());
    images.extend_from_slice(&(IMAGE_SIDE as u32).to_be_bytes());
    images.extend_from_slice(&(IMAGE_SIDE as u32).to_be_bytes());
    let mut labels = Vec::with_capacity(8 + samples.len());
    labels.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    labels.extend_from_slice(&n.to_be_bytes());
    for s in samples {
        images.extend(s.pixels.iter().map(|p| (p * 255.0).round() as u8));
        labels.push(s.label);
    }
    (images, labels)
}

/// Draws `n` samples uniformly without replacement.
pub fn subsample(ds: &Dataset, n: usize, seed: u64) -> Result<Dataset, DataError> {
    if n == 0 || n > ds.len() {
        return Err(DataError::SubsampleRange {
            requested: n,
            available: ds.len(),
        });
    }
    let mut rng = rng_from(seed);
    let picked = rand::seq::index::sample(&mut rng, ds.len(), n);
    Dataset::new(
        picked.iter().map(|i| ds.samples[i].clone()).collect(),
        ds.split,
    )
}

/// Pixel intensities followed by the one-hot label block.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedVector(Vec<f64>);

impl AugmentedVector {
    pub fn units(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

pub fn augment(sample: &ImageSample, hide_label: bool) -> AugmentedVector {
    let mut units = Vec::with_capacity(AUGMENTED_LEN);
    units.extend_from_slice(&sample.pixels);
    units.extend(std::iter::repeat_n(0.0, CLASSES));
    if !hide_label {
        units[PIXELS + usize::from(sample.label)] = 1.0;
    }
    AugmentedVector(units)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String, DataError> {
    Ok(sha256_hex(&read_file(path)?))
}

/// Published checksums of the four uncompressed MNIST files.
pub const MNIST_SHA256: [(&str, &str); 4] = [
    (
        "train-images-idx3-ubyte",
        "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db",
    ),
    (
        "train-labels-idx1-ubyte",
        "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5",
    ),
    (
        "t10k-images-idx3-ubyte",
        "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7",
    ),
    (
        "t10k-labels-idx1-ubyte",
        "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2",
    ),
];

/// JSON record describing a loaded (and possibly subsampled) dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub images_path: String,
    pub labels_path: String,
    pub images_sha256: String,
    pub labels_sha256: String,
    pub split: Split,
    pub count: usize,
    pub label_histogram: [usize; CLASSES],
    /// Subsampling seed, absent for the full file.
    pub seed: Option<u64>,
    /// How the subset was drawn ("full" or "uniform-without-replacement").
    pub sampling: String,
}

impl DatasetManifest {
    pub fn describe(
        images_path: &Path,
        labels_path: &Path,
        ds: &Dataset,
        seed: Option<u64>,
    ) -> Result<Self, DataError> {
        Ok(Self {
            images_path: images_path.display().to_string(),
            labels_path: labels_path.display().to_string(),
            images_sha256: file_sha256(images_path)?,
            labels_sha256: file_sha256(labels_path)?,
            split: ds.split,
            count: ds.len(),
            label_histogram: ds.label_histogram(),
            seed,
            sampling: if seed.is_some() {
                "uniform-without-replacement".into()
            } else {
                "full".into()
            },
        })
    }
}
