//! Training data: the Bars-and-Stripes generator, IDX image files,
//! stochastic binarization and minibatch sampling.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ensure_enumerable, BinaryVector, DiscreteDistribution};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Largest payload a header may announce before it is treated as corrupt.
const MAX_IDX_PAYLOAD: u64 = 1 << 34;

/// `A x A` Bars-and-Stripes images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasSpec {
    pub side: usize,
}

impl BasSpec {
    pub fn new(side: usize) -> Result<Self> {
        if side == 0 {
            return Err(Error::InvalidArgument("Bars-and-Stripes side must be at least 1".into()));
        }
        Ok(Self { side })
    }

    pub fn num_visible(&self) -> usize {
        self.side * self.side
    }
}

fn bas_image(side: usize, columns: &[bool], rotate: bool) -> BinaryVector {
    let mut bits = vec![0u8; side * side];
    for r in 0..side {
        for c in 0..side {
            let black = if rotate { columns[r] } else { columns[c] };
            bits[r * side + c] = black as u8;
        }
    }
    BinaryVector::new(bits).expect("bits are binary")
}

/// Paints every column black with probability 1/2, then transposes the
/// image with probability 1/2. Black is 1; pixels are row-major.
pub fn bas_sample<R: Rng + ?Sized>(spec: &BasSpec, rng: &mut R) -> BinaryVector {
    let columns: Vec<bool> = (0..spec.side).map(|_| rng.random_bool(0.5)).collect();
    let rotate = rng.random_bool(0.5);
    bas_image(spec.side, &columns, rotate)
}

/// Exact distribution of [`bas_sample`], by enumerating all `2^(A+1)`
/// generation outcomes.
pub fn bas_exact_distribution(spec: &BasSpec) -> Result<DiscreteDistribution> {
    let m = spec.num_visible();
    ensure_enumerable(m)?;
    let mut probs = vec![0.0; 1 << m];
    let outcomes = 1usize << (spec.side + 1);
    for pattern in 0..1usize << spec.side {
        let columns: Vec<bool> = (0..spec.side).map(|c| pattern >> c & 1 == 1).collect();
        for rotate in [false, true] {
            probs[bas_image(spec.side, &columns, rotate).to_index()] += 1.0 / outcomes as f64;
        }
    }
    DiscreteDistribution::new(m, probs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Images with their grayscale originals (row-major, `rows * cols` bytes per
/// image) and, once binarized, the binary items.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataset {
    pub rows: usize,
    pub cols: usize,
    pub grayscale: Option<Vec<u8>>,
    pub items: Vec<BinaryVector>,
    pub labels: Option<Vec<u8>>,
    pub split: Split,
}

impl ImageDataset {
    pub fn num_visible(&self) -> usize {
        self.rows * self.cols
    }

    pub fn len(&self) -> usize {
        match &self.grayscale {
            Some(g) if self.num_visible() > 0 => g.len() / self.num_visible(),
            _ => self.items.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn image(&self, index: usize) -> Option<&[u8]> {
        let m = self.num_visible();
        self.grayscale
            .as_deref()
            .and_then(|g| g.get(index * m..(index + 1) * m))
    }

    /// Keeps the first `count` images.
    pub fn truncate(&mut self, count: usize) {
        let m = self.num_visible();
        if let Some(g) = &mut self.grayscale {
            g.truncate(count * m);
        }
        self.items.truncate(count);
        if let Some(l) = &mut self.labels {
            l.truncate(count);
        }
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("four bytes"))
}

/// Checks magic and header length; returns the dimension fields.
fn parse_header(bytes: &[u8], magic: u32, ndims: usize) -> Result<(Vec<u64>, usize)> {
    let header = 4 + 4 * ndims;
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            expected: header as u64,
            actual: bytes.len() as u64,
        });
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(Error::BadMagic {
            expected: magic,
            found,
        });
    }
    if bytes.len() < header {
        return Err(Error::Truncated {
            expected: header as u64,
            actual: bytes.len() as u64,
        });
    }
    let dims = (0..ndims).map(|d| be_u32(bytes, 4 + 4 * d) as u64).collect();
    Ok((dims, header))
}

fn payload_len(dims: &[u64]) -> Result<u64> {
    let total = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .filter(|&t| t <= MAX_IDX_PAYLOAD)
        .ok_or_else(|| Error::DimensionOverflow(format!("IDX dimensions {dims:?}")))?;
    Ok(total)
}

fn check_payload(bytes: &[u8], header: usize, payload: u64) -> Result<()> {
    let expected = header as u64 + payload;
    if (bytes.len() as u64) < expected {
        return Err(Error::Truncated {
            expected,
            actual: bytes.len() as u64,
        });
    }
    Ok(())
}

/// Reads an IDX image file (`0x00000803`, big-endian `count x rows x cols`),
/// gzip-compressed or not. Pixels stay grayscale; see [`binarize_stochastic`].
pub fn load_idx(path: impl AsRef<Path>) -> Result<ImageDataset> {
    let path = path.as_ref();
    let bytes = read_maybe_gz(path)?;
    let (dims, header) = parse_header(&bytes, IDX_IMAGES_MAGIC, 3)?;
    let payload = payload_len(&dims)?;
    check_payload(&bytes, header, payload)?;
    Ok(ImageDataset {
        rows: dims[1] as usize,
        cols: dims[2] as usize,
        grayscale: Some(bytes[header..header + payload as usize].to_vec()),
        items: Vec::new(),
        labels: None,
        split: Split::Train,
    })
}

/// Reads an IDX label file (`0x00000801`).
pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let bytes = read_maybe_gz(path)?;
    let (dims, header) = parse_header(&bytes, IDX_LABELS_MAGIC, 1)?;
    let payload = payload_len(&dims)?;
    check_payload(&bytes, header, payload)?;
    Ok(bytes[header..header + payload as usize].to_vec())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let gz = path.extension().is_some_and(|e| e == "gz");
    let out = if gz {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(bytes).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?
    } else {
        bytes.to_vec()
    };
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn dim_u32(what: &str, value: usize) -> Result<[u8; 4]> {
    u32::try_from(value)
        .map(u32::to_be_bytes)
        .map_err(|_| Error::DimensionOverflow(format!("{what} = {value} does not fit an IDX header")))
}

/// Writes `count = images.len() / (rows * cols)` images as IDX, gzipped
/// when the path ends in `.gz`.
pub fn write_idx(path: impl AsRef<Path>, rows: usize, cols: usize, images: &[u8]) -> Result<()> {
    let m = rows * cols;
    if m == 0 || images.len() % m != 0 {
        return Err(Error::InvalidArgument(format!(
            "{} pixel bytes do not divide into {rows}x{cols} images",
            images.len()
        )));
    }
    let mut bytes = Vec::with_capacity(16 + images.len());
    bytes.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&dim_u32("count", images.len() / m)?);
    bytes.extend_from_slice(&dim_u32("rows", rows)?);
    bytes.extend_from_slice(&dim_u32("cols", cols)?);
    bytes.extend_from_slice(images);
    write_bytes(path.as_ref(), &bytes)
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + labels.len());
    bytes.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&dim_u32("count", labels.len())?);
    bytes.extend_from_slice(labels);
    write_bytes(path.as_ref(), &bytes)
}

/// Sets each pixel to 1 with probability `intensity / 255`, independently.
pub fn binarize_stochastic<R: Rng + ?Sized>(dataset: &ImageDataset, rng: &mut R) -> Result<ImageDataset> {
    let gray = dataset
        .grayscale
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("dataset has no grayscale images to binarize".into()))?;
    let m = dataset.num_visible();
    if m == 0 {
        return Err(Error::Empty("image dimensions"));
    }
    let items = gray
        .chunks_exact(m)
        .map(|img| {
            let bits = img
                .iter()
                .map(|&x| (rng.random::<f64>() < x as f64 / 255.0) as u8)
                .collect();
            BinaryVector::new(bits).expect("bits are binary")
        })
        .collect();
    Ok(ImageDataset {
        items,
        ..dataset.clone()
    })
}

/// Endless uniform-with-replacement minibatches over `items`.
#[derive(Debug)]
pub struct MinibatchIter<'a, R> {
    items: &'a [BinaryVector],
    batch_size: usize,
    rng: R,
}

impl<R: Rng> Iterator for MinibatchIter<'_, R> {
    type Item = Vec<BinaryVector>;

    fn next(&mut self) -> Option<Self::Item> {
        Some(
            (0..self.batch_size)
                .map(|_| self.items[self.rng.random_range(0..self.items.len())].clone())
                .collect(),
        )
    }
}

pub fn minibatch_iter<R: Rng>(items: &[BinaryVector], batch_size: usize, rng: R) -> Result<MinibatchIter<'_, R>> {
    if items.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    Ok(MinibatchIter {
        items,
        batch_size,
        rng,
    })
}

/// Where minibatches come from: fresh generator draws or a fixed item list.
#[derive(Debug, Clone)]
pub enum DataSource {
    Bas(BasSpec),
    Items(Vec<BinaryVector>),
}

impl DataSource {
    pub fn num_visible(&self) -> usize {
        match self {
            DataSource::Bas(spec) => spec.num_visible(),
            DataSource::Items(items) => items.first().map_or(0, BinaryVector::len),
        }
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Result<Vec<BinaryVector>> {
        if size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        match self {
            DataSource::Bas(spec) => Ok((0..size).map(|_| bas_sample(spec, rng)).collect()),
            DataSource::Items(items) => {
                if items.is_empty() {
                    return Err(Error::Empty("dataset"));
                }
                Ok((0..size)
                    .map(|_| items[rng.random_range(0..items.len())].clone())
                    .collect())
            }
        }
    }

    /// The exact data distribution, when it is known and enumerable.
    pub fn exact_distribution(&self) -> Option<DiscreteDistribution> {
        match self {
            DataSource::Bas(spec) => bas_exact_distribution(spec).ok(),
            DataSource::Items(_) => None,
        }
    }
}
